use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Below this magnitude a divisor or log argument counts as zero.
pub const PROTECT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Sin,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

pub const UNARY_OPS: [UnaryOp; 2] = [UnaryOp::Sin, UnaryOp::Log];
pub const BINARY_OPS: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Log => "log",
        }
    }

    /// Protected log: `ln|x|`, and 0 when `|x|` is within [`PROTECT_EPS`] of zero.
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        let v = match self {
            UnaryOp::Sin => x.sin(),
            UnaryOp::Log => {
                if x.abs() > PROTECT_EPS {
                    x.abs().ln()
                } else {
                    0.0
                }
            }
        };
        saturate(v)
    }
}

impl BinaryOp {
    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }

    /// Protected division returns 1 when the divisor is within
    /// [`PROTECT_EPS`] of zero.
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        let v = match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => {
                if b.abs() > PROTECT_EPS {
                    a / b
                } else {
                    1.0
                }
            }
        };
        saturate(v)
    }
}

/// Overflow saturates at the largest finite value. Inputs are always finite,
/// so no operator can see an infinity and NaN never arises.
#[inline]
fn saturate(v: f64) -> f64 {
    v.clamp(f64::MIN, f64::MAX)
}

/// An expression tree over features `x0, x1, …`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expression>),
    Binary(BinaryOp, Box<Expression>, Box<Expression>),
}

impl Expression {
    pub fn unary(op: UnaryOp, a: Expression) -> Self {
        Expression::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expression, b: Expression) -> Self {
        Expression::Binary(op, Box::new(a), Box::new(b))
    }

    /// Node count.
    pub fn complexity(&self) -> usize {
        match self {
            Expression::Const(_) | Expression::Var(_) => 1,
            Expression::Unary(_, a) => 1 + a.complexity(),
            Expression::Binary(_, a, b) => 1 + a.complexity() + b.complexity(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expression::Const(_) | Expression::Var(_) => 1,
            Expression::Unary(_, a) => 1 + a.depth(),
            Expression::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Largest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expression::Const(_) => None,
            Expression::Var(i) => Some(*i),
            Expression::Unary(_, a) => a.max_var(),
            Expression::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    pub fn eval_row(&self, row: &[f64]) -> f64 {
        match self {
            Expression::Const(c) => *c,
            Expression::Var(i) => row[*i],
            Expression::Unary(op, a) => op.apply(a.eval_row(row)),
            Expression::Binary(op, a, b) => op.apply(a.eval_row(row), b.eval_row(row)),
        }
    }

    /// Evaluates every row of `x`.
    pub fn eval(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if let Some(i) = self.max_var() {
            if i >= x.ncols() {
                return Err(Error::VariableOutOfRange {
                    index: i,
                    dims: x.ncols(),
                });
            }
        }
        let columns: Vec<Vec<f64>> = x.axis_iter(Axis(1)).map(|c| c.to_vec()).collect();
        Ok(Array1::from_vec(self.eval_columns(&columns, x.nrows())))
    }

    /// Column-major evaluation used by the GP inner loop. Variable indices
    /// must already be in range.
    pub(crate) fn eval_columns(&self, columns: &[Vec<f64>], n: usize) -> Vec<f64> {
        match self {
            Expression::Const(c) => vec![*c; n],
            Expression::Var(i) => columns[*i].clone(),
            Expression::Unary(op, a) => {
                let mut v = a.eval_columns(columns, n);
                for x in v.iter_mut() {
                    *x = op.apply(*x);
                }
                v
            }
            Expression::Binary(op, a, b) => {
                let mut left = a.eval_columns(columns, n);
                match b.as_ref() {
                    Expression::Const(c) => {
                        for x in left.iter_mut() {
                            *x = op.apply(*x, *c);
                        }
                    }
                    Expression::Var(i) => {
                        for (x, y) in left.iter_mut().zip(&columns[*i]) {
                            *x = op.apply(*x, *y);
                        }
                    }
                    other => {
                        let right = other.eval_columns(columns, n);
                        for (x, y) in left.iter_mut().zip(&right) {
                            *x = op.apply(*x, *y);
                        }
                    }
                }
                left
            }
        }
    }

    /// Pre-order node at `index` (0 is the root).
    pub fn node(&self, index: usize) -> Option<&Expression> {
        fn walk<'a>(e: &'a Expression, index: &mut usize) -> Option<&'a Expression> {
            if *index == 0 {
                return Some(e);
            }
            *index -= 1;
            match e {
                Expression::Const(_) | Expression::Var(_) => None,
                Expression::Unary(_, a) => walk(a, index),
                Expression::Binary(_, a, b) => walk(a, index).or_else(|| walk(b, index)),
            }
        }
        let mut i = index;
        walk(self, &mut i)
    }

    pub fn node_mut(&mut self, index: usize) -> Option<&mut Expression> {
        fn walk<'a>(e: &'a mut Expression, index: &mut usize) -> Option<&'a mut Expression> {
            if *index == 0 {
                return Some(e);
            }
            *index -= 1;
            match e {
                Expression::Const(_) | Expression::Var(_) => None,
                Expression::Unary(_, a) => walk(a, index),
                Expression::Binary(_, a, b) => {
                    let size = a.complexity();
                    if *index < size {
                        walk(a, index)
                    } else {
                        *index -= size;
                        walk(b, index)
                    }
                }
            }
        }
        let mut i = index;
        walk(self, &mut i)
    }

    /// Pre-order indices of the nodes matching `pred`.
    pub fn positions(&self, pred: impl Fn(&Expression) -> bool) -> Vec<usize> {
        fn walk(e: &Expression, next: &mut usize, pred: &dyn Fn(&Expression) -> bool, out: &mut Vec<usize>) {
            if pred(e) {
                out.push(*next);
            }
            *next += 1;
            match e {
                Expression::Const(_) | Expression::Var(_) => {}
                Expression::Unary(_, a) => walk(a, next, pred, out),
                Expression::Binary(_, a, b) => {
                    walk(a, next, pred, out);
                    walk(b, next, pred, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut 0, &pred, &mut out);
        out
    }
}

/// Random leaf: a feature, or a standard-normal constant.
pub(crate) fn random_leaf<R: Rng + ?Sized>(rng: &mut R, n_vars: usize) -> Expression {
    if rng.random::<f64>() < 0.6 {
        Expression::Var(rng.random_range(0..n_vars))
    } else {
        Expression::Const(rng.sample::<f64, _>(StandardNormal))
    }
}

/// Random tree of at most `depth` levels. `full` trees only place leaves at
/// the bottom level; otherwise ("grow") leaves may appear early.
pub(crate) fn random_tree<R: Rng + ?Sized>(rng: &mut R, depth: usize, full: bool, n_vars: usize) -> Expression {
    if depth <= 1 || (!full && rng.random::<f64>() < 0.3) {
        return random_leaf(rng, n_vars);
    }
    if rng.random::<f64>() < 0.25 {
        let op = UNARY_OPS[rng.random_range(0..UNARY_OPS.len())];
        Expression::unary(op, random_tree(rng, depth - 1, full, n_vars))
    } else {
        let op = BINARY_OPS[rng.random_range(0..BINARY_OPS.len())];
        Expression::binary(
            op,
            random_tree(rng, depth - 1, full, n_vars),
            random_tree(rng, depth - 1, full, n_vars),
        )
    }
}

/// Canonical infix form: binary nodes are fully parenthesised, constants use
/// the shortest text that parses back to the same `f64`.
impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Const(c) => write!(f, "{c:?}"),
            Expression::Var(i) => write!(f, "x{i}"),
            Expression::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expression::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

impl FromStr for Expression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut p = Parser { src: s.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("trailing input"));
        }
        Ok(e)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::ExprParse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.src.get(self.pos).is_some_and(u8::is_ascii_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expression> {
        self.skip_ws();
        match self.src.get(self.pos) {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let a = self.expr()?;
                self.skip_ws();
                let op = match self.src.get(self.pos) {
                    Some(b'+') => BinaryOp::Add,
                    Some(b'-') => BinaryOp::Sub,
                    Some(b'*') => BinaryOp::Mul,
                    Some(b'/') => BinaryOp::Div,
                    _ => return Err(self.error("expected a binary operator")),
                };
                self.pos += 1;
                let b = self.expr()?;
                self.eat(b')')?;
                Ok(Expression::binary(op, a, b))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.src.get(self.pos).is_some_and(u8::is_ascii_alphanumeric) {
                    self.pos += 1;
                }
                let word = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
                let op = match word {
                    "sin" => UnaryOp::Sin,
                    "log" => UnaryOp::Log,
                    w if w.starts_with('x') && w.len() > 1 && w[1..].bytes().all(|b| b.is_ascii_digit()) => {
                        return w[1..]
                            .parse()
                            .map(Expression::Var)
                            .map_err(|_| self.error("bad variable index"));
                    }
                    _ => {
                        self.pos = start;
                        return Err(self.error(&format!("unknown identifier `{word}`")));
                    }
                };
                self.eat(b'(')?;
                let a = self.expr()?;
                self.eat(b')')?;
                Ok(Expression::unary(op, a))
            }
            Some(_) => {
                let start = self.pos;
                if matches!(self.src.get(self.pos), Some(b'-' | b'+')) {
                    self.pos += 1;
                }
                while let Some(&c) = self.src.get(self.pos) {
                    let exp_sign = matches!(c, b'-' | b'+')
                        && matches!(self.src.get(self.pos - 1), Some(b'e' | b'E'));
                    if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Expression::Const(v)),
                    _ => {
                        self.pos = start;
                        Err(self.error("expected a finite number"))
                    }
                }
            }
        }
    }
}
