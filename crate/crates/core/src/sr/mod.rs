//! Tree-based genetic programming for symbolic regression.
//!
//! Expressions combine features, constants, `+ - * /` and `sin`/`log`. Division
//! and log are protected and every intermediate result saturates at the
//! largest finite `f64`, so evaluation of finite inputs is always finite.
//!
//! [`evolve`] runs several island populations and returns the Pareto front of
//! the best loss seen at each complexity. Two selectors pick a final model
//! from the front: [`select_gpp`] trades loss against complexity, and
//! [`select_gpe`] takes the lowest training error.

mod evolve;
mod expr;
mod pareto;

pub use evolve::{evolve, GpConfig};
pub use expr::{BinaryOp, Expression, UnaryOp, BINARY_OPS, PROTECT_EPS, UNARY_OPS};
pub use pareto::{
    gpp_index, gpp_scores, select_gpe, select_gpp, FrontEntry, ParetoFront, SCORE_LOSS_FLOOR,
};

/// Test helpers shared with the acceptance suite.
#[doc(hidden)]
pub mod testing {
    use rand::Rng;

    use super::Expression;

    pub fn random_tree<R: Rng>(rng: &mut R, depth: usize, full: bool, n_vars: usize) -> Expression {
        super::expr::random_tree(rng, depth, full, n_vars)
    }
}
