use serde::{Deserialize, Serialize};

use super::Expression;
use crate::{Error, Result};

/// Losses are floored at this value inside the GPp score.
pub const SCORE_LOSS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FrontEntry {
    pub expr: Expression,
    pub loss: f64,
    pub complexity: usize,
}

impl FrontEntry {
    pub fn new(expr: Expression, loss: f64) -> Self {
        let complexity = expr.complexity();
        FrontEntry {
            expr,
            loss,
            complexity,
        }
    }
}

/// Non-dominated (loss, complexity) entries sorted by complexity. Along the
/// list complexity strictly increases and loss strictly decreases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFront {
    entries: Vec<FrontEntry>,
}

impl ParetoFront {
    /// Keeps only the non-dominated candidates. Among equal (complexity,
    /// loss) pairs the first one seen wins. Non-finite losses are dropped.
    pub fn from_candidates(candidates: impl IntoIterator<Item = FrontEntry>) -> Self {
        let mut all: Vec<(usize, FrontEntry)> = candidates
            .into_iter()
            .filter(|e| e.loss.is_finite())
            .enumerate()
            .collect();
        all.sort_by(|(ia, a), (ib, b)| {
            a.complexity
                .cmp(&b.complexity)
                .then(a.loss.total_cmp(&b.loss))
                .then(ia.cmp(ib))
        });
        let mut entries: Vec<FrontEntry> = Vec::new();
        for (_, e) in all {
            if entries.last().is_none_or(|last| e.loss < last.loss) {
                if entries.last().is_some_and(|last| last.complexity == e.complexity) {
                    continue;
                }
                entries.push(e);
            }
        }
        ParetoFront { entries }
    }

    pub fn entries(&self) -> &[FrontEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `[(complexity, loss, expression)]` rows for JSON export.
    pub fn to_records(&self) -> Vec<(usize, f64, String)> {
        self.entries
            .iter()
            .map(|e| (e.complexity, e.loss, e.expr.to_string()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_records())?)
    }

    /// Rebuilds a front from exported records. The expressions are re-parsed
    /// and their complexity recomputed.
    pub fn from_json(text: &str) -> Result<Self> {
        let records: Vec<FrontRecord> = serde_json::from_str(text)?;
        let entries = records
            .into_iter()
            .map(|FrontRecord(_, loss, text)| Ok(FrontEntry::new(text.parse()?, loss)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_candidates(entries))
    }
}

#[derive(Serialize, Deserialize)]
struct FrontRecord(usize, f64, String);

/// Score of each entry against its simpler neighbour on the front:
/// `-ln((loss_i / loss_{i-1}) / (complexity_i - complexity_{i-1}))`.
/// The first entry has no neighbour and scores `-inf`.
pub fn gpp_scores(front: &ParetoFront) -> Vec<f64> {
    let e = front.entries();
    let mut scores = Vec::with_capacity(e.len());
    for i in 0..e.len() {
        if i == 0 {
            scores.push(f64::NEG_INFINITY);
            continue;
        }
        let ratio = e[i].loss.max(SCORE_LOSS_FLOOR) / e[i - 1].loss.max(SCORE_LOSS_FLOOR);
        let dc = (e[i].complexity - e[i - 1].complexity) as f64;
        scores.push(-(ratio / dc).ln());
    }
    scores
}

/// Index of the entry with the highest score; the earliest on ties.
pub fn gpp_index(front: &ParetoFront) -> Result<usize> {
    if front.is_empty() {
        return Err(Error::Empty("Pareto front"));
    }
    let scores = gpp_scores(front);
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Heuristic selection: best loss improvement per unit of added complexity.
pub fn select_gpp(front: &ParetoFront) -> Result<&FrontEntry> {
    Ok(&front.entries()[gpp_index(front)?])
}

/// Lowest training loss; lowest complexity on ties.
pub fn select_gpe(front: &ParetoFront) -> Result<&FrontEntry> {
    front
        .entries()
        .iter()
        .min_by(|a, b| a.loss.total_cmp(&b.loss).then(a.complexity.cmp(&b.complexity)))
        .ok_or(Error::Empty("Pareto front"))
}
