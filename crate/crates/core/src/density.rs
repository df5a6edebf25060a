//! Gaussian kernel density estimation in standardized feature space.
//!
//! The estimate at `x` is the average of isotropic Gaussian kernels of width
//! `h` centred on the reference points,
//!
//! ```text
//! f(x) = 1/M * sum_j (2 pi h^2)^(-d/2) * exp(-|x - x_j|^2 / (2 h^2))
//! ```
//!
//! evaluated in log space with log-sum-exp so that far-away queries return a
//! large negative number instead of `-inf`. The extrapolation threshold is a
//! percentile of the reference points' own scores, using linear interpolation
//! between order statistics. A point is flagged when its score is strictly
//! below the threshold.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::export::{csv_writer, fmt_f64};
use crate::{Error, Result};

pub const DEFAULT_BANDWIDTH: f64 = 0.3;
pub const DEFAULT_PERCENTILE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    reference: Array2<f64>,
    bandwidth: f64,
    percentile: f64,
    log_threshold: f64,
    reference_scores: Vec<f64>,
}

/// Fits the KDE on standardized rows and computes the percentile threshold of
/// the reference points' own log-density scores.
pub fn fit_kde(x_std: ArrayView2<f64>, bandwidth: f64, percentile: f64) -> Result<DensityModel> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidBandwidth(bandwidth));
    }
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(Error::InvalidRatio {
            name: "percentile",
            value: percentile,
        });
    }
    if x_std.nrows() == 0 {
        return Err(Error::Empty("KDE reference set"));
    }
    if x_std.ncols() == 0 {
        return Err(Error::NoFeatures);
    }
    let mut model = DensityModel {
        reference: x_std.to_owned(),
        bandwidth,
        percentile,
        log_threshold: f64::NAN,
        reference_scores: Vec::new(),
    };
    model.reference_scores = model.log_density_batch(x_std)?;
    let mut sorted = model.reference_scores.clone();
    sorted.sort_by(f64::total_cmp);
    model.log_threshold = percentile_linear(&sorted, percentile);
    Ok(model)
}

/// Percentile of ascending `sorted` values by linear interpolation between the
/// order statistics at rank `p * (n - 1)`.
pub fn percentile_linear(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty slice");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

impl DensityModel {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn percentile(&self) -> f64 {
        self.percentile
    }

    pub fn log_threshold(&self) -> f64 {
        self.log_threshold
    }

    pub fn dims(&self) -> usize {
        self.reference.ncols()
    }

    pub fn n_reference(&self) -> usize {
        self.reference.nrows()
    }

    pub fn reference(&self) -> ArrayView2<'_, f64> {
        self.reference.view()
    }

    /// Log-density scores of the reference points, in reference order.
    pub fn reference_scores(&self) -> &[f64] {
        &self.reference_scores
    }

    /// Same reference set, different percentile.
    pub fn with_percentile(&self, percentile: f64) -> Result<DensityModel> {
        if !(percentile > 0.0 && percentile < 1.0) {
            return Err(Error::InvalidRatio {
                name: "percentile",
                value: percentile,
            });
        }
        let mut sorted = self.reference_scores.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(DensityModel {
            percentile,
            log_threshold: percentile_linear(&sorted, percentile),
            ..self.clone()
        })
    }

    fn log_norm(&self) -> f64 {
        let d = self.dims() as f64;
        -0.5 * d * (2.0 * PI * self.bandwidth * self.bandwidth).ln()
            - (self.n_reference() as f64).ln()
    }

    pub fn log_density(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: x.len(),
            });
        }
        Ok(self.log_density_unchecked(x))
    }

    fn log_density_unchecked(&self, x: ArrayView1<f64>) -> f64 {
        let inv_two_h2 = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let mut exponents = Vec::with_capacity(self.n_reference());
        let mut max = f64::NEG_INFINITY;
        for r in self.reference.rows() {
            let sq: f64 = r.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            let e = -sq * inv_two_h2;
            max = max.max(e);
            exponents.push(e);
        }
        let sum: f64 = exponents.iter().map(|e| (e - max).exp()).sum();
        max + sum.ln() + self.log_norm()
    }

    /// Scores every row of `x`; rows are scored in parallel.
    pub fn log_density_batch(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: x.ncols(),
            });
        }
        let rows: Vec<ArrayView1<f64>> = x.rows().into_iter().collect();
        Ok(rows
            .par_iter()
            .map(|r| self.log_density_unchecked(*r))
            .collect())
    }

    pub fn is_extrapolation(&self, x: ArrayView1<f64>) -> Result<bool> {
        Ok(self.log_density(x)? < self.log_threshold)
    }

    /// Ascending indices of the rows of `x` that fall below the threshold.
    pub fn low_density_subset(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(self
            .log_density_batch(x)?
            .into_iter()
            .enumerate()
            .filter(|(_, s)| *s < self.log_threshold)
            .map(|(i, _)| i)
            .collect())
    }

    /// Writes `index,score,flag` for each row of `x`.
    pub fn write_scores_csv(&self, x: ArrayView2<f64>, path: &Path) -> Result<()> {
        let scores = self.log_density_batch(x)?;
        let mut w = csv_writer(path)?;
        w.write_record(["index", "log_density", "extrapolation"])?;
        for (i, s) in scores.iter().enumerate() {
            let flag = if *s < self.log_threshold { "1" } else { "0" };
            w.write_record([i.to_string(), fmt_f64(*s), flag.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
