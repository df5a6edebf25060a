//! Teacher-labelled synthetic samples around the sparse training rows.
//!
//! Each synthetic input is a uniformly chosen low-density training row plus
//! isotropic Gaussian noise in standardized space; its label is the teacher's
//! prediction there. The augmented training set is the original rows followed
//! by the synthetic ones.

use std::path::Path;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Standardizer;
use crate::density::DensityModel;
use crate::export::{csv_writer, fmt_f64};
use crate::teachers::{ModelKind, Predictor};
use crate::{Error, Result};

pub const DEFAULT_NOISE_SIGMA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Noise standard deviation in standardized units.
    pub noise_sigma: f64,
    pub n_synth: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!(
                "synth noise must be positive, got {}",
                self.noise_sigma
            )));
        }
        if self.n_synth == 0 {
            return Err(Error::Config("synth count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Default synthetic count: one ninth of the interpolation (inside) rows,
/// rounded to the nearest hundred once that ninth reaches 100, otherwise to
/// the nearest integer, and never below 1.
///
/// ```
/// use sr_distill::distill::auto_n_synth;
/// assert_eq!(auto_n_synth(1671), 200);
/// assert_eq!(auto_n_synth(2700), 300);
/// assert_eq!(auto_n_synth(1439), 200);
/// assert_eq!(auto_n_synth(270), 30);
/// ```
pub fn auto_n_synth(inside: usize) -> usize {
    let ninth = inside as f64 / 9.0;
    let n = if ninth >= 100.0 {
        (ninth / 100.0).round() * 100.0
    } else {
        ninth.round()
    };
    (n as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    /// Synthetic inputs, standardized frame.
    pub x_hat: Array2<f64>,
    pub y_hat: Array1<f64>,
    /// Row of the training matrix each sample was drawn around.
    pub base_indices: Vec<usize>,
    pub teacher: ModelKind,
}

impl SyntheticSet {
    pub fn len(&self) -> usize {
        self.y_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_hat.is_empty()
    }

    pub fn empty(dims: usize, teacher: ModelKind) -> Self {
        SyntheticSet {
            x_hat: Array2::zeros((0, dims)),
            y_hat: Array1::zeros(0),
            base_indices: Vec::new(),
            teacher,
        }
    }

    /// Writes features in original units, then `y_hat`, `base_index`,
    /// `teacher`.
    pub fn write_csv(&self, path: &Path, standardizer: &Standardizer, feature_names: &[String]) -> Result<()> {
        let raw = standardizer.inverse_transform(self.x_hat.view())?;
        let mut w = csv_writer(path)?;
        let mut header: Vec<String> = feature_names.to_vec();
        header.extend(["y_hat", "base_index", "teacher"].map(String::from));
        w.write_record(&header)?;
        for (i, row) in raw.rows().into_iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            rec.push(fmt_f64(self.y_hat[i]));
            rec.push(self.base_indices[i].to_string());
            rec.push(self.teacher.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Draws `cfg.n_synth` noisy copies of low-density rows of `train_x` and labels
/// them with `teacher`. Base rows are drawn with replacement.
pub fn generate_synthetic(
    train_x: ArrayView2<f64>,
    density: &DensityModel,
    teacher: &Predictor,
    cfg: &SynthConfig,
) -> Result<SyntheticSet> {
    cfg.validate()?;
    let low = density.low_density_subset(train_x)?;
    if low.is_empty() {
        return Err(Error::EmptyLowDensity);
    }
    let d = train_x.ncols();
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x_hat = Array2::zeros((cfg.n_synth, d));
    let mut base_indices = Vec::with_capacity(cfg.n_synth);
    for mut row in x_hat.rows_mut() {
        let base = low[rng.random_range(0..low.len())];
        for (v, b) in row.iter_mut().zip(train_x.row(base)) {
            *v = b + noise.sample(&mut rng);
        }
        base_indices.push(base);
    }
    let y_hat = teacher.predict(x_hat.view())?;
    Ok(SyntheticSet {
        x_hat,
        y_hat,
        base_indices,
        teacher: teacher.kind(),
    })
}

/// Original rows followed by the synthetic rows, unweighted.
pub fn augment(x: ArrayView2<f64>, y: ArrayView1<f64>, synth: &SyntheticSet) -> Result<(Array2<f64>, Array1<f64>)> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    if synth.x_hat.ncols() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            found: synth.x_hat.ncols(),
        });
    }
    let ax = concatenate(Axis(0), &[x, synth.x_hat.view()]).expect("column counts checked");
    let ay = concatenate(Axis(0), &[y, synth.y_hat.view()]).expect("1-D");
    Ok((ax, ay))
}
