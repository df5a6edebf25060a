//! Feed-forward regressor with tanh hidden layers, trained full-batch with
//! Adam on mean squared error plus an L2 penalty on the weights.

use ndarray::{Array, Array1, Array2, ArrayView1, ArrayView2, Axis, Dimension, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpTrainConfig {
    pub hidden: Vec<usize>,
    pub l2_alpha: f64,
    pub learning_rate: f64,
    /// Full-batch epochs; there is no early stopping.
    pub max_iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        MlpTrainConfig {
            hidden: vec![150, 75],
            l2_alpha: 0.0002,
            learning_rate: 0.01,
            max_iters: 180,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl MlpTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("mlp.hidden layer sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.max_iters == 0 {
            return Err(Error::Config("mlp.learning_rate and mlp.max_iters must be positive".into()));
        }
        if !(self.l2_alpha >= 0.0) {
            return Err(Error::Config("mlp.l2_alpha must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("mlp Adam parameters out of range".into()));
        }
        Ok(())
    }
}

/// One dense layer; `weights` is `inputs × outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
}

/// Gradients with the same shapes as [`MlpModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<Dense>,
}

impl MlpModel {
    /// Glorot-uniform initialisation of weights and biases.
    pub fn init(inputs: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let mut u = || rng.random_range(-bound..bound);
                Dense {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), &mut u),
                    bias: Array1::from_shape_simple_fn(w[1], &mut u),
                }
            })
            .collect();
        MlpModel { layers }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Activations of every layer, input first. Hidden layers use tanh, the
    /// output layer is linear.
    fn activations(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.to_owned()];
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&layer.weights);
            z += &layer.bias;
            if k < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs(),
                found: x.ncols(),
            });
        }
        let out = self.activations(x).pop().expect("output layer");
        Ok(out.column(0).to_owned())
    }

    fn penalty(&self) -> f64 {
        self.layers.iter().map(|l| l.weights.iter().map(|w| w * w).sum::<f64>()).sum()
    }

    /// `mean((f(x) - y)^2) + alpha * sum(W^2)` over all weight matrices.
    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView1<f64>, alpha: f64) -> Result<f64> {
        let pred = self.forward(x)?;
        let mse = (&pred - &y).mapv(|r| r * r).mean().ok_or(Error::Empty("training batch"))?;
        Ok(mse + alpha * self.penalty())
    }

    /// Loss and its exact gradient by backpropagation.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        alpha: f64,
    ) -> Result<(f64, MlpGradients)> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs(),
                found: x.ncols(),
            });
        }
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch {
                left: x.nrows(),
                right: y.len(),
            });
        }
        if y.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let n = y.len() as f64;
        let acts = self.activations(x);
        let pred = acts.last().expect("output").column(0).to_owned();
        let resid = &pred - &y;
        let loss = resid.mapv(|r| r * r).sum() / n + alpha * self.penalty();

        let mut delta: Array2<f64> = (resid * (2.0 / n)).insert_axis(Axis(1));
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let mut gw = acts[k].t().dot(&delta);
            gw.scaled_add(2.0 * alpha, &layer.weights);
            let gb = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&layer.weights.t());
                back.zip_mut_with(&acts[k], |d, h| *d *= 1.0 - h * h);
                delta = back;
            }
            grads.push(Dense { weights: gw, bias: gb });
        }
        grads.reverse();
        Ok((loss, MlpGradients { layers: grads }))
    }

    /// All parameters flattened layer by layer, weights (row-major) before
    /// bias.
    pub fn flat_parameters(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_parameters(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.n_parameters(), "parameter count");
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = it.next().expect("counted");
            }
            for b in l.bias.iter_mut() {
                *b = it.next().expect("counted");
            }
        }
    }
}

impl MlpGradients {
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
        .collect()
}

/// Trains a fresh network on standardized inputs.
pub fn train_mlp(x: ArrayView2<f64>, y: ArrayView1<f64>, cfg: &MlpTrainConfig) -> Result<MlpModel> {
    cfg.validate()?;
    if x.nrows() < 2 {
        return Err(Error::TooFewRows { min: 2, found: x.nrows() });
    }
    let mut model = MlpModel::init(x.ncols(), &cfg.hidden, cfg.seed);
    let mut m: Vec<Dense> = model.layers.iter().map(zeros_like).collect();
    let mut v: Vec<Dense> = model.layers.iter().map(zeros_like).collect();
    for t in 1..=cfg.max_iters {
        let (loss, grads) = model.loss_and_gradients(x, y, cfg.l2_alpha)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: t });
        }
        let c1 = 1.0 - cfg.beta1.powi(t as i32);
        let c2 = 1.0 - cfg.beta2.powi(t as i32);
        let step = cfg.learning_rate * c2.sqrt() / c1;
        for (k, g) in grads.layers.iter().enumerate() {
            let layer = &mut model.layers[k];
            adam_update(&mut layer.weights, &g.weights, &mut m[k].weights, &mut v[k].weights, cfg, step);
            adam_update(&mut layer.bias, &g.bias, &mut m[k].bias, &mut v[k].bias, cfg, step);
        }
    }
    if model.flat_parameters().iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFiniteLoss { epoch: cfg.max_iters });
    }
    Ok(model)
}

fn zeros_like(l: &Dense) -> Dense {
    Dense {
        weights: Array2::zeros(l.weights.raw_dim()),
        bias: Array1::zeros(l.bias.len()),
    }
}

fn adam_update<D: Dimension>(
    params: &mut Array<f64, D>,
    grads: &Array<f64, D>,
    m: &mut Array<f64, D>,
    v: &mut Array<f64, D>,
    cfg: &MlpTrainConfig,
    step: f64,
) {
    Zip::from(params).and(grads).and(m).and(v).for_each(|p, &g, m, v| {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= step * *m / (v.sqrt() + cfg.epsilon);
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn small_cfg() -> MlpTrainConfig {
        MlpTrainConfig {
            hidden: vec![8, 4],
            ..MlpTrainConfig::default()
        }
    }

    #[test]
    fn zero_target_is_learned() {
        let x = Array::linspace(-1.0, 1.0, 50).insert_axis(Axis(1));
        let y = Array1::zeros(50);
        let m = train_mlp(x.view(), y.view(), &MlpTrainConfig::default()).unwrap();
        let p = m.forward(x.view()).unwrap();
        assert!(p.iter().all(|v| v.abs() < 1e-2), "{p}");
    }

    #[test]
    fn linear_target_fits() {
        let x = Array::linspace(-1.0, 1.0, 500).insert_axis(Axis(1));
        let y = x.column(0).mapv(|v| 2.0 * v);
        let m = train_mlp(x.view(), y.view(), &MlpTrainConfig::default()).unwrap();
        let p = m.forward(x.view()).unwrap();
        let rmse = ((&p - &y).mapv(|r| r * r).mean().unwrap()).sqrt();
        assert!(rmse < 0.05, "rmse {rmse}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_simple_fn((5, 3), || rng.sample::<f64, _>(StandardNormal));
        let y = Array1::from_shape_simple_fn(5, || rng.sample::<f64, _>(StandardNormal));
        let model = MlpModel::init(3, &[6, 5], 4);
        let alpha = 0.01;
        let (_, g) = model.loss_and_gradients(x.view(), y.view(), alpha).unwrap();
        let analytic = g.flat();
        let base = model.flat_parameters();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut probe = model.clone();
            let mut p = base.clone();
            p[i] += h;
            probe.set_flat_parameters(&p);
            let up = probe.loss(x.view(), y.view(), alpha).unwrap();
            p[i] -= 2.0 * h;
            probe.set_flat_parameters(&p);
            let down = probe.loss(x.view(), y.view(), alpha).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-5, "param {i}: {} vs {numeric}", analytic[i]);
        }
    }

    #[test]
    fn deterministic_and_dimension_checked() {
        let x = Array::linspace(-1.0, 1.0, 20).insert_axis(Axis(1));
        let y = x.column(0).mapv(f64::sin);
        let a = train_mlp(x.view(), y.view(), &small_cfg()).unwrap();
        let b = train_mlp(x.view(), y.view(), &small_cfg()).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            a.forward(Array2::zeros((2, 2)).view()),
            Err(Error::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let x = Array::linspace(-1.0, 1.0, 20).insert_axis(Axis(1));
        let y = x.column(0).mapv(|v| v * 1e300);
        let cfg = MlpTrainConfig { learning_rate: 1e200, ..small_cfg() };
        assert!(matches!(
            train_mlp(x.view(), y.view(), &cfg),
            Err(Error::NonFiniteLoss { .. })
        ));
    }
}
