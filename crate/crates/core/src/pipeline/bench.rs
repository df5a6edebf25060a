use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::RawTable;
use crate::evaluation::rmse;
use crate::sr::{evolve, select_gpe, GpConfig};
use crate::Result;

/// `n` points with `x0, x1 ~ U(-3, 3)` and the noiseless target
/// `sin(x0) + x1`.
pub fn recovery_problem(n: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Array2<f64> = Array2::from_shape_simple_fn((n, 2), || rng.random_range(-3.0..3.0));
    let y = x.map_axis(Axis(1), |r| r[0].sin() + r[1]);
    (x, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryOutcome {
    pub seed: u64,
    /// Training RMSE of the lowest-loss front member.
    pub rmse: f64,
    pub expression: String,
    pub complexity: usize,
    pub seconds: f64,
}

/// One formula-recovery attempt: evolve on [`recovery_problem`] with the GP
/// seed set to `seed`.
pub fn recovery_run(base: &GpConfig, n_points: usize, seed: u64) -> Result<RecoveryOutcome> {
    let (x, y) = recovery_problem(n_points, seed);
    let cfg = GpConfig { seed, ..base.clone() };
    let start = Instant::now();
    let front = evolve(x.view(), y.view(), &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let best = select_gpe(&front)?;
    let pred = best.expr.eval(x.view())?;
    Ok(RecoveryOutcome {
        seed,
        rmse: rmse(y.view(), pred.view())?,
        expression: best.expr.to_string(),
        complexity: best.complexity,
        seconds,
    })
}

/// Ground-truth table with Gaussian inputs, so samples thin out towards the
/// boundary: `x0, x1 ~ N(0, 1)` and `y = x0 * x1 + sin(2 x0)` plus optional
/// Gaussian noise.
pub fn boundary_sparse_table(n: usize, noise: f64, seed: u64) -> Result<RawTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Array2<f64> = Array2::from_shape_simple_fn((n, 2), || rng.sample(StandardNormal));
    let y = x.map_axis(Axis(1), |r| r[0] * r[1] + (2.0 * r[0]).sin());
    let y = y.mapv(|v| v + noise * rng.sample::<f64, _>(StandardNormal));
    RawTable::new(vec!["x0".into(), "x1".into()], "y", x, y)
}
