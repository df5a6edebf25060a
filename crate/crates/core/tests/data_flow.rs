//! Properties that span the data, density and distill stages.

use std::collections::HashSet;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use sr_distill::data::{load_csv, prepare_split, RawTable};
use sr_distill::distill::{augment, generate_synthetic, SynthConfig};
use sr_distill::sr::{BinaryOp, Expression};
use sr_distill::teachers::{ModelKind, Predictor};

fn table(rows: usize, cols: usize, seed: u64) -> RawTable {
    // Cheap deterministic pseudo-random values; distinct rows by construction.
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
    };
    let x = Array2::from_shape_simple_fn((rows, cols), &mut next);
    let y: Array1<f64> = x.rows().into_iter().map(|r| r.sum()).collect();
    let names = (0..cols).map(|c| format!("x{c}")).collect();
    RawTable::new(names, "y", x, y).unwrap()
}

fn sum_teacher(d: usize) -> Predictor {
    let expr = (1..d).fold(Expression::Var(0), |acc, c| Expression::binary(BinaryOp::Add, acc, Expression::Var(c)));
    Predictor::Expression { kind: ModelKind::Gpe, expr, n_features: d }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_partitions_every_row(rows in 30usize..150, cols in 1usize..5, seed in any::<u64>()) {
        let t = table(rows, cols, seed);
        let (split, density) = prepare_split(&t, 0.3, 0.1, 0.2, seed).unwrap();
        let mut all: Vec<usize> = split.train.indices.clone();
        all.extend(&split.test_interp.indices);
        all.extend(&split.test_extrap.indices);
        all.sort_unstable();
        prop_assert_eq!(all, (0..rows).collect::<Vec<_>>());
        for row in split.test_extrap.x.rows() {
            prop_assert!(density.log_density(row).unwrap() < density.log_threshold());
        }
        for row in split.test_interp.x.rows() {
            prop_assert!(density.log_density(row).unwrap() >= density.log_threshold());
        }
    }

    #[test]
    fn synthetic_rows_grow_from_low_density_bases(rows in 40usize..120, cols in 1usize..4, n in 1usize..60, seed in any::<u64>()) {
        let t = table(rows, cols, seed);
        let (split, density) = prepare_split(&t, 0.3, 0.1, 0.2, seed).unwrap();
        let train = &split.train;
        let cfg = SynthConfig { noise_sigma: 0.3, n_synth: n, seed };
        let teacher = sum_teacher(cols);
        let synth = generate_synthetic(train.x.view(), &density, &teacher, &cfg).unwrap();
        let low: HashSet<usize> = density.low_density_subset(train.x.view()).unwrap().into_iter().collect();
        prop_assert_eq!(synth.len(), n);
        prop_assert!(synth.base_indices.iter().all(|b| low.contains(b)));
        prop_assert_eq!(teacher.predict(synth.x_hat.view()).unwrap(), synth.y_hat.clone());

        let (ax, ay) = augment(train.x.view(), train.y.view(), &synth).unwrap();
        prop_assert_eq!(ax.nrows(), train.len() + n);
        prop_assert_eq!(ay.len(), train.len() + n);
        prop_assert_eq!(ax.slice(ndarray::s![..train.len(), ..]), train.x.view());
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let t = table(25, 3, 9);
    let path = dir.path().join("t.csv");
    t.write_csv(&path).unwrap();
    let back = load_csv(&path, "y").unwrap();
    assert_eq!(back.feature_names, t.feature_names);
    assert_eq!(back.rows, t.rows);
    assert_eq!(back.target, t.target);
}

#[test]
fn same_seed_same_split() {
    let t = table(80, 2, 4);
    let (a, _) = prepare_split(&t, 0.3, 0.1, 0.2, 17).unwrap();
    let (b, _) = prepare_split(&t, 0.3, 0.1, 0.2, 17).unwrap();
    assert_eq!(a.manifest(), b.manifest());
    let (c, _) = prepare_split(&t, 0.3, 0.1, 0.2, 18).unwrap();
    assert_ne!(a.manifest(), c.manifest());
}
