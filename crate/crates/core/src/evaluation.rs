//! Error metrics, relative RMSE change, one-sided significance tests, the
//! teacher × student result matrices, validation gating and residual
//! diagnostics.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use ndarray::{ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::SplitDataset;
use crate::density::DensityModel;
use crate::export::{csv_writer, fmt_f64, fmt_opt, parse_opt, write_json};
use crate::teachers::{ModelKind, Predictor};
use crate::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

pub fn rmse(y_true: ArrayView1<f64>, y_pred: ArrayView1<f64>) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::Empty("RMSE input"));
    }
    let sse: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y_true.len() as f64).sqrt())
}

/// Relative RMSE change in percent, positive when the augmented model is
/// better. `None` when the baseline RMSE is zero (or not a valid RMSE).
pub fn perf_diff(rmse_base: f64, rmse_aug: f64) -> Option<f64> {
    if !(rmse_base > 0.0) || !rmse_base.is_finite() || !rmse_aug.is_finite() {
        return None;
    }
    Some((rmse_base - rmse_aug) / rmse_base * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub n: usize,
    pub mean: f64,
    pub t: f64,
    pub p_value: f64,
    /// Zero variance (or fewer than two runs); `p_value` is then 0 or 1.
    pub degenerate: bool,
}

impl TTest {
    pub fn significant(&self) -> bool {
        self.p_value < SIGNIFICANCE_LEVEL
    }
}

/// Paired one-sided t-test on per-run differences `rmse_base - rmse_aug`.
/// The alternative is a positive mean (the augmented model is better); `p` is
/// the upper tail of Student's t with `n - 1` degrees of freedom.
pub fn one_sided_t_test(diffs: &[f64]) -> Result<TTest> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::TooFewRows { min: 2, found: n });
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Config("t-test input contains a non-finite difference".into()));
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let constant = diffs.iter().all(|d| *d == diffs[0]);
    if constant || !(var > 0.0) {
        let mean = diffs[0];
        return Ok(TTest {
            n,
            mean,
            t: if mean > 0.0 { f64::INFINITY } else if mean < 0.0 { f64::NEG_INFINITY } else { 0.0 },
            p_value: if mean > 0.0 { 0.0 } else { 1.0 },
            degenerate: true,
        });
    }
    let t = mean / (var / nf).sqrt();
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| Error::Config(e.to_string()))?;
    Ok(TTest {
        n,
        mean,
        t,
        p_value: dist.sf(t).clamp(0.0, 1.0),
        degenerate: false,
    })
}

/// Which two-sample design the significance grids use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    /// Per-run differences, pairing base and augmented models by run seed.
    #[default]
    Paired,
    /// Unequal-variance two-sample test that ignores the pairing.
    Welch,
}

/// One-sided Welch test of `mean(base) > mean(aug)` with
/// Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(base: &[f64], aug: &[f64]) -> Result<TTest> {
    let (n1, n2) = (base.len(), aug.len());
    if n1 < 2 || n2 < 2 {
        return Err(Error::TooFewRows { min: 2, found: n1.min(n2) });
    }
    if base.iter().chain(aug).any(|v| !v.is_finite()) {
        return Err(Error::Config("t-test input contains a non-finite RMSE".into()));
    }
    let moments = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n)
    };
    let (m1, s1) = moments(base);
    let (m2, s2) = moments(aug);
    let mean = m1 - m2;
    let se2 = s1 + s2;
    if !(se2 > 0.0) {
        return Ok(TTest {
            n: n1.min(n2),
            mean,
            t: if mean > 0.0 { f64::INFINITY } else if mean < 0.0 { f64::NEG_INFINITY } else { 0.0 },
            p_value: if mean > 0.0 { 0.0 } else { 1.0 },
            degenerate: true,
        });
    }
    let t = mean / se2.sqrt();
    let dof = se2 * se2 / (s1 * s1 / (n1 as f64 - 1.0) + s2 * s2 / (n2 as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Config(e.to_string()))?;
    Ok(TTest {
        n: n1.min(n2),
        mean,
        t,
        p_value: dist.sf(t).clamp(0.0, 1.0),
        degenerate: false,
    })
}

/// Test-set region a metric refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Interpolation,
    Extrapolation,
}

impl Regime {
    pub fn short(self) -> &'static str {
        match self {
            Regime::Interpolation => "interp",
            Regime::Extrapolation => "extrap",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Interpolation => "interpolation",
            Regime::Extrapolation => "extrapolation",
        })
    }
}

/// One (run, teacher, student) outcome: the student trained without and with
/// the teacher's synthetic rows, scored on the same test rows. RMSEs are
/// `None` when the corresponding test partition is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub run_seed: u64,
    pub teacher: ModelKind,
    pub student: ModelKind,
    pub rmse_interp_base: Option<f64>,
    pub rmse_interp_aug: Option<f64>,
    pub rmse_extrap_base: Option<f64>,
    pub rmse_extrap_aug: Option<f64>,
    pub val_rmse_base: Option<f64>,
    pub val_rmse_aug: Option<f64>,
}

impl RunRecord {
    pub fn pair(&self, regime: Regime) -> Option<(f64, f64)> {
        match regime {
            Regime::Interpolation => self.rmse_interp_base.zip(self.rmse_interp_aug),
            Regime::Extrapolation => self.rmse_extrap_base.zip(self.rmse_extrap_aug),
        }
    }
}

const RECORD_HEADER: [&str; 10] = [
    "run",
    "run_seed",
    "teacher",
    "student",
    "rmse_interp_base",
    "rmse_interp_aug",
    "rmse_extrap_base",
    "rmse_extrap_aug",
    "val_rmse_base",
    "val_rmse_aug",
];

pub fn write_records_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.run.to_string(),
            r.run_seed.to_string(),
            r.teacher.to_string(),
            r.student.to_string(),
            fmt_opt(r.rmse_interp_base),
            fmt_opt(r.rmse_interp_aug),
            fmt_opt(r.rmse_extrap_base),
            fmt_opt(r.rmse_extrap_aug),
            fmt_opt(r.val_rmse_base),
            fmt_opt(r.val_rmse_aug),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RECORD_HEADER {
        return Err(Error::Config(format!("unexpected records header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let int = |i: usize| {
            rec[i]
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad integer `{}` in records", &rec[i])))
        };
        out.push(RunRecord {
            run: int(0)? as usize,
            run_seed: int(1)?,
            teacher: rec[2].parse()?,
            student: rec[3].parse()?,
            rmse_interp_base: parse_opt(&rec[4])?,
            rmse_interp_aug: parse_opt(&rec[5])?,
            rmse_extrap_base: parse_opt(&rec[6])?,
            rmse_extrap_aug: parse_opt(&rec[7])?,
            val_rmse_base: parse_opt(&rec[8])?,
            val_rmse_aug: parse_opt(&rec[9])?,
        });
    }
    Ok(out)
}

/// Mean relative RMSE change per (teacher row, student column).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffMatrix {
    pub regime: Regime,
    pub teachers: Vec<ModelKind>,
    pub students: Vec<ModelKind>,
    /// `values[t][s]`; `None` when no run produced a defined difference.
    pub values: Vec<Vec<Option<f64>>>,
    /// Runs contributing to each cell.
    pub runs: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceMatrix {
    pub regime: Regime,
    pub teachers: Vec<ModelKind>,
    pub students: Vec<ModelKind>,
    pub p_values: Vec<Vec<Option<f64>>>,
    pub significant: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrices {
    pub diff_interp: DiffMatrix,
    pub diff_extrap: DiffMatrix,
    pub sig_interp: SignificanceMatrix,
    pub sig_extrap: SignificanceMatrix,
}

/// Aggregates run records into the two difference matrices and the two
/// significance matrices. Every present (teacher, student) cell must hold the
/// same number of runs. Rows and columns follow [`ModelKind::ALL`] order,
/// restricted to the kinds that appear. Significance uses the paired test.
pub fn build_matrices(records: &[RunRecord]) -> Result<Matrices> {
    build_matrices_with(records, TestKind::Paired)
}

pub fn build_matrices_with(records: &[RunRecord], test: TestKind) -> Result<Matrices> {
    if records.is_empty() {
        return Err(Error::Empty("run records"));
    }
    let mut cells: BTreeMap<(ModelKind, ModelKind), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.teacher, r.student)).or_default().push(r);
    }
    let teachers: Vec<ModelKind> = ModelKind::ALL
        .into_iter()
        .filter(|t| cells.keys().any(|(ct, _)| ct == t))
        .collect();
    let students: Vec<ModelKind> = ModelKind::ALL
        .into_iter()
        .filter(|s| cells.keys().any(|(_, cs)| cs == s))
        .collect();
    let counts: Vec<String> = cells
        .iter()
        .map(|((t, s), v)| format!("{t}->{s}: {}", v.len()))
        .collect();
    let first = cells.values().next().map(Vec::len).unwrap_or(0);
    if cells.values().any(|v| v.len() != first) || cells.len() != teachers.len() * students.len() {
        return Err(Error::RaggedCells(counts.join(", ")));
    }

    let build = |regime: Regime| -> (DiffMatrix, SignificanceMatrix) {
        let mut values = vec![vec![None; students.len()]; teachers.len()];
        let mut runs = vec![vec![0; students.len()]; teachers.len()];
        let mut p_values = vec![vec![None; students.len()]; teachers.len()];
        let mut significant = vec![vec![false; students.len()]; teachers.len()];
        for (ti, t) in teachers.iter().enumerate() {
            for (si, s) in students.iter().enumerate() {
                let mut sorted = cells[&(*t, *s)].clone();
                sorted.sort_by_key(|r| r.run);
                let pairs: Vec<(f64, f64)> = sorted.iter().filter_map(|r| r.pair(regime)).collect();
                let pct: Vec<f64> = pairs.iter().filter_map(|&(b, a)| perf_diff(b, a)).collect();
                runs[ti][si] = pct.len();
                if !pct.is_empty() {
                    values[ti][si] = Some(pct.iter().sum::<f64>() / pct.len() as f64);
                }
                let outcome = match test {
                    TestKind::Paired => {
                        let diffs: Vec<f64> = pairs.iter().map(|&(b, a)| b - a).collect();
                        one_sided_t_test(&diffs)
                    }
                    TestKind::Welch => {
                        let (base, aug): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
                        welch_t_test(&base, &aug)
                    }
                };
                let p = match outcome {
                    Ok(t) => Some(t.p_value),
                    // A single run cannot show significance.
                    Err(_) if pairs.len() == 1 => Some(1.0),
                    Err(_) => None,
                };
                significant[ti][si] = p.is_some_and(|p| p < SIGNIFICANCE_LEVEL);
                p_values[ti][si] = p;
            }
        }
        (
            DiffMatrix {
                regime,
                teachers: teachers.clone(),
                students: students.clone(),
                values,
                runs,
            },
            SignificanceMatrix {
                regime,
                teachers: teachers.clone(),
                students: students.clone(),
                p_values,
                significant,
            },
        )
    };
    let (diff_interp, sig_interp) = build(Regime::Interpolation);
    let (diff_extrap, sig_extrap) = build(Regime::Extrapolation);
    Ok(Matrices {
        diff_interp,
        diff_extrap,
        sig_interp,
        sig_extrap,
    })
}

fn write_grid(
    path: &Path,
    teachers: &[ModelKind],
    students: &[ModelKind],
    cell: impl Fn(usize, usize) -> String,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["teacher\\student".to_string()];
    header.extend(students.iter().map(ToString::to_string));
    w.write_record(&header)?;
    for (ti, t) in teachers.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend((0..students.len()).map(|si| cell(ti, si)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl DiffMatrix {
    pub fn get(&self, teacher: ModelKind, student: ModelKind) -> Option<f64> {
        let t = self.teachers.iter().position(|k| *k == teacher)?;
        let s = self.students.iter().position(|k| *k == student)?;
        self.values[t][s]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_grid(path, &self.teachers, &self.students, |t, s| fmt_opt(self.values[t][s]))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

impl SignificanceMatrix {
    pub fn get(&self, teacher: ModelKind, student: ModelKind) -> Option<(Option<f64>, bool)> {
        let t = self.teachers.iter().position(|k| *k == teacher)?;
        let s = self.students.iter().position(|k| *k == student)?;
        Some((self.p_values[t][s], self.significant[t][s]))
    }

    /// Grid of p-values; the JSON form also carries the booleans.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_grid(path, &self.teachers, &self.students, |t, s| fmt_opt(self.p_values[t][s]))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Counts of improved and significantly improved cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub cells: usize,
    pub positive: usize,
    pub significant_positive: usize,
}

impl std::ops::Add for Tally {
    type Output = Tally;

    fn add(self, o: Tally) -> Tally {
        Tally {
            cells: self.cells + o.cells,
            positive: self.positive + o.positive,
            significant_positive: self.significant_positive + o.significant_positive,
        }
    }
}

/// Tallies one regime. A cell counts as positive when its mean difference is
/// above zero, and as significant-positive when it is also significant.
pub fn tally(diff: &DiffMatrix, sig: &SignificanceMatrix) -> Tally {
    let mut out = Tally::default();
    for t in 0..diff.teachers.len() {
        for s in 0..diff.students.len() {
            out.cells += 1;
            if diff.values[t][s].is_some_and(|v| v > 0.0) {
                out.positive += 1;
                if sig.significant[t][s] {
                    out.significant_positive += 1;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gated<T> {
    pub model: T,
    pub validation_rmse: f64,
    /// Position among the augmented candidates, `None` for the baseline.
    pub augmented_index: Option<usize>,
}

/// Picks the candidate with the lowest validation RMSE. The baseline wins
/// ties, and among augmented candidates the earliest wins.
pub fn validation_gate<T>(
    baseline: T,
    baseline_rmse: f64,
    augmented: impl IntoIterator<Item = (T, f64)>,
) -> Gated<T> {
    let mut best = Gated {
        model: baseline,
        validation_rmse: baseline_rmse,
        augmented_index: None,
    };
    for (i, (model, rmse)) in augmented.into_iter().enumerate() {
        if rmse < best.validation_rmse || (best.validation_rmse.is_nan() && !rmse.is_nan()) {
            best = Gated {
                model,
                validation_rmse: rmse,
                augmented_index: Some(i),
            };
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Interp,
    Extrap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPoint {
    /// Row index in the source table.
    pub index: usize,
    pub partition: Partition,
    pub abs_residual: f64,
    pub log_density: f64,
    pub centroid_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDiagnostics {
    pub points: Vec<ResidualPoint>,
}

/// Absolute residual, training-KDE log-density and distance to the training
/// centroid for every test row (interpolation rows first).
pub fn residual_diagnostics(
    model: &Predictor,
    split: &SplitDataset,
    density: &DensityModel,
) -> Result<ResidualDiagnostics> {
    let centroid = split
        .train
        .x
        .mean_axis(Axis(0))
        .ok_or(Error::Empty("training rows"))?;
    let mut points = Vec::new();
    for (part, label) in [
        (&split.test_interp, Partition::Interp),
        (&split.test_extrap, Partition::Extrap),
    ] {
        if part.is_empty() {
            continue;
        }
        let pred = model.predict(part.x.view())?;
        let dens = density.log_density_batch(part.x.view())?;
        for (i, row) in part.x.rows().into_iter().enumerate() {
            let dist = row
                .iter()
                .zip(centroid.iter())
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
                .sqrt();
            points.push(ResidualPoint {
                index: part.indices[i],
                partition: label,
                abs_residual: (part.y[i] - pred[i]).abs(),
                log_density: dens[i],
                centroid_distance: dist,
            });
        }
    }
    Ok(ResidualDiagnostics { points })
}

impl ResidualDiagnostics {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["index", "partition", "abs_residual", "log_density", "centroid_distance"])?;
        for p in &self.points {
            w.write_record([
                p.index.to_string(),
                match p.partition {
                    Partition::Interp => "interp",
                    Partition::Extrap => "extrap",
                }
                .to_string(),
                fmt_f64(p.abs_residual),
                fmt_f64(p.log_density),
                fmt_f64(p.centroid_distance),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
