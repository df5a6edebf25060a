use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::report::write_reports;
use super::seeds::{role, seed_schedule, sha256_hex};
use crate::data::{prepare_split, Part, RawTable, SplitDataset, SplitManifest};
use crate::density::DensityModel;
use crate::distill::{augment, generate_synthetic, SynthConfig, SyntheticSet};
use crate::evaluation::{residual_diagnostics, rmse, write_records_csv, Matrices, RunRecord};
use crate::export::write_json;
use crate::sr::{evolve, select_gpe, select_gpp, ParetoFront};
use crate::teachers::{train_mlp, train_rf, ModelKind, Predictor};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const RECORDS_FILE: &str = "records.csv";

/// Everything needed to reproduce an experiment's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    pub config: ExperimentConfig,
    pub dataset_sha256: String,
    pub runs: Vec<RunSeeds>,
    /// Paths relative to the output directory, sorted.
    pub artifacts: Vec<String>,
    /// Wall-clock timings live in their own file so that every other
    /// artifact is byte-identical across reruns.
    pub timings_file: String,
    #[serde(skip)]
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub run: usize,
    pub seeds: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub runs: Vec<RunTiming>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub run: usize,
    pub seconds: f64,
    pub stages: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        crate::export::read_json(path)
    }
}

/// Result of a completed experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub manifest: RunManifest,
    pub records: Vec<RunRecord>,
    pub matrices: Matrices,
}

/// The data stage of one run: the split, its density model and the
/// validation slice carved out of the interpolation-region training rows.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub run: usize,
    pub split: SplitDataset,
    pub density: DensityModel,
    /// Training rows used to fit every model.
    pub fit: Part,
    /// Held-out interpolation-region training rows used for gating.
    pub validation: Part,
}

#[derive(Serialize)]
struct SplitFile<'a> {
    #[serde(flatten)]
    split: SplitManifest,
    validation_idx: &'a [usize],
    log_threshold: f64,
    n_synth: usize,
}

fn cell_error(cfg: &ExperimentConfig, seed: u64, teacher: &str, student: &str) -> impl FnOnce(Error) -> Error {
    let dataset = cfg.dataset.display().to_string();
    let (teacher, student) = (teacher.to_string(), student.to_string());
    move |source| Error::Cell {
        dataset,
        seed,
        teacher,
        student,
        source: Box::new(source),
    }
}

pub fn run_seeds(cfg: &ExperimentConfig, run: usize) -> RunSeeds {
    let mut roles = vec![role::SPLIT.to_string(), role::VALIDATION.to_string()];
    for t in &cfg.teachers {
        roles.push(role::model("teacher", *t));
        roles.push(role::synth(*t));
    }
    for s in &cfg.students {
        roles.push(role::model("student", *s));
    }
    RunSeeds {
        run,
        seeds: roles.into_iter().map(|r| {
            let s = seed_schedule(cfg.seed, run, &r);
            (r, s)
        }).collect(),
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(RawTable, String)> {
    let bytes = std::fs::read(&cfg.dataset).map_err(|e| Error::io(&cfg.dataset, e))?;
    let table = crate::data::parse_csv(bytes.as_slice(), &cfg.target)?;
    Ok((table, sha256_hex(&bytes)))
}

/// Splits, fits the density model and carves the validation slice for `run`.
pub fn prepare_run(cfg: &ExperimentConfig, table: &RawTable, run: usize) -> Result<PreparedRun> {
    let seed = seed_schedule(cfg.seed, run, role::SPLIT);
    let (split, density) = prepare_split(table, cfg.kde_bandwidth, cfg.kde_percentile, cfg.test_fraction, seed)?;
    let inside: Vec<usize> = density
        .reference_scores()
        .iter()
        .enumerate()
        .filter(|(_, s)| **s >= density.log_threshold())
        .map(|(i, _)| i)
        .collect();
    if inside.len() < 2 {
        return Err(Error::TooFewRows {
            min: 2,
            found: inside.len(),
        });
    }
    let n_val = ((cfg.validation_fraction * inside.len() as f64).round() as usize).clamp(1, inside.len() - 1);
    let mut shuffled = inside;
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed_schedule(cfg.seed, run, role::VALIDATION)));
    let mut val_pos = shuffled[..n_val].to_vec();
    val_pos.sort_unstable();
    let fit_pos: Vec<usize> = (0..split.train.len())
        .filter(|p| val_pos.binary_search(p).is_err())
        .collect();
    Ok(PreparedRun {
        run,
        fit: split.train.subset(&fit_pos),
        validation: split.train.subset(&val_pos),
        split,
        density,
    })
}

/// Models of the requested kinds trained on one data set. GPp and GPe come
/// from a single evolutionary run; its front is kept for export.
struct Family {
    models: Vec<Predictor>,
    front: Option<ParetoFront>,
}

impl Family {
    fn get(&self, kind: ModelKind) -> &Predictor {
        self.models.iter().find(|m| m.kind() == kind).expect("trained for every requested kind")
    }
}

fn train_family(
    cfg: &ExperimentConfig,
    run: usize,
    prefix: &str,
    kinds: &[ModelKind],
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> std::result::Result<Family, (ModelKind, Error)> {
    let seed = |k: ModelKind| seed_schedule(cfg.seed, run, &role::model(prefix, k));
    let mut models = Vec::new();
    let mut front = None;
    for kind in ModelKind::ALL.into_iter().filter(|k| kinds.contains(k)) {
        let model = match kind {
            ModelKind::Nn => train_mlp(x, y, &cfg.mlp_config(seed(kind))).map(Predictor::Mlp),
            ModelKind::Rf => train_rf(x, y, &cfg.forest_config(seed(kind))).map(Predictor::Forest),
            ModelKind::Gpp | ModelKind::Gpe => {
                if front.is_none() {
                    front = Some(evolve(x, y, &cfg.gp_config(seed(kind))).map_err(|e| (kind, e))?);
                }
                let f = front.as_ref().expect("just evolved");
                let pick = if kind == ModelKind::Gpp { select_gpp(f) } else { select_gpe(f) };
                pick.map(|e| Predictor::Expression {
                    kind,
                    expr: e.expr.clone(),
                    n_features: x.ncols(),
                })
            }
        };
        models.push(model.map_err(|e| (kind, e))?);
    }
    Ok(Family { models, front })
}

fn optional_rmse(model: &Predictor, part: &Part) -> Result<Option<f64>> {
    if part.is_empty() {
        return Ok(None);
    }
    let pred = model.predict(part.x.view())?;
    rmse(part.y.view(), pred.view()).map(Some)
}

struct ArtifactSink {
    root: PathBuf,
    written: Vec<String>,
}

impl ArtifactSink {
    fn path(&mut self, rel: &str) -> PathBuf {
        self.written.push(rel.to_string());
        self.root.join(rel)
    }
}

struct RunOutput {
    records: Vec<RunRecord>,
    timing: RunTiming,
}

fn run_once(
    cfg: &ExperimentConfig,
    table: &RawTable,
    run: usize,
    sink: &mut ArtifactSink,
) -> Result<RunOutput> {
    let started = Instant::now();
    let mut stages = BTreeMap::new();
    let mut lap = {
        let mut last = Instant::now();
        move |name: &str, stages: &mut BTreeMap<String, f64>| {
            stages.insert(name.to_string(), last.elapsed().as_secs_f64());
            last = Instant::now();
        }
    };
    let run_seed = seed_schedule(cfg.seed, run, role::SPLIT);
    let dir = format!("runs/{run:03}");

    let prep = prepare_run(cfg, table, run).map_err(cell_error(cfg, run_seed, "-", "-"))?;
    let n_synth = cfg.n_synth.resolve(prep.split.train.len());
    write_json(
        &sink.path(&format!("{dir}/split.json")),
        &SplitFile {
            split: prep.split.manifest(),
            validation_idx: &prep.validation.indices,
            log_threshold: prep.density.log_threshold(),
            n_synth,
        },
    )?;
    lap("split", &mut stages);

    let (fx, fy) = (prep.fit.x.view(), prep.fit.y.view());
    let teachers = train_family(cfg, run, "teacher", &cfg.teachers, fx, fy)
        .map_err(|(k, e)| cell_error(cfg, run_seed, k.as_str(), "-")(e))?;
    if let Some(front) = &teachers.front {
        write_front(front, &sink.path(&format!("{dir}/teacher_front.csv")))?;
    }
    lap("teachers", &mut stages);

    let mut synth: Vec<SyntheticSet> = Vec::with_capacity(cfg.teachers.len());
    for &t in &cfg.teachers {
        let sc = SynthConfig {
            noise_sigma: cfg.synth_epsilon,
            n_synth,
            seed: seed_schedule(cfg.seed, run, &role::synth(t)),
        };
        let set = generate_synthetic(fx, &prep.density, teachers.get(t), &sc)
            .map_err(cell_error(cfg, run_seed, t.as_str(), "-"))?;
        set.write_csv(
            &sink.path(&format!("{dir}/synth_{t}.csv")),
            &prep.split.standardizer,
            &table.feature_names,
        )?;
        synth.push(set);
    }
    lap("synth", &mut stages);

    let base = train_family(cfg, run, "student", &cfg.students, fx, fy)
        .map_err(|(k, e)| cell_error(cfg, run_seed, "baseline", k.as_str())(e))?;
    lap("students_base", &mut stages);

    let augmented: Vec<Family> = cfg
        .teachers
        .par_iter()
        .zip(synth.par_iter())
        .map(|(&t, set)| {
            let (ax, ay) = augment(fx, fy, set).map_err(cell_error(cfg, run_seed, t.as_str(), "-"))?;
            train_family(cfg, run, "student", &cfg.students, ax.view(), ay.view())
                .map_err(|(k, e)| cell_error(cfg, run_seed, t.as_str(), k.as_str())(e))
        })
        .collect::<Result<_>>()?;
    lap("students_augmented", &mut stages);

    let mut records = Vec::new();
    for &s in &cfg.students {
        let b = base.get(s);
        let eval_err = |t: &str| cell_error(cfg, run_seed, t, s.as_str());
        let interp_b = optional_rmse(b, &prep.split.test_interp).map_err(eval_err("baseline"))?;
        let extrap_b = optional_rmse(b, &prep.split.test_extrap).map_err(eval_err("baseline"))?;
        let val_b = optional_rmse(b, &prep.validation).map_err(eval_err("baseline"))?;
        residual_diagnostics(b, &prep.split, &prep.density)
            .and_then(|d| d.write_csv(&sink.path(&format!("{dir}/residuals_base_{s}.csv"))))
            .map_err(eval_err("baseline"))?;
        for (&t, fam) in cfg.teachers.iter().zip(&augmented) {
            let a = fam.get(s);
            let wrap = || eval_err(t.as_str());
            records.push(RunRecord {
                run,
                run_seed,
                teacher: t,
                student: s,
                rmse_interp_base: interp_b,
                rmse_interp_aug: optional_rmse(a, &prep.split.test_interp).map_err(wrap())?,
                rmse_extrap_base: extrap_b,
                rmse_extrap_aug: optional_rmse(a, &prep.split.test_extrap).map_err(wrap())?,
                val_rmse_base: val_b,
                val_rmse_aug: optional_rmse(a, &prep.validation).map_err(wrap())?,
            });
            residual_diagnostics(a, &prep.split, &prep.density)
                .and_then(|d| d.write_csv(&sink.path(&format!("{dir}/residuals_{t}_{s}.csv"))))
                .map_err(wrap())?;
        }
    }
    lap("evaluation", &mut stages);
    Ok(RunOutput {
        records,
        timing: RunTiming {
            run,
            seconds: started.elapsed().as_secs_f64(),
            stages,
        },
    })
}

fn write_front(front: &ParetoFront, path: &Path) -> Result<()> {
    let mut w = crate::export::csv_writer(path)?;
    w.write_record(["complexity", "loss", "expression"])?;
    for (c, loss, expr) in front.to_records() {
        w.write_record([c.to_string(), crate::export::fmt_f64(loss), expr])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs the full teacher × student experiment and writes every artifact into
/// `out`. Records of completed runs are flushed to `records.csv` as they
/// finish, so a failure keeps the partial results.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let (table, digest) = load_dataset(cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut sink = ArtifactSink {
        root: out.to_path_buf(),
        written: Vec::new(),
    };
    let mut records = Vec::new();
    let mut timings = Timings::default();
    let records_path = out.join(RECORDS_FILE);
    for run in 0..cfg.runs {
        log::info!("run {}/{}", run + 1, cfg.runs);
        let output = run_once(cfg, &table, run, &mut sink)?;
        records.extend(output.records);
        timings.runs.push(output.timing);
        write_records_csv(&records, &records_path)?;
    }
    sink.written.push(RECORDS_FILE.to_string());

    let (matrices, names) = write_reports(&records, out, cfg.t_test)?;
    sink.written.extend(names);
    sink.written.push(MANIFEST_FILE.to_string());
    sink.written.sort();
    sink.written.dedup();

    timings.total_seconds = started.elapsed().as_secs_f64();
    let manifest = RunManifest {
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        dataset_sha256: digest,
        runs: (0..cfg.runs).map(|r| run_seeds(cfg, r)).collect(),
        artifacts: sink.written,
        timings_file: TIMINGS_FILE.to_string(),
        timings,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    write_json(&out.join(TIMINGS_FILE), &manifest.timings)?;
    Ok(ExperimentOutcome {
        manifest,
        records,
        matrices,
    })
}

/// Reruns the experiment recorded in a manifest, refusing if the dataset
/// bytes have changed since.
pub fn rerun_manifest(manifest_path: &Path, out: &Path) -> Result<ExperimentOutcome> {
    let manifest = RunManifest::load(manifest_path)?;
    let (_, digest) = load_dataset(&manifest.config)?;
    if digest != manifest.dataset_sha256 {
        return Err(Error::Config(format!(
            "dataset `{}` no longer matches the manifest (sha256 {digest}, recorded {})",
            manifest.config.dataset.display(),
            manifest.dataset_sha256
        )));
    }
    run_experiment(&manifest.config, out)
}

/// Data stage only: writes `runs/<run>/split.json` and the log-density of
/// every table row for each run. Returns the prepared runs.
pub fn run_split_stage(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PreparedRun>> {
    cfg.validate()?;
    let (table, _) = load_dataset(cfg)?;
    (0..cfg.runs)
        .map(|run| {
            let prep = prepare_run(cfg, &table, run)?;
            let dir = out.join(format!("runs/{run:03}"));
            write_json(
                &dir.join("split.json"),
                &SplitFile {
                    split: prep.split.manifest(),
                    validation_idx: &prep.validation.indices,
                    log_threshold: prep.density.log_threshold(),
                    n_synth: cfg.n_synth.resolve(prep.split.train.len()),
                },
            )?;
            let all = prep.split.standardizer.transform(table.rows.view())?;
            prep.density.write_scores_csv(all.view(), &dir.join("density.csv"))?;
            Ok(prep)
        })
        .collect()
}

/// Distillation only: trains the configured teachers for each run and writes
/// their synthetic sets. Returns the sets in (run, teacher) order.
pub fn run_synth_stage(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SyntheticSet>> {
    cfg.validate()?;
    let (table, _) = load_dataset(cfg)?;
    let mut sets = Vec::new();
    for run in 0..cfg.runs {
        let run_seed = seed_schedule(cfg.seed, run, role::SPLIT);
        let prep = prepare_run(cfg, &table, run).map_err(cell_error(cfg, run_seed, "-", "-"))?;
        let n_synth = cfg.n_synth.resolve(prep.split.train.len());
        let teachers = train_family(cfg, run, "teacher", &cfg.teachers, prep.fit.x.view(), prep.fit.y.view())
            .map_err(|(k, e)| cell_error(cfg, run_seed, k.as_str(), "-")(e))?;
        for &t in &cfg.teachers {
            let sc = SynthConfig {
                noise_sigma: cfg.synth_epsilon,
                n_synth,
                seed: seed_schedule(cfg.seed, run, &role::synth(t)),
            };
            let set = generate_synthetic(prep.fit.x.view(), &prep.density, teachers.get(t), &sc)
                .map_err(cell_error(cfg, run_seed, t.as_str(), "-"))?;
            set.write_csv(
                &out.join(format!("runs/{run:03}/synth_{t}.csv")),
                &prep.split.standardizer,
                &table.feature_names,
            )?;
            sets.push(set);
        }
    }
    Ok(sets)
}

/// Rebuilds the matrices, significance grids and gate decisions from a
/// stored `records.csv`.
pub fn report_from_records(records_csv: &Path, out: &Path, test: crate::evaluation::TestKind) -> Result<Matrices> {
    let file = std::fs::File::open(records_csv).map_err(|e| Error::io(records_csv, e))?;
    let records = crate::evaluation::read_records_csv(file)?;
    write_reports(&records, out, test).map(|(m, _)| m)
}
