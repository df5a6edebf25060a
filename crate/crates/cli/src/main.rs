use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sr_distill::evaluation::{DiffMatrix, SignificanceMatrix, TestKind};
use sr_distill::pipeline::{self, ExperimentConfig, NSynth};
use sr_distill::sr::GpConfig;
use sr_distill::teachers::ModelKind;
use sr_distill::{Error, ErrorClass};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "sr-distill", version, about = "Density-targeted synthetic data for symbolic regression")]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: split, teachers, synthetic data, students, reports.
    Run {
        #[command(flatten)]
        opts: ExperimentArgs,
        /// Rerun the experiment recorded in a manifest.json.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
    /// Data stage only: splits, density scores and validation slices.
    Split {
        #[command(flatten)]
        opts: ExperimentArgs,
    },
    /// Distillation only: trains the teachers and writes their synthetic sets.
    Synth {
        #[command(flatten)]
        opts: ExperimentArgs,
    },
    /// Rebuilds matrices, significance grids and gate decisions from records.csv.
    Report {
        /// A records.csv written by `run`.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = TestArg::Paired)]
        t_test: TestArg,
    },
    /// Formula-recovery benchmark: y = sin(x0) + x1 on noiseless points.
    Recover {
        /// Number of seeded attempts.
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Seed of the first attempt; later attempts count up from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Training RMSE below which an attempt counts as recovered.
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        /// Attempts that must recover for a zero exit status.
        #[arg(long, default_value_t = 8)]
        min_recovered: usize,
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long)]
        population: Option<usize>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset CSV; overrides `dataset` in the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target column; overrides `target` in the config.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of NN,RF,GPp,GPe.
    #[arg(long, value_delimiter = ',')]
    teachers: Option<Vec<ModelKind>>,
    /// Comma-separated subset of NN,RF,GPp,GPe.
    #[arg(long, value_delimiter = ',')]
    students: Option<Vec<ModelKind>>,
    /// Synthetic samples per teacher; defaults to one ninth of the training rows.
    #[arg(long)]
    n_synth: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Paired,
    Welch,
}

impl From<TestArg> for TestKind {
    fn from(t: TestArg) -> Self {
        match t {
            TestArg::Paired => TestKind::Paired,
            TestArg::Welch => TestKind::Welch,
        }
    }
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf), Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.dataset = d.clone();
        }
        if let Some(t) = &self.target {
            cfg.target = t.clone();
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = &self.teachers {
            cfg.teachers = t.clone();
        }
        if let Some(s) = &self.students {
            cfg.students = s.clone();
        }
        if let Some(n) = self.n_synth {
            cfg.n_synth = NSynth::Fixed(n);
        }
        let out = output_dir(self.out.as_deref(), cfg.output_dir.as_deref())?;
        cfg.validate()?;
        Ok((cfg, out))
    }
}

fn output_dir(flag: Option<&Path>, configured: Option<&Path>) -> Result<PathBuf, Error> {
    flag.or(configured)
        .map(Path::to_path_buf)
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `output_dir`".into()))
}

fn print_grid(diff: &DiffMatrix, sig: &SignificanceMatrix) {
    println!("{} (teacher rows, student columns, * = p < 0.05)", diff.regime);
    print!("{:>8}", "");
    for s in &diff.students {
        print!("{:>12}", s.as_str());
    }
    println!();
    for (ti, t) in diff.teachers.iter().enumerate() {
        print!("{:>8}", t.as_str());
        for si in 0..diff.students.len() {
            let cell = match diff.values[ti][si] {
                Some(v) => format!("{v:+.2}%{}", if sig.significant[ti][si] { "*" } else { " " }),
                None => "n/a ".to_string(),
            };
            print!("{cell:>12}");
        }
        println!();
    }
}

fn execute(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Run { opts, manifest } => {
            let outcome = match manifest {
                Some(path) => {
                    let out = opts
                        .out
                        .clone()
                        .ok_or_else(|| Error::Config("--manifest needs --out".into()))?;
                    pipeline::rerun_manifest(&path, &out)?
                }
                None => {
                    let (cfg, out) = opts.resolve()?;
                    pipeline::run_experiment(&cfg, &out)?
                }
            };
            let m = &outcome.matrices;
            print_grid(&m.diff_interp, &m.sig_interp);
            println!();
            print_grid(&m.diff_extrap, &m.sig_extrap);
            println!(
                "\n{} records, {} artifacts, {:.1}s",
                outcome.records.len(),
                outcome.manifest.artifacts.len(),
                outcome.manifest.timings.total_seconds
            );
        }
        Command::Split { opts } => {
            let (cfg, out) = opts.resolve()?;
            for prep in pipeline::run_split_stage(&cfg, &out)? {
                println!(
                    "run {}: {} fit, {} validation, {} interpolation test, {} extrapolation test rows",
                    prep.run,
                    prep.fit.len(),
                    prep.validation.len(),
                    prep.split.test_interp.len(),
                    prep.split.test_extrap.len()
                );
            }
        }
        Command::Synth { opts } => {
            let (cfg, out) = opts.resolve()?;
            let sets = pipeline::run_synth_stage(&cfg, &out)?;
            for (i, set) in sets.iter().enumerate() {
                println!("run {}: {} synthetic rows from {}", i / cfg.teachers.len(), set.len(), set.teacher);
            }
        }
        Command::Report { records, out, t_test } => {
            let m = pipeline::report_from_records(&records, &out, t_test.into())?;
            print_grid(&m.diff_interp, &m.sig_interp);
            println!();
            print_grid(&m.diff_extrap, &m.sig_extrap);
        }
        Command::Recover {
            runs,
            seed,
            points,
            tolerance,
            min_recovered,
            generations,
            population,
        } => {
            let defaults = GpConfig::default();
            let cfg = GpConfig {
                generations: generations.unwrap_or(defaults.generations),
                population_per_island: population.unwrap_or(defaults.population_per_island),
                ..defaults
            };
            cfg.validate()?;
            let mut recovered = 0;
            for s in seed..seed + runs as u64 {
                let o = pipeline::recovery_run(&cfg, points, s)?;
                let ok = o.rmse < tolerance;
                recovered += usize::from(ok);
                println!(
                    "seed {s}: rmse {:.3e} {} {:.2}s {}",
                    o.rmse,
                    if ok { "recovered" } else { "missed" },
                    o.seconds,
                    o.expression
                );
            }
            println!("{recovered}/{runs} recovered");
            if recovered < min_recovered {
                return Ok(ExitCode::from(EXIT_NUMERIC));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(match e.class() {
                ErrorClass::Config => EXIT_CONFIG,
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numeric => EXIT_NUMERIC,
            })
        }
    }
}
