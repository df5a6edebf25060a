use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::{DEFAULT_BANDWIDTH, DEFAULT_PERCENTILE};
use crate::distill::{auto_n_synth, DEFAULT_NOISE_SIGMA};
use crate::evaluation::TestKind;
use crate::sr::GpConfig;
use crate::teachers::{ForestConfig, MlpTrainConfig, ModelKind};
use crate::{Error, Result};

pub const DEFAULT_RUNS: usize = 30;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

/// Synthetic sample count: a fixed number, or one ninth of the training rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "NSynthRepr", into = "NSynthRepr")]
pub enum NSynth {
    #[default]
    Auto,
    Fixed(usize),
}

impl NSynth {
    pub fn resolve(self, inside: usize) -> usize {
        match self {
            NSynth::Auto => auto_n_synth(inside),
            NSynth::Fixed(n) => n,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NSynthRepr {
    Count(u64),
    Word(String),
}

impl TryFrom<NSynthRepr> for NSynth {
    type Error = String;

    fn try_from(r: NSynthRepr) -> std::result::Result<Self, String> {
        match r {
            NSynthRepr::Count(0) => Err("n_synth must be at least 1".into()),
            NSynthRepr::Count(n) => Ok(NSynth::Fixed(n as usize)),
            NSynthRepr::Word(w) if w.eq_ignore_ascii_case("auto") => Ok(NSynth::Auto),
            NSynthRepr::Word(w) => Err(format!("n_synth must be \"auto\" or a positive count, got `{w}`")),
        }
    }
}

impl From<NSynth> for NSynthRepr {
    fn from(n: NSynth) -> Self {
        match n {
            NSynth::Auto => NSynthRepr::Word("auto".into()),
            NSynth::Fixed(n) => NSynthRepr::Count(n as u64),
        }
    }
}

/// A whole experiment as one flat set of typed keys. Every model
/// hyperparameter has its own key and a default equal to the fixed setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub target: String,
    pub teachers: Vec<ModelKind>,
    pub students: Vec<ModelKind>,
    pub runs: usize,
    pub seed: u64,
    pub test_fraction: f64,
    /// Share of the interpolation-region training rows held out for gating.
    pub validation_fraction: f64,
    pub t_test: TestKind,

    pub kde_bandwidth: f64,
    pub kde_percentile: f64,
    pub synth_epsilon: f64,
    pub n_synth: NSynth,

    pub mlp_hidden: Vec<usize>,
    pub mlp_l2_alpha: f64,
    pub mlp_learning_rate: f64,
    pub mlp_max_iters: usize,
    pub mlp_beta1: f64,
    pub mlp_beta2: f64,
    pub mlp_epsilon: f64,

    pub rf_n_trees: usize,
    pub rf_max_depth: usize,
    pub rf_bootstrap: bool,

    pub gp_islands: usize,
    pub gp_population: usize,
    pub gp_generations: usize,
    pub gp_max_complexity: usize,
    pub gp_crossover_rate: f64,
    pub gp_mutation_rate: f64,
    pub gp_tournament_size: usize,
    pub gp_migration_interval: usize,
    pub gp_migration_count: usize,

    /// Not part of the recorded snapshot, so a rerun may write elsewhere.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mlp = MlpTrainConfig::default();
        let rf = ForestConfig::default();
        let gp = GpConfig::default();
        ExperimentConfig {
            dataset: PathBuf::new(),
            target: String::new(),
            teachers: ModelKind::ALL.to_vec(),
            students: ModelKind::ALL.to_vec(),
            runs: DEFAULT_RUNS,
            seed: 0,
            test_fraction: DEFAULT_TEST_FRACTION,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            t_test: TestKind::Paired,
            kde_bandwidth: DEFAULT_BANDWIDTH,
            kde_percentile: DEFAULT_PERCENTILE,
            synth_epsilon: DEFAULT_NOISE_SIGMA,
            n_synth: NSynth::Auto,
            mlp_hidden: mlp.hidden,
            mlp_l2_alpha: mlp.l2_alpha,
            mlp_learning_rate: mlp.learning_rate,
            mlp_max_iters: mlp.max_iters,
            mlp_beta1: mlp.beta1,
            mlp_beta2: mlp.beta2,
            mlp_epsilon: mlp.epsilon,
            rf_n_trees: rf.n_trees,
            rf_max_depth: rf.max_depth,
            rf_bootstrap: rf.bootstrap,
            gp_islands: gp.islands,
            gp_population: gp.population_per_island,
            gp_generations: gp.generations,
            gp_max_complexity: gp.max_complexity,
            gp_crossover_rate: gp.crossover_rate,
            gp_mutation_rate: gp.mutation_rate,
            gp_tournament_size: gp.tournament_size,
            gp_migration_interval: gp.migration_interval,
            gp_migration_count: gp.migration_count,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML file. Relative `dataset` and `output_dir` paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.dataset.is_relative() && !cfg.dataset.as_os_str().is_empty() {
            cfg.dataset = base.join(&cfg.dataset);
        }
        if let Some(out) = cfg.output_dir.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("`dataset` is required".into()));
        }
        if self.target.trim().is_empty() {
            return Err(Error::Config("`target` is required".into()));
        }
        for (name, set) in [("teachers", &self.teachers), ("students", &self.students)] {
            if set.is_empty() {
                return Err(Error::Config(format!("`{name}` must not be empty")));
            }
            let mut sorted = set.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != set.len() {
                return Err(Error::Config(format!("`{name}` lists a model twice")));
            }
        }
        if self.runs == 0 {
            return Err(Error::Config("`runs` must be at least 1".into()));
        }
        for (name, value) in [
            ("test_fraction", self.test_fraction),
            ("validation_fraction", self.validation_fraction),
            ("kde_percentile", self.kde_percentile),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(Error::InvalidRatio { name, value });
            }
        }
        if !(self.kde_bandwidth > 0.0) || !self.kde_bandwidth.is_finite() {
            return Err(Error::InvalidBandwidth(self.kde_bandwidth));
        }
        if !(self.synth_epsilon > 0.0) || !self.synth_epsilon.is_finite() {
            return Err(Error::Config(format!("synth_epsilon must be positive, got {}", self.synth_epsilon)));
        }
        self.mlp_config(0).validate()?;
        self.gp_config(0).validate()?;
        if self.rf_n_trees == 0 || self.rf_max_depth == 0 {
            return Err(Error::Config("rf_n_trees and rf_max_depth must be positive".into()));
        }
        Ok(())
    }

    pub fn mlp_config(&self, seed: u64) -> MlpTrainConfig {
        MlpTrainConfig {
            hidden: self.mlp_hidden.clone(),
            l2_alpha: self.mlp_l2_alpha,
            learning_rate: self.mlp_learning_rate,
            max_iters: self.mlp_max_iters,
            beta1: self.mlp_beta1,
            beta2: self.mlp_beta2,
            epsilon: self.mlp_epsilon,
            seed,
        }
    }

    pub fn forest_config(&self, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: self.rf_n_trees,
            max_depth: self.rf_max_depth,
            bootstrap: self.rf_bootstrap,
            seed,
        }
    }

    pub fn gp_config(&self, seed: u64) -> GpConfig {
        GpConfig {
            islands: self.gp_islands,
            population_per_island: self.gp_population,
            generations: self.gp_generations,
            max_complexity: self.gp_max_complexity,
            crossover_rate: self.gp_crossover_rate,
            mutation_rate: self.gp_mutation_rate,
            tournament_size: self.gp_tournament_size,
            migration_interval: self.gp_migration_interval,
            migration_count: self.gp_migration_count,
            seed,
            ..GpConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_fixed_settings() {
        let c = ExperimentConfig::default();
        assert_eq!((c.kde_bandwidth, c.kde_percentile, c.synth_epsilon), (0.3, 0.10, 0.3));
        assert_eq!(c.mlp_hidden, vec![150, 75]);
        assert_eq!((c.mlp_l2_alpha, c.mlp_learning_rate, c.mlp_max_iters), (0.0002, 0.01, 180));
        assert_eq!((c.rf_n_trees, c.rf_max_depth), (1000, 25));
        assert_eq!((c.gp_islands, c.gp_population, c.gp_generations), (4, 200, 100));
        assert_eq!(c.teachers, ModelKind::ALL.to_vec());
        assert_eq!(c.runs, 30);
        assert_eq!(c.n_synth, NSynth::Auto);
    }

    #[test]
    fn parses_flat_toml() {
        let c = ExperimentConfig::from_toml_str(
            r#"
            dataset = "data.csv"
            target = "y"
            teachers = ["GPe"]
            students = ["GPp", "NN"]
            runs = 3
            n_synth = 50
            gp_generations = 10
            t_test = "welch"
            output_dir = "out"
            "#,
        )
        .unwrap();
        assert_eq!(c.teachers, vec![ModelKind::Gpe]);
        assert_eq!(c.students, vec![ModelKind::Gpp, ModelKind::Nn]);
        assert_eq!(c.n_synth, NSynth::Fixed(50));
        assert_eq!(c.gp_config(7).generations, 10);
        assert_eq!(c.gp_config(7).seed, 7);
        assert_eq!(c.t_test, TestKind::Welch);
        assert_eq!(c.output_dir, Some(PathBuf::from("out")));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "dataset = \"d.csv\"\ntarget = \"y\"\nunknown_key = 1",
            "dataset = \"d.csv\"\ntarget = \"y\"\nn_synth = 0",
            "dataset = \"d.csv\"\ntarget = \"y\"\nn_synth = \"many\"",
            "dataset = \"d.csv\"\ntarget = \"y\"\nteachers = [\"SVM\"]",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
        let base = ExperimentConfig {
            dataset: "d.csv".into(),
            target: "y".into(),
            ..Default::default()
        };
        base.validate().unwrap();
        let broken = [
            ExperimentConfig { teachers: vec![], ..base.clone() },
            ExperimentConfig { students: vec![ModelKind::Nn, ModelKind::Nn], ..base.clone() },
            ExperimentConfig { runs: 0, ..base.clone() },
            ExperimentConfig { test_fraction: 1.0, ..base.clone() },
            ExperimentConfig { kde_bandwidth: 0.0, ..base.clone() },
            ExperimentConfig { synth_epsilon: -0.3, ..base.clone() },
            ExperimentConfig { target: String::new(), ..base.clone() },
        ];
        for c in broken {
            assert_eq!(c.validate().unwrap_err().class(), crate::ErrorClass::Config);
        }
    }

    #[test]
    fn snapshot_round_trips_without_output_dir() {
        let c = ExperimentConfig {
            dataset: "d.csv".into(),
            target: "y".into(),
            output_dir: Some("elsewhere".into()),
            n_synth: NSynth::Fixed(12),
            ..Default::default()
        };
        let text = c.to_toml().unwrap();
        assert!(!text.contains("elsewhere"));
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, ExperimentConfig { output_dir: None, ..c.clone() });
        let json = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.n_synth, NSynth::Fixed(12));
    }
}
