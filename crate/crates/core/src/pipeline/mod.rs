//! Experiment orchestration: configuration, the seed schedule, the
//! end-to-end runner and the artifacts it writes.
//!
//! Per run the runner splits the data, fits the density model on the training
//! rows, holds out a validation slice of interpolation-region training rows,
//! trains each teacher once, generates one synthetic set per teacher, trains
//! every student on the original rows and once per teacher on the augmented
//! rows, and scores all of them on the same test and validation rows.

mod bench;
mod config;
mod report;
mod run;
mod seeds;

pub use bench::{boundary_sparse_table, recovery_problem, recovery_run, RecoveryOutcome};
pub use config::{ExperimentConfig, NSynth, DEFAULT_RUNS, DEFAULT_TEST_FRACTION, DEFAULT_VALIDATION_FRACTION};
pub use report::{gate_decisions, write_gate_csv, write_reports, GateDecision};
pub use run::{
    load_dataset, prepare_run, report_from_records, rerun_manifest, run_experiment, run_seeds, run_split_stage,
    run_synth_stage, ExperimentOutcome, PreparedRun, RunManifest, RunSeeds, RunTiming, Timings, MANIFEST_FILE,
    RECORDS_FILE, TIMINGS_FILE,
};
pub use seeds::{role, seed_schedule, sha256_hex};
