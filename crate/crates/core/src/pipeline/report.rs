use std::collections::BTreeMap;
use std::path::Path;

use crate::evaluation::{build_matrices_with, validation_gate, Matrices, RunRecord, TestKind};
use crate::export::{csv_writer, fmt_f64, fmt_opt};
use crate::teachers::ModelKind;
use crate::{Error, Result};

/// Outcome of gating one student in one run: the baseline against the
/// augmented students of every teacher, chosen on validation RMSE.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision {
    pub run: usize,
    pub student: ModelKind,
    /// Teacher whose augmented student won, `None` for the baseline.
    pub chosen: Option<ModelKind>,
    pub val_rmse_base: f64,
    pub val_rmse_gated: f64,
    pub rmse_interp_gated: Option<f64>,
    pub rmse_extrap_gated: Option<f64>,
}

pub fn gate_decisions(records: &[RunRecord]) -> Vec<GateDecision> {
    let mut groups: BTreeMap<(usize, ModelKind), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.run, r.student)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((run, student), mut rows)| {
            rows.sort_by_key(|r| r.teacher);
            let first = rows[0];
            let base_val = first.val_rmse_base.unwrap_or(f64::NAN);
            let gated = validation_gate(
                None,
                base_val,
                rows.iter().map(|r| (Some(*r), r.val_rmse_aug.unwrap_or(f64::NAN))),
            );
            let (chosen, interp, extrap) = match gated.model {
                None => (None, first.rmse_interp_base, first.rmse_extrap_base),
                Some(r) => (Some(r.teacher), r.rmse_interp_aug, r.rmse_extrap_aug),
            };
            GateDecision {
                run,
                student,
                chosen,
                val_rmse_base: base_val,
                val_rmse_gated: gated.validation_rmse,
                rmse_interp_gated: interp,
                rmse_extrap_gated: extrap,
            }
        })
        .collect()
}

pub fn write_gate_csv(decisions: &[GateDecision], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "run",
        "student",
        "chosen",
        "val_rmse_base",
        "val_rmse_gated",
        "rmse_interp_gated",
        "rmse_extrap_gated",
    ])?;
    for d in decisions {
        w.write_record([
            d.run.to_string(),
            d.student.to_string(),
            d.chosen.map_or_else(|| "baseline".to_string(), |t| t.to_string()),
            fmt_f64(d.val_rmse_base),
            fmt_f64(d.val_rmse_gated),
            fmt_opt(d.rmse_interp_gated),
            fmt_opt(d.rmse_extrap_gated),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the matrices, significance grids and gate decisions derived from
/// `records` into `out`; returns the file names written.
pub fn write_reports(records: &[RunRecord], out: &Path, test: TestKind) -> Result<(Matrices, Vec<String>)> {
    let m = build_matrices_with(records, test)?;
    let mut names = Vec::new();
    let mut emit = |name: &str, write: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        write(&out.join(name))?;
        names.push(name.to_string());
        Ok(())
    };
    emit("diff_interp.csv", &|p| m.diff_interp.write_csv(p))?;
    emit("diff_interp.json", &|p| m.diff_interp.write_json(p))?;
    emit("diff_extrap.csv", &|p| m.diff_extrap.write_csv(p))?;
    emit("diff_extrap.json", &|p| m.diff_extrap.write_json(p))?;
    emit("sig_interp.csv", &|p| m.sig_interp.write_csv(p))?;
    emit("sig_interp.json", &|p| m.sig_interp.write_json(p))?;
    emit("sig_extrap.csv", &|p| m.sig_extrap.write_csv(p))?;
    emit("sig_extrap.json", &|p| m.sig_extrap.write_json(p))?;
    let gate = gate_decisions(records);
    emit("gate.csv", &|p| write_gate_csv(&gate, p))?;
    Ok((m, names))
}
