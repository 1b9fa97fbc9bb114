use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use ssmrul::train::{CycleSignal, QuantileEvalReport};

use crate::{CliError, Result};

/// Provenance record written next to every command's outputs. The
/// timestamp lives only here so artifacts stay byte-identical across reruns.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub status: String,
    pub tool_version: String,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    /// Path relative to the manifest, to SHA-256 of the file bytes.
    pub artifacts: BTreeMap<String, String>,
    pub error: Option<String>,
    pub created_unix: u64,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            command: command.to_string(),
            status: "ok".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_digest: None,
            seed: None,
            artifacts: BTreeMap::new(),
            error: None,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn record(&mut self, dir: &Path, artifacts: &[PathBuf]) -> Result<()> {
        for rel in artifacts {
            let path = dir.join(rel);
            let bytes = std::fs::read(&path).map_err(|e| CliError::from_io(&path, e))?;
            self.artifacts.insert(
                rel.to_string_lossy().into_owned(),
                hex::encode(Sha256::digest(&bytes)),
            );
        }
        Ok(())
    }

    pub fn fail(&mut self, err: &CliError) {
        self.status = "failed".into();
        self.error = Some(err.to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| CliError::from_io(path, e))
    }
}

/// Column label for a quantile level: 0.1 becomes `q10`.
fn q_label(tau: f64) -> String {
    format!("q{}", (tau * 100.0).round() as i64)
}

/// Plot data for one test cycle: `t, rul_true, pred_q10, ...`.
pub fn emit_intervals(report: &QuantileEvalReport, sig: &CycleSignal) -> String {
    let mut out = String::from("t,rul_true");
    for r in &report.rows {
        write!(out, ",pred_{}", q_label(r.tau)).unwrap();
    }
    out.push('\n');
    for t in 0..sig.rul.len() {
        write!(out, "{},{}", t, sig.rul[t]).unwrap();
        for p in &sig.preds {
            write!(out, ",{}", p[t]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// One row per model: name, parameter count, mult-adds and median-level
/// RMSE.
pub fn emit_blob_data(reports: &[QuantileEvalReport]) -> String {
    let mut out = String::from("name,param_count,mult_adds,rmse_median\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{}",
            r.model,
            r.param_count,
            r.mult_adds,
            r.median_rmse()
        )
        .unwrap();
    }
    out
}

fn all_taus(reports: &[(String, QuantileEvalReport)]) -> Vec<f64> {
    let mut taus: Vec<f64> = reports
        .iter()
        .flat_map(|(_, r)| r.rows.iter().map(|q| q.tau))
        .collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    taus
}

/// Per-quantile RMSE table, one row per labelled report.
pub fn emit_table(reports: &[(String, QuantileEvalReport)]) -> String {
    let taus = all_taus(reports);
    let mut out = String::from("model,backbone,seeds");
    for t in &taus {
        write!(out, ",quantile {t}").unwrap();
    }
    out.push('\n');
    for (label, r) in reports {
        write!(out, "{label},{},{}", r.model, r.seeds.len()).unwrap();
        for t in &taus {
            match r.row(*t) {
                Some(q) => write!(out, ",{}", q.rmse).unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Human-readable version of [`emit_table`].
pub(crate) fn render_table(reports: &[(String, QuantileEvalReport)]) -> String {
    let taus = all_taus(reports);
    let mut out = String::from("| model |");
    for t in &taus {
        write!(out, " quantile {t} |").unwrap();
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(taus.len()));
    out.push('\n');
    for (label, r) in reports {
        write!(out, "| {label} |").unwrap();
        for t in &taus {
            match r.row(*t) {
                Some(q) => write!(out, " {:.2} |", q.rmse).unwrap(),
                None => out.push_str(" |"),
            }
        }
        out.push('\n');
    }
    out
}
