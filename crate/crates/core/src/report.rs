//! The versioned `report.json` document written by every command.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsReport;
use crate::error::{Error, Result};
use crate::flow::TrainReport;
use crate::io;

pub const REPORT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    GateFailed,
    Error,
}

/// A table that reproduces one figure panel (histogram, oracle curve, trace).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub n_train: usize,
    pub n_val: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_logp: f64,
}

impl From<&TrainReport> for FlowSummary {
    fn from(tr: &TrainReport) -> Self {
        Self {
            n_train: tr.n_train,
            n_val: tr.n_val,
            epochs_run: tr.epochs_run,
            best_epoch: tr.best_epoch,
            best_val_logp: tr.val_logp.get(tr.best_epoch).copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u64,
    pub command: String,
    pub model: String,
    pub scheme: Option<String>,
    pub seed: u64,
    pub status: Status,
    pub error: Option<String>,
    pub warnings: Vec<String>,
    pub stage1: Option<DiagnosticsReport>,
    pub flow: Option<FlowSummary>,
    /// Diagnostics of the final draws, including oracle comparisons and gates.
    pub result: Option<DiagnosticsReport>,
    pub comparisons: BTreeMap<String, f64>,
    pub figures: Vec<Figure>,
    /// Wall-clock seconds per stage; the only field that differs between reruns.
    pub timing: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: &str, model: &str, seed: u64) -> Self {
        Self {
            version: REPORT_VERSION,
            command: command.into(),
            model: model.into(),
            scheme: None,
            seed,
            status: Status::Ok,
            error: None,
            warnings: Vec::new(),
            stage1: None,
            flow: None,
            result: None,
            comparisons: BTreeMap::new(),
            figures: Vec::new(),
            timing: BTreeMap::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.stage1.iter().chain(&self.result).all(|d| d.passed())
    }

    pub fn failed_gates(&self) -> Vec<String> {
        self.stage1
            .iter()
            .chain(&self.result)
            .flat_map(|d| d.gates.iter().filter(|g| !g.pass))
            .map(|g| format!("{} = {:.4} (need {} {})", g.name, g.value, g.relation, g.threshold))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ctx = path.display().to_string();
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::format(ctx.clone(), Some(e.line()), e.to_string()))?;
        let found = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0);
        if found != REPORT_VERSION {
            return Err(Error::VersionMismatch {
                found,
                expected: REPORT_VERSION,
            });
        }
        serde_json::from_value(v).map_err(|e| Error::format(ctx, None, e.to_string()))
    }

    /// Writes every figure table as `<dir>/<name>.csv`.
    pub fn write_figures(&self, dir: &Path) -> Result<Vec<String>> {
        let mut written = Vec::new();
        for f in &self.figures {
            let header: Vec<&str> = f.columns.iter().map(String::as_str).collect();
            let file = format!("{}.csv", f.name);
            io::write_csv(&dir.join(&file), &header, f.rows.iter().cloned())?;
            written.push(file);
        }
        Ok(written)
    }
}
