use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HmcConfig;
use crate::error::{Error, Result};
use crate::io;

/// Post-warmup draws of one chain, in the model's native (constrained) space.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub names: Vec<String>,
    pub draws: Vec<Vec<f64>>,
    pub logp: Vec<f64>,
    pub stats: ChainStats,
}

/// Sampler statistics written next to the chain CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub accept_rate: f64,
    pub step_size: f64,
    pub mass_diag: Vec<f64>,
    pub divergences: usize,
    pub warmup_divergences: usize,
    /// Gradient evaluations over warmup and sampling.
    pub grad_evals: u64,
    pub seed: u64,
    pub config: HmcConfig,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.names.iter().position(|n| n == name).map(|j| self.column(j))
    }

    /// Writes `<stem>.csv` (parameter columns then `logp`) and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.push("logp");
        io::write_csv(
            &dir.join(format!("{stem}.csv")),
            &header,
            self.draws.iter().zip(&self.logp).map(|(d, lp)| {
                let mut row = d.clone();
                row.push(*lp);
                row
            }),
        )?;
        io::write_json(&dir.join(format!("{stem}.json")), &self.stats)
    }

    /// Reads a chain written by [`Chain::write`]; the sidecar must sit next to the CSV.
    pub fn read(csv_path: &Path) -> Result<Self> {
        let table = io::read_csv(csv_path)?;
        let lp_col = table
            .header
            .iter()
            .position(|h| h == "logp")
            .ok_or_else(|| Error::format(csv_path.display().to_string(), Some(1), "missing `logp` column"))?;
        let names: Vec<String> = table.header.iter().filter(|h| *h != "logp").cloned().collect();
        let mut draws = Vec::with_capacity(table.rows.len());
        let mut logp = Vec::with_capacity(table.rows.len());
        for row in table.rows {
            logp.push(row[lp_col]);
            draws.push(row.into_iter().enumerate().filter(|(j, _)| *j != lp_col).map(|(_, v)| v).collect());
        }
        let side = csv_path.with_extension("json");
        let text = std::fs::read_to_string(&side)?;
        let stats: ChainStats = serde_json::from_str(&text)
            .map_err(|e| Error::format(side.display().to_string(), Some(e.line()), e.to_string()))?;
        Ok(Self {
            names,
            draws,
            logp,
            stats,
        })
    }
}
