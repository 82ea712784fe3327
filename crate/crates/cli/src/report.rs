//! Run reports: `report.json`, `verdicts.csv`, `statistics.csv`, `plotdata.csv`.

use std::fs;
use std::path::Path;

use bmlab_core::stats::{StatRow, Verdict};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// One point of a plottable series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub f: String,
    pub statistic: String,
    pub value: f64,
}

/// Everything a run emits besides per-replica values. Contains no timestamps, so equal
/// inputs give equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub seed: u64,
    pub command: String,
    pub config: serde_json::Value,
    pub verdicts: Vec<Verdict>,
    pub details: serde_json::Value,
    pub plot_rows: Vec<PlotRow>,
}

/// Hex SHA-256 of the command, the canonical config JSON and the seed.
pub fn run_id(command: &str, config: &serde_json::Value, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(b"\n");
    h.update(config.to_string().as_bytes());
    h.update(b"\n");
    h.update(seed.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Report {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        Self {
            run_id: run_id(command, &config, seed),
            seed,
            command: command.to_string(),
            config,
            verdicts: Vec::new(),
            details: serde_json::Value::Null,
            plot_rows: Vec::new(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn plot(&mut self, n: usize, f: &str, statistic: &str, value: f64) {
        self.plot_rows.push(PlotRow { n, f: f.to_string(), statistic: statistic.to_string(), value });
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{} does not parse: {e}", path.display())))
    }

    /// `report.json` and `verdicts.csv`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut json = serde_json::to_string_pretty(self).expect("report serializes");
        json.push('\n');
        write_file(&dir.join("report.json"), json.as_bytes())?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "observed", "predicted", "rule", "pass"]).expect("in-memory csv");
        for v in &self.verdicts {
            let rule = serde_json::to_string(&v.rule).expect("rule serializes");
            w.write_record([v.name.clone(), v.observed.to_string(), v.predicted.to_string(), rule, v.pass.to_string()])
                .expect("in-memory csv");
        }
        write_file(&dir.join("verdicts.csv"), &w.into_inner().expect("in-memory csv"))
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// `replica_index,N,f,q,normalization,value`.
pub fn statistics_csv(rows: &[StatRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["replica_index", "N", "f", "q", "normalization", "value"]).expect("in-memory csv");
    for r in rows {
        w.write_record([
            r.replica_index.to_string(),
            r.n.to_string(),
            r.f.clone(),
            r.q.clone(),
            r.normalization.clone(),
            r.value.to_string(),
        ])
        .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// `N,f,statistic,value`; header only when `rows` is empty.
pub fn plot_csv(rows: &[PlotRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["N", "f", "statistic", "value"]).expect("in-memory csv");
    for r in rows {
        w.write_record([r.n.to_string(), r.f.clone(), r.statistic.clone(), r.value.to_string()])
            .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_id_depends_on_every_input() {
        let c = serde_json::json!({"a": 1});
        let base = run_id("clt", &c, 1);
        assert_eq!(base.len(), 64);
        assert_eq!(base, run_id("clt", &c, 1));
        assert_ne!(base, run_id("gff", &c, 1));
        assert_ne!(base, run_id("clt", &c, 2));
        assert_ne!(base, run_id("clt", &serde_json::json!({"a": 2}), 1));
    }

    #[test]
    fn empty_plot_is_header_only() {
        assert_eq!(plot_csv(&[]), b"N,f,statistic,value\n");
    }
}
