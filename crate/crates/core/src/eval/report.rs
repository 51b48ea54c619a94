//! Report emission: `f1_grid.csv`, `l2_trace.csv`, `latency.csv`, and a
//! `summary.json` holding the resolved config, its hash, host metadata, and
//! every result section. Emission is a pure function of the report, so
//! re-emitting identical content is byte-identical, and a full rerun from
//! the summary's embedded config reproduces the deterministic CSVs exactly.

use super::{F1Cell, L2Trace, LatencyTable};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const SUMMARY_FILE: &str = "summary.json";
pub const F1_GRID_FILE: &str = "f1_grid.csv";
pub const L2_TRACE_FILE: &str = "l2_trace.csv";
pub const LATENCY_FILE: &str = "latency.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostMeta {
    pub os: String,
    pub arch: String,
    pub workers: usize,
}

impl HostMeta {
    pub fn current() -> Self {
        HostMeta {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            workers: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub host: HostMeta,
    #[serde(default)]
    pub f1_grid: Option<Vec<F1Cell>>,
    #[serde(default)]
    pub l2_trace: Option<L2Trace>,
    #[serde(default)]
    pub latency: Option<LatencyTable>,
}

impl EvalReport {
    pub fn new(config: &RunConfig) -> Self {
        let resolved = config.resolved();
        EvalReport {
            format: "pmu-purify-summary/1".to_string(),
            config_hash: resolved.hash(),
            config: resolved,
            host: HostMeta::current(),
            f1_grid: None,
            l2_trace: None,
            latency: None,
        }
    }

    pub fn f1(&self, purifier: &str, attack: &str) -> Option<f64> {
        self.f1_grid.as_ref()?.iter().find_map(|c| {
            (c.purifier == purifier && c.attack == attack).then_some(c.f1)
        })
    }
}

/// Write every populated section plus the summary. Rejects reports with no
/// content or an empty grid.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.f1_grid.is_none() && report.l2_trace.is_none() && report.latency.is_none() {
        return Err(Error::usage("refusing to emit an empty report"));
    }
    if matches!(&report.f1_grid, Some(rows) if rows.is_empty()) {
        return Err(Error::usage("refusing to emit an empty F1 grid"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    if let Some(rows) = &report.f1_grid {
        let mut csv = String::from("purifier,attack,f1\n");
        for cell in rows {
            csv.push_str(&format!("{},{},{:.6}\n", cell.purifier, cell.attack, cell.f1));
        }
        let path = dir.join(F1_GRID_FILE);
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    if let Some(trace) = &report.l2_trace {
        let mut csv = String::from("step_label,t_index,mean_l2,std_l2,c_eps_t,c_t\n");
        for step in &trace.steps {
            let c_eps = step.c_eps_t.map(|v| v.to_string()).unwrap_or_default();
            let c_t = step.c_t.map(|v| v.to_string()).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                step.label, step.t_index, step.mean_l2, step.std_l2, c_eps, c_t
            ));
        }
        let path = dir.join(L2_TRACE_FILE);
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    if let Some(table) = &report.latency {
        let mut csv = String::from("purifier,pmu_count,mean_ms,std_ms,reps,workers\n");
        for row in &table.rows {
            csv.push_str(&format!(
                "{},{},{:.6},{:.6},{},{}\n",
                row.purifier, row.pmu_count, row.mean_ms, row.std_ms, row.reps, row.workers
            ));
        }
        let path = dir.join(LATENCY_FILE);
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::config(format!("summary serialization: {e}")))?;
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

pub fn parse_summary(path: &Path) -> Result<EvalReport> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        detail: format!("summary parse: {e}"),
    })
}

/// Load the existing summary for incremental stages, or start a fresh one.
pub fn load_or_new(dir: &Path, config: &RunConfig) -> EvalReport {
    parse_summary(&dir.join(SUMMARY_FILE)).unwrap_or_else(|_| EvalReport::new(config))
}
