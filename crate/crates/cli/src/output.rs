use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cbo_core::{Ensemble, McResult, Traj};
use serde::Serialize;

use crate::CliError;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Full, normalized command; `cbo-lab replay` re-runs it.
    pub config: serde_json::Value,
    pub version: String,
    pub seed: u64,
    pub start_unix_s: f64,
    pub end_unix_s: f64,
    pub outputs: Vec<PathBuf>,
    pub diverged: bool,
    pub warnings: Vec<String>,
    pub summary: serde_json::Value,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(BufWriter::new(file))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn header(prefix: &str, dim: usize, col: &str) -> String {
    let mut h = prefix.to_string();
    for d in 0..dim {
        h.push_str(&format!(",{col}_{d}"));
    }
    h
}

/// `step,time,v,e_norm,best_f,consensus_0..consensus_{D-1}`
pub fn write_trajectory(path: &Path, traj: &Traj, dim: usize) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(
        w,
        "{}",
        header("step,time,v,e_norm,best_f", dim, "consensus")
    )
    .map_err(io)?;
    let s = &traj.diagnostics;
    for k in 0..traj.len() {
        write!(
            w,
            "{k},{},{},{},{}",
            fmt_f(traj.times[k]),
            fmt_f(s.v_series[k]),
            fmt_f(s.e_norm_series[k]),
            fmt_f(s.best_f_series[k])
        )
        .map_err(io)?;
        for &c in &s.consensus_series[k] {
            write!(w, ",{}", fmt_f(c)).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    finish(w, path)
}

/// `step,agent,coord_0..coord_{D-1}`
pub fn write_snapshots(
    path: &Path,
    snaps: &[(usize, Ensemble)],
    dim: usize,
) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "{}", header("step,agent", dim, "coord")).map_err(io)?;
    for (k, ens) in snaps {
        for (n, row) in ens.agents().enumerate() {
            write!(w, "{k},{n}").map_err(io)?;
            for &x in row {
                write!(w, ",{}", fmt_f(x)).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
    }
    finish(w, path)
}

/// `step,time,mean_v,stderr_v`
pub fn write_mc_mean(path: &Path, res: &McResult<f64>) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "step,time,mean_v,stderr_v").map_err(io)?;
    for k in 0..res.times.len() {
        writeln!(
            w,
            "{k},{},{},{}",
            fmt_f(res.times[k]),
            fmt_f(res.mean_v[k]),
            fmt_f(res.stderr_v[k])
        )
        .map_err(io)?;
    }
    finish(w, path)
}

/// `param_value,step,time,mean_v`
pub fn write_sweep(path: &Path, rows: &[(f64, McResult<f64>)]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "param_value,step,time,mean_v").map_err(io)?;
    for (value, res) in rows {
        for k in 0..res.times.len() {
            writeln!(
                w,
                "{},{k},{},{}",
                fmt_f(*value),
                fmt_f(res.times[k]),
                fmt_f(res.mean_v[k])
            )
            .map_err(io)?;
        }
    }
    finish(w, path)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| CliError::io(path, e))?;
    finish(w, path)
}
