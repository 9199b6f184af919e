//! CSV and text outputs.
//!
//! Floats are written in scientific notation with 17 significant digits so
//! every value parses back to the identical `f64`.

use std::path::Path;

use super::CliError;
use crate::model::Step;
use crate::sim::rng::RunKey;
use crate::sim::MomentSeries;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))
}

fn finish(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes `t,mean_norm,std_err[,bound]`.
pub fn write_moments(path: &Path, series: &MomentSeries, bound: Option<&[f64]>) -> Result<(), CliError> {
    if let Some(b) = bound {
        assert_eq!(b.len(), series.len(), "one bound value per step");
    }
    let mut w = writer(path)?;
    let io = |e: csv::Error| CliError::io(path, e);
    let mut header = vec!["t", "mean_norm", "std_err"];
    if bound.is_some() {
        header.push("bound");
    }
    w.write_record(&header).map_err(io)?;
    for i in 0..series.len() {
        let mut row = vec![series.t[i].to_string(), fmt_f64(series.mean_norm[i]), fmt_f64(series.std_err[i])];
        if let Some(b) = bound {
            row.push(fmt_f64(b[i]));
        }
        w.write_record(&row).map_err(io)?;
    }
    finish(path, w)
}

/// Writes `t,x_0..x_{n-1},v,l,xi,w_0..w_{n-1}`.
pub fn write_trajectory(path: &Path, steps: &[Step], state_dim: usize) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let io = |e: csv::Error| CliError::io(path, e);
    let mut header = vec!["t".to_string()];
    header.extend((0..state_dim).map(|i| format!("x_{i}")));
    header.extend(["v", "l", "xi"].map(String::from));
    header.extend((0..state_dim).map(|i| format!("w_{i}")));
    w.write_record(&header).map_err(io)?;
    for s in steps {
        let mut row = vec![s.t.to_string()];
        row.extend(s.x.iter().map(|&x| fmt_f64(x)));
        row.push(fmt_f64(s.v));
        row.push(u8::from(s.failed).to_string());
        row.push(fmt_f64(s.xi));
        row.extend(s.w.iter().map(|&x| fmt_f64(x)));
        w.write_record(&row).map_err(io)?;
    }
    finish(path, w)
}

/// Reads a file written by [`write_trajectory`].
pub fn read_trajectory(path: &Path) -> Result<Vec<Step>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = r.headers().map_err(|e| CliError::io(path, e))?.clone();
    let n = header.iter().filter(|h| h.starts_with("x_")).count();
    if header.len() != 2 * n + 4 {
        return Err(CliError::io(path, "unexpected trajectory header"));
    }
    let mut steps = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| CliError::io(path, e))?;
        let bad = |what: &str| CliError::io(path, format!("row {}: bad {what}", line + 2));
        let num = |i: usize| record[i].parse::<f64>().map_err(|_| bad(&header[i]));
        let t = record[0].parse::<u64>().map_err(|_| bad("t"))?;
        let x = (1..=n).map(num).collect::<Result<Vec<_>, _>>()?;
        let v = num(n + 1)?;
        let failed = match &record[n + 2] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("l")),
        };
        let xi = num(n + 3)?;
        let w = (n + 4..2 * n + 4).map(num).collect::<Result<Vec<_>, _>>()?;
        steps.push(Step { t, x, v, failed, xi, w });
    }
    Ok(steps)
}

/// Writes `run_index,base_seed,run_key` for every run of an ensemble.
pub fn write_seed_manifest(path: &Path, base_seed: u64, n_runs: usize) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let io = |e: csv::Error| CliError::io(path, e);
    w.write_record(["run_index", "base_seed", "run_key"]).map_err(io)?;
    for run in 0..n_runs as u64 {
        let key = RunKey::new(base_seed, run);
        w.write_record([run.to_string(), base_seed.to_string(), format!("{:016x}", key.raw())]).map_err(io)?;
    }
    finish(path, w)
}

/// Writes arbitrary rows under `header`.
pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let io = |e: csv::Error| CliError::io(path, e);
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    finish(path, w)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
