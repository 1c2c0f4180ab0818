//! Parameter sweeps with crash-safe incremental CSV output.

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::config::{parse_number, RunConfig};
use super::runner::run_single;

/// Exact CSV column order for run and sweep outputs.
pub const CSV_HEADER: &str =
    "axis_value,v_mod,t_ch,v_en,xi_a_msnu,i_ab,chi_be,skr_bps,skr_raw,n_symbols,n_copies,status";

/// Sweepable parameter axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NDac,
    RhoDb,
    LinewidthHz,
    DistanceKm,
    MafM,
    DeltaF,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "n_dac" => Ok(SweepAxis::NDac),
            "rho_db" => Ok(SweepAxis::RhoDb),
            "linewidth_hz" | "linewidth" => Ok(SweepAxis::LinewidthHz),
            "distance_km" => Ok(SweepAxis::DistanceKm),
            "maf_m" | "maf" => Ok(SweepAxis::MafM),
            "delta_f" => Ok(SweepAxis::DeltaF),
            other => Err(Error::config(format!(
                "axis must be one of n_dac|rho_db|linewidth_hz|distance_km|maf_m|delta_f, got '{other}'"
            ))),
        }
    }

    pub fn apply(&self, cfg: &mut RunConfig, value: f64) -> Result<()> {
        match self {
            SweepAxis::NDac => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::config("n_dac values must be positive integers"));
                }
                cfg.n_dac = value as u32;
            }
            SweepAxis::RhoDb => cfg.rho_db = value,
            SweepAxis::LinewidthHz => {
                if value < 0.0 {
                    return Err(Error::config("linewidth must be >= 0"));
                }
                cfg.linewidth_hz = value;
            }
            SweepAxis::DistanceKm => {
                if value < 0.0 {
                    return Err(Error::config("distance must be >= 0"));
                }
                cfg.distance_km = value;
            }
            SweepAxis::MafM => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::config("maf values must be non-negative integers"));
                }
                cfg.maf_m = value as usize;
            }
            SweepAxis::DeltaF => cfg.delta_f_hz = value,
        }
        Ok(())
    }
}

/// One sweep: an axis, its values, a base configuration and an output path.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub base: RunConfig,
    pub output_path: PathBuf,
}

/// Parse a sweep file: `axis = ...`, `values = v1,v2,...`, `out = path`,
/// plus any run-configuration overrides.
pub fn load_sweep_spec(path: &Path, base: RunConfig) -> Result<SweepSpec> {
    let text = std::fs::read_to_string(path)?;
    let mut axis = None;
    let mut values = Vec::new();
    let mut out = None;
    let mut cfg = base;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("{}:{}: expected key = value", path.display(), lineno + 1))
        })?;
        match key.trim() {
            "axis" => axis = Some(SweepAxis::parse(value)?),
            "values" => {
                values = value
                    .split(',')
                    .map(parse_number)
                    .collect::<Result<Vec<f64>>>()?;
            }
            "out" => out = Some(PathBuf::from(value.trim())),
            _ => cfg.set(key, value)?,
        }
    }
    let axis = axis.ok_or_else(|| Error::config("sweep file must set 'axis'"))?;
    let output_path =
        out.ok_or_else(|| Error::config("sweep file must set 'out = <csv path>'"))?;
    Ok(SweepSpec {
        axis,
        values,
        base: cfg,
        output_path,
    })
}

/// One emitted sweep row.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub axis_value: f64,
    pub csv: String,
    pub status: String,
}

fn format_row(axis_value: f64, cfg_result: &Result<crate::harness::RunOutput>) -> SweepRow {
    match cfg_result {
        Ok(out) => {
            let r = &out.result;
            let csv = format!(
                "{axis_value},{:.6},{:.6e},{:.6},{:.4},{:.6},{:.6},{:.4e},{:.4e},{},{},ok",
                r.v_mod,
                r.t_ch,
                r.v_en,
                r.xi_a * 1e3,
                r.i_ab,
                r.chi_be,
                r.skr_bps,
                r.skr_raw_bps,
                r.n_symbols_used,
                r.n_copies
            );
            SweepRow {
                axis_value,
                csv,
                status: "ok".into(),
            }
        }
        Err(e) => {
            let status = error_tag(e);
            SweepRow {
                axis_value,
                csv: format!("{axis_value},nan,nan,nan,nan,nan,nan,nan,nan,0,0,{status}"),
                status,
            }
        }
    }
}

fn error_tag(e: &Error) -> String {
    match e {
        Error::InCopy { index, source } => format!("{}@copy{index}", error_tag(source)),
        Error::Parameter(_) => "parameter-error".into(),
        Error::Config(_) => "config-error".into(),
        Error::PilotNotFound(_) => "pilot-not-found".into(),
        Error::SyncFailure(_) => "sync-failure".into(),
        Error::FrameSync(_) => "frame-sync-failure".into(),
        Error::CalibrationFailure(_) => "calibration-failure".into(),
        Error::ChannelEstimation(_) => "channel-estimation-failure".into(),
        Error::Physicality(_) => "unphysical".into(),
        Error::DegenerateInput(_) => "degenerate-input".into(),
        Error::Io(_) => "io-error".into(),
    }
}

/// Completed axis values in an existing output file (crash-safe resume).
fn completed_values(path: &Path) -> Vec<f64> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter_map(|l| l.split(',').next().and_then(|v| v.parse::<f64>().ok()))
        .collect()
}

/// Run every axis point, appending one CSV row per point as it completes;
/// already-present rows are skipped so an interrupted sweep resumes.0 or
/// negative SKRs and per-point failures are recorded, not fatal.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let done = completed_values(&spec.output_path);
    let fresh = done.is_empty() && !spec.output_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&spec.output_path)?;
    let mut w = BufWriter::new(file);
    if fresh {
        writeln!(w, "{CSV_HEADER}")?;
        w.flush()?;
    }
    let mut rows = Vec::new();
    for &value in &spec.values {
        if done.iter().any(|d| (d - value).abs() < 1e-12 * value.abs().max(1.0)) {
            continue;
        }
        let mut cfg = spec.base;
        spec.axis.apply(&mut cfg, value)?;
        let outcome = run_single(&cfg);
        let row = format_row(value, &outcome);
        writeln!(w, "{}", row.csv)?;
        w.flush()?;
        rows.push(row);
    }
    Ok(rows)
}
