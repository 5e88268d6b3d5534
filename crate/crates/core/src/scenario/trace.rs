//! Per-tick trace records, CSV emission and the run summary.
//!
//! Trace columns, in order: `tick, time, q1_1..q1_8, q2_1..q2_8, params_hash,
//! t1_error, r1_error, t2_error, pixel_u, pixel_v, y_error, g_fov,
//! g_fov_estimated, theta_fov, in_real_fov, in_estimated_fov, active_mask,
//! control_status, adaptation_status`, optionally followed by `a_1..a_88`.
//! Absent values are empty fields. Floats are written in shortest
//! round-trip form.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{SYSTEM_JOINTS, SYSTEM_PARAMS};

/// Bumped whenever trace columns or summary keys change.
pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub tick: usize,
    pub time: f64,
    pub q: [f64; SYSTEM_JOINTS],
    pub params_hash: String,
    pub params: Option<Vec<f64>>,
    pub t1_error: f64,
    pub r1_error: f64,
    pub t2_error: f64,
    /// Measured (noisy) pixel, when the tip was on the sensor.
    pub pixel: Option<(f64, f64)>,
    pub y_error: Option<f64>,
    /// True-model cone margin.
    pub g_fov: f64,
    /// Estimated-model cone margin.
    pub g_fov_estimated: f64,
    /// True off-axis angle of the tip, rad.
    pub theta_fov: f64,
    pub in_real_fov: bool,
    pub in_estimated_fov: bool,
    /// Bit per [`crate::constraints::ConstraintKind`] with an active row.
    pub active_mask: u32,
    pub control_status: String,
    pub adaptation_status: String,
}

pub fn trace_header(with_params: bool) -> Vec<String> {
    let mut h: Vec<String> = vec!["tick".into(), "time".into()];
    for b in 1..=2 {
        for k in 1..=8 {
            h.push(format!("q{b}_{k}"));
        }
    }
    for name in [
        "params_hash",
        "t1_error",
        "r1_error",
        "t2_error",
        "pixel_u",
        "pixel_v",
        "y_error",
        "g_fov",
        "g_fov_estimated",
        "theta_fov",
        "in_real_fov",
        "in_estimated_fov",
        "active_mask",
        "control_status",
        "adaptation_status",
    ] {
        h.push(name.into());
    }
    if with_params {
        h.extend((1..=SYSTEM_PARAMS).map(|i| format!("a_{i}")));
    }
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TraceRecord {
    fn fields(&self) -> Vec<String> {
        let mut f = vec![self.tick.to_string(), self.time.to_string()];
        f.extend(self.q.iter().map(f64::to_string));
        f.push(self.params_hash.clone());
        f.push(self.t1_error.to_string());
        f.push(self.r1_error.to_string());
        f.push(self.t2_error.to_string());
        f.push(opt(self.pixel.map(|p| p.0)));
        f.push(opt(self.pixel.map(|p| p.1)));
        f.push(opt(self.y_error));
        f.push(self.g_fov.to_string());
        f.push(self.g_fov_estimated.to_string());
        f.push(self.theta_fov.to_string());
        f.push(self.in_real_fov.to_string());
        f.push(self.in_estimated_fov.to_string());
        f.push(self.active_mask.to_string());
        f.push(self.control_status.clone());
        f.push(self.adaptation_status.clone());
        if let Some(p) = &self.params {
            f.extend(p.iter().map(f64::to_string));
        }
        f
    }

    fn parse(fields: &csv::StringRecord) -> std::result::Result<Self, String> {
        let get = |i: usize| fields.get(i).ok_or_else(|| format!("missing column {i}"));
        let num = |i: usize| -> std::result::Result<f64, String> {
            get(i)?.parse::<f64>().map_err(|e| format!("column {i}: {e}"))
        };
        let opt_num = |i: usize| -> std::result::Result<Option<f64>, String> {
            let s = get(i)?;
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| format!("column {i}: {e}"))
            }
        };
        let flag = |i: usize| -> std::result::Result<bool, String> {
            get(i)?.parse::<bool>().map_err(|e| format!("column {i}: {e}"))
        };
        let mut q = [0.0; SYSTEM_JOINTS];
        for (k, v) in q.iter_mut().enumerate() {
            *v = num(2 + k)?;
        }
        let base = 2 + SYSTEM_JOINTS;
        let pixel = match (opt_num(base + 4)?, opt_num(base + 5)?) {
            (Some(u), Some(v)) => Some((u, v)),
            _ => None,
        };
        let fixed = base + 15;
        let params = if fields.len() > fixed {
            Some(
                (fixed..fields.len())
                    .map(num)
                    .collect::<std::result::Result<Vec<_>, _>>()?,
            )
        } else {
            None
        };
        Ok(Self {
            tick: get(0)?.parse().map_err(|e| format!("tick: {e}"))?,
            time: num(1)?,
            q,
            params_hash: get(base)?.to_string(),
            params,
            t1_error: num(base + 1)?,
            r1_error: num(base + 2)?,
            t2_error: num(base + 3)?,
            pixel,
            y_error: opt_num(base + 6)?,
            g_fov: num(base + 7)?,
            g_fov_estimated: num(base + 8)?,
            theta_fov: num(base + 9)?,
            in_real_fov: flag(base + 10)?,
            in_estimated_fov: flag(base + 11)?,
            active_mask: get(base + 12)?.parse().map_err(|e| format!("active_mask: {e}"))?,
            control_status: get(base + 13)?.to_string(),
            adaptation_status: get(base + 14)?.to_string(),
        })
    }
}

/// Writes the trace as CSV. Every record must agree on whether the full
/// parameter dump is present.
pub fn write_trace(trace: &[TraceRecord], path: &Path) -> Result<()> {
    let with_params = trace.first().is_some_and(|r| r.params.is_some());
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(trace_header(with_params)).map_err(csv_err)?;
    for r in trace {
        if r.params.is_some() != with_params {
            return Err(Error::Config(
                "trace mixes records with and without parameter dumps".into(),
            ));
        }
        w.write_record(r.fields()).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(csv_err)?;
        out.push(TraceRecord::parse(&row).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?);
    }
    Ok(out)
}

/// Norms of `â − a_true` per branch and parameter class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamError {
    pub tool_length_m: f64,
    pub tool_angle_rad: f64,
    pub camera_length_m: f64,
    pub camera_angle_rad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format_version: u32,
    pub adaptive: bool,
    pub seed: u64,
    pub ticks: usize,
    pub duration_s: f64,
    /// Fraction of ticks with the true tip inside the FoV subregion.
    pub duty_ratio: f64,
    /// `max(θ_FoV − θ_safe, 0)` over the run, degrees.
    pub max_deviation_deg: f64,
    /// Smallest estimated cone margin over ticks with an optimal control solve.
    pub min_estimated_margin: f64,
    pub estimated_fov_kept: bool,
    pub mean_y_error_last_quarter: f64,
    pub final_y_error: Option<f64>,
    pub control_fallbacks: usize,
    pub adaptation_ticks: usize,
    pub adaptation_fallbacks: usize,
    pub max_lyapunov_rate: Option<f64>,
    pub max_projector_residual: Option<f64>,
    pub initial_param_error: ParamError,
    pub final_param_error: ParamError,
    pub final_params_hash: String,
}

pub fn write_summary(summary: &Summary, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let text = serde_json::to_string_pretty(summary).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let mut f = File::create(path).map_err(io_err)?;
    f.write_all(text.as_bytes()).map_err(io_err)?;
    f.write_all(b"\n").map_err(io_err)
}
