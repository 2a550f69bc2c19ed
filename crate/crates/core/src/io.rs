//! CSV and JSON output formats.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coupling::{Coalescence, MixingProfile};
use crate::error::{Result, SimError};
use crate::meanfield::{MeanFieldState, Trajectory};
use crate::model::ModelParams;
use crate::oracle::CappedChainSpec;
use crate::simulator::{SamplingPlan, Snapshot, TailEstimate};

fn csv_err(e: csv::Error) -> SimError {
    SimError::Domain(format!("csv output failed: {e}"))
}

fn io_err(e: std::io::Error) -> SimError {
    SimError::Domain(format!("output failed: {e}"))
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Columns `t,total,max,ell_0..ell_K` with `K` the largest maximum seen.
pub fn write_snapshots_csv<W: Write>(w: W, snapshots: &[Snapshot]) -> Result<()> {
    let kmax = snapshots.iter().map(Snapshot::max).max().unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string(), "total".into(), "max".into()];
    header.extend((0..=kmax).map(|k| format!("ell_{k}")));
    out.write_record(&header).map_err(csv_err)?;
    for s in snapshots {
        let mut row = vec![fmt(s.t), s.total.to_string(), s.max().to_string()];
        row.extend((0..=kmax).map(|k| s.ell(k).to_string()));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub params: ModelParams,
    pub plan: SamplingPlan,
    pub u: Vec<f64>,
    pub se: Vec<f64>,
    pub max_hist: BTreeMap<usize, usize>,
}

impl SimulationSummary {
    pub fn new(params: ModelParams, plan: SamplingPlan, est: &TailEstimate) -> Self {
        Self {
            params,
            plan,
            u: est.u.iter().map(|s| s.mean).collect(),
            se: est.u.iter().map(|s| s.se).collect(),
            max_hist: est.max_hist.clone(),
        }
    }
}

pub fn write_json<W: Write, T: Serialize>(w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(w, value).map_err(|e| SimError::Domain(format!("json output failed: {e}")))
}

/// Columns `t,pr_neq,se_neq,deficit,se_deficit,bound_lower`.
pub fn write_mixing_csv<W: Write>(w: W, profile: &MixingProfile) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "pr_neq", "se_neq", "deficit", "se_deficit", "bound_lower"])
        .map_err(csv_err)?;
    for p in &profile.points {
        out.write_record([p.t, p.pr_neq, p.se_neq, p.deficit, p.se_deficit, p.bound_lower].map(fmt))
            .map_err(csv_err)?;
    }
    out.flush().map_err(io_err)
}

/// One column `coalescence_time`; censored samples are written as `inf`.
pub fn write_coalescence_csv<W: Write>(w: W, samples: &[Coalescence]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["coalescence_time"]).map_err(csv_err)?;
    for c in samples {
        let cell = c.time().map_or_else(|| "inf".to_string(), fmt);
        out.write_record([cell]).map_err(csv_err)?;
    }
    out.flush().map_err(io_err)
}

/// Columns `t,v1..vK`.
pub fn write_meanfield_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let k = traj.states.first().map_or(0, MeanFieldState::truncation);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|i| format!("v{i}")));
    out.write_record(&header).map_err(csv_err)?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![fmt(*t)];
        row.extend(s.values().iter().map(|&v| fmt(v)));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointDump {
    pub lambda: f64,
    pub d: usize,
    pub truncation: usize,
    pub values: Vec<f64>,
    /// `max_k |dv(k)/dt|` at the fixed point.
    pub residual: f64,
}

/// Columns `state_index,x1..xn,prob`.
pub fn write_distribution_csv<W: Write>(w: W, spec: &CappedChainSpec, p: &[f64]) -> Result<()> {
    if p.len() != spec.num_states() {
        return Err(SimError::DimensionMismatch(format!(
            "{} probabilities for {} states",
            p.len(),
            spec.num_states()
        )));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["state_index".to_string()];
    header.extend((1..=spec.n).map(|j| format!("x{j}")));
    header.push("prob".into());
    out.write_record(&header).map_err(csv_err)?;
    for (i, &pi) in p.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(spec.decode(i).iter().map(u32::to_string));
        row.push(fmt(pi));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(io_err)
}
