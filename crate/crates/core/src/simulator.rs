//! Trajectories, spaced equilibrium sampling and the estimators built on them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::{apply_event, check_stream, EventStream, ModelParams, QueueState};
use crate::rng::derive_seed;
use crate::stats::{batch_means, half_split_z, Summary};
use crate::theory;

/// Label mixed into replica seeds.
pub const REPLICA_LABEL: u64 = 0x5245_504c;

/// Default spacing between equilibrium samples, in time units.
pub const DEFAULT_INTERVAL: f64 = 2.0;

/// Largest number of events a single trajectory may request.
const MAX_EVENTS: f64 = 1e13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub warmup: f64,
    pub interval: f64,
    pub count: usize,
}

impl SamplingPlan {
    pub fn new(warmup: f64, interval: f64, count: usize) -> Result<Self> {
        let p = Self {
            warmup,
            interval,
            count,
        };
        p.validate()?;
        Ok(p)
    }

    /// Warm-up `40 ln n / (1 − λ)` (with `ln n` floored at 1) and the default spacing.
    pub fn default_for(params: &ModelParams, count: usize) -> Self {
        Self {
            warmup: default_warmup(params),
            interval: DEFAULT_INTERVAL,
            count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup >= 0.0 && self.warmup.is_finite()) {
            return Err(SimError::InvalidParams(format!("warmup must be >= 0, got {}", self.warmup)));
        }
        if !(self.interval > 0.0 && self.interval.is_finite()) {
            return Err(SimError::InvalidParams(format!(
                "interval must be > 0, got {}",
                self.interval
            )));
        }
        if self.count == 0 {
            return Err(SimError::InvalidParams("count must be at least 1".into()));
        }
        Ok(())
    }

    /// Time of the last snapshot.
    pub fn horizon(&self) -> f64 {
        self.warmup + (self.count - 1) as f64 * self.interval
    }

    pub fn sample_time(&self, i: usize) -> f64 {
        self.warmup + i as f64 * self.interval
    }
}

pub fn default_warmup(params: &ModelParams) -> f64 {
    40.0 * (params.n as f64).ln().max(1.0) / (1.0 - params.lambda)
}

/// Level counts of the state at one sampling time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub n: usize,
    /// `ell[k]` for `k = 0..=max`.
    pub ell: Vec<usize>,
    pub total: u64,
}

impl Snapshot {
    pub fn of(t: f64, x: &QueueState) -> Self {
        Self {
            t,
            n: x.n(),
            ell: x.level_counts().to_vec(),
            total: x.total(),
        }
    }

    pub fn max(&self) -> usize {
        self.ell.len() - 1
    }

    pub fn ell(&self, k: usize) -> usize {
        self.ell.get(k).copied().unwrap_or(0)
    }

    pub fn u(&self, k: usize) -> f64 {
        self.ell(k) as f64 / self.n as f64
    }
}

fn check_budget(params: &ModelParams, horizon: f64) -> Result<()> {
    let expected = (1.0 + params.lambda) * params.n as f64 * horizon;
    if !horizon.is_finite() || expected > MAX_EVENTS {
        return Err(SimError::InvalidParams(format!(
            "horizon {horizon} needs about {expected:.3e} events, above the limit of {MAX_EVENTS:e}"
        )));
    }
    Ok(())
}

/// Snapshots of the trajectory from `x0` at `warmup + i·interval`, `i < count`.
pub fn run_trajectory(
    params: &ModelParams,
    x0: &QueueState,
    plan: &SamplingPlan,
    seed: u64,
) -> Result<Vec<Snapshot>> {
    params.validate()?;
    plan.validate()?;
    let horizon = plan.horizon();
    check_budget(params, horizon)?;
    let stream = EventStream::seeded(*params, seed, horizon)?;
    check_stream(x0, &stream, horizon)?;

    let mut x = x0.clone();
    let mut out = Vec::with_capacity(plan.count);
    let mut next = 0;
    for e in stream.iter() {
        while next < plan.count && e.time() > plan.sample_time(next) {
            out.push(Snapshot::of(plan.sample_time(next), &x));
            next += 1;
        }
        apply_event(&mut x, &e)?;
    }
    while next < plan.count {
        out.push(Snapshot::of(plan.sample_time(next), &x));
        next += 1;
    }
    Ok(out)
}

/// Independent replicas with seeds derived from `seed`; each does its own warm-up.
pub fn run_replicas(
    params: &ModelParams,
    x0: &QueueState,
    plan: &SamplingPlan,
    seed: u64,
    replicas: usize,
) -> Result<Vec<Vec<Snapshot>>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| run_trajectory(params, x0, plan, derive_seed(seed, REPLICA_LABEL, r as u64)))
        .collect()
}

/// Exact `d = 1` equilibrium samples: i.i.d. geometric queue lengths.
pub fn d1_equilibrium_snapshots(params: &ModelParams, count: usize, seed: u64) -> Result<Vec<Snapshot>> {
    (0..count)
        .map(|i| {
            let x = theory::d1_equilibrium_sample(
                params.n,
                params.lambda,
                derive_seed(seed, REPLICA_LABEL, i as u64),
            )?;
            Ok(Snapshot::of(0.0, &x))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailEstimate {
    pub n: usize,
    /// `u[k]` summaries of `u(k, X)` for `k = 0..=kmax`.
    pub u: Vec<Summary>,
    /// Summaries of the indicator `M ≥ k` for `k = 0..=kmax`.
    pub max_tail: Vec<Summary>,
    pub max_hist: BTreeMap<usize, usize>,
    pub total: Summary,
    /// Half-split z-score of `‖x‖₁`; large values flag an inadequate warm-up.
    pub warmup_z: f64,
}

impl TailEstimate {
    pub fn u_hat(&self, k: usize) -> f64 {
        self.u.get(k).map_or(0.0, |s| s.mean)
    }

    pub fn se(&self, k: usize) -> f64 {
        self.u.get(k).map_or(0.0, |s| s.se)
    }

    pub fn kmax(&self) -> usize {
        self.u.len() - 1
    }

    pub fn samples(&self) -> usize {
        self.total.count
    }

    pub fn warmup_suspect(&self) -> bool {
        self.warmup_z.abs() > 3.0
    }

    /// Count-weighted merge of estimates from independent replicas.
    pub fn merge(&self, other: &TailEstimate) -> Result<TailEstimate> {
        if self.n != other.n {
            return Err(SimError::DimensionMismatch(format!(
                "cannot merge estimates for n = {} and n = {}",
                self.n, other.n
            )));
        }
        let pad = |v: &[Summary], len: usize, count: usize, fill: f64| -> Vec<Summary> {
            (0..len)
                .map(|k| {
                    v.get(k).copied().unwrap_or(Summary {
                        mean: fill,
                        variance: 0.0,
                        se: 0.0,
                        count,
                    })
                })
                .collect()
        };
        let len = self.u.len().max(other.u.len());
        let (a, b) = (self.samples(), other.samples());
        let merge_vec = |x: &[Summary], y: &[Summary]| -> Vec<Summary> {
            pad(x, len, a, 0.0)
                .iter()
                .zip(pad(y, len, b, 0.0).iter())
                .map(|(p, q)| p.merge(q))
                .collect()
        };
        let mut max_hist = self.max_hist.clone();
        for (k, c) in &other.max_hist {
            *max_hist.entry(*k).or_default() += c;
        }
        Ok(TailEstimate {
            n: self.n,
            u: merge_vec(&self.u, &other.u),
            max_tail: merge_vec(&self.max_tail, &other.max_tail),
            max_hist,
            total: self.total.merge(&other.total),
            warmup_z: if self.warmup_z.abs() > other.warmup_z.abs() {
                self.warmup_z
            } else {
                other.warmup_z
            },
        })
    }
}

/// Per-level means of `u(k, ·)` with batch-means standard errors.
pub fn estimate_tail(snapshots: &[Snapshot]) -> Result<TailEstimate> {
    let first = snapshots
        .first()
        .ok_or_else(|| SimError::Domain("estimate_tail needs at least one snapshot".into()))?;
    let n = first.n;
    if snapshots.iter().any(|s| s.n != n) {
        return Err(SimError::DimensionMismatch("snapshots mix different n".into()));
    }
    let kmax = snapshots.iter().map(Snapshot::max).max().unwrap_or(0);
    let mut series = vec![0.0; snapshots.len()];
    let mut u = Vec::with_capacity(kmax + 1);
    let mut max_tail = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        for (v, s) in series.iter_mut().zip(snapshots) {
            *v = s.u(k);
        }
        u.push(batch_means(&series));
        for (v, s) in series.iter_mut().zip(snapshots) {
            *v = if s.max() >= k { 1.0 } else { 0.0 };
        }
        max_tail.push(batch_means(&series));
    }
    let mut max_hist = BTreeMap::new();
    for s in snapshots {
        *max_hist.entry(s.max()).or_insert(0) += 1;
    }
    let totals: Vec<f64> = snapshots.iter().map(|s| s.total as f64).collect();
    Ok(TailEstimate {
        n,
        u,
        max_tail,
        max_hist,
        total: batch_means(&totals),
        warmup_z: half_split_z(&totals),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Residual {
    pub level: usize,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceReport {
    /// `r(i) = λ·mean(u(i−1,·)^d) − mean(u(i,·))` for `i = 1..=kmax+1`.
    pub residuals: Vec<Residual>,
    pub warnings: Vec<String>,
}

impl BalanceReport {
    /// True when every residual lies within `z·SE + slack` of zero.
    pub fn consistent(&self, z: f64, slack: f64) -> bool {
        self.residuals
            .iter()
            .all(|r| r.value.abs() <= z * r.se + slack)
    }
}

/// Empirical residuals of the equilibrium balance identity
/// `λ E[u(i−1, Y)^d] = u(i)`.
pub fn verify_balance(snapshots: &[Snapshot], params: &ModelParams) -> Result<BalanceReport> {
    if snapshots.is_empty() {
        return Err(SimError::Domain("verify_balance needs at least one snapshot".into()));
    }
    let mut warnings = Vec::new();
    if snapshots[0].t == 0.0 {
        let msg = "first snapshot taken at t = 0 (no warm-up): residuals include transient bias".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let kmax = snapshots.iter().map(Snapshot::max).max().unwrap_or(0);
    let d = params.d as i32;
    let mut series = vec![0.0; snapshots.len()];
    let residuals = (1..=kmax + 1)
        .map(|i| {
            for (v, s) in series.iter_mut().zip(snapshots) {
                *v = params.lambda * s.u(i - 1).powi(d) - s.u(i);
            }
            let sm = batch_means(&series);
            Residual {
                level: i,
                value: sm.mean,
                se: sm.se,
            }
        })
        .collect();
    let mut report = BalanceReport {
        residuals,
        warnings,
    };
    if !report.consistent(3.0, 0.0) {
        report
            .warnings
            .push("residuals exceed 3 SE: samples do not look like equilibrium".into());
    }
    Ok(report)
}

/// `(min, max)` of `M_t` over `[0, horizon]`, exact on the event-driven path.
pub fn max_interval_extremes(
    params: &ModelParams,
    x0: &QueueState,
    horizon: f64,
    seed: u64,
) -> Result<(usize, usize)> {
    check_budget(params, horizon)?;
    let stream = EventStream::seeded(*params, seed, horizon)?;
    check_stream(x0, &stream, horizon)?;
    let mut x = x0.clone();
    let (mut lo, mut hi) = (x.max(), x.max());
    for e in stream.iter() {
        apply_event(&mut x, &e)?;
        let m = x.max();
        lo = lo.min(m);
        hi = hi.max(m);
    }
    Ok((lo, hi))
}

/// Bookkeeping for the customers present at time 0 under FIFO service.
#[derive(Debug, Clone)]
pub struct SurvivalRecord {
    initial: Vec<u32>,
    served: Vec<u32>,
    outstanding: usize,
    last_exit: Option<f64>,
}

impl SurvivalRecord {
    pub fn new(x0: &QueueState) -> Self {
        let initial = x0.lengths().to_vec();
        let outstanding = initial.iter().filter(|&&c| c > 0).count();
        Self {
            served: vec![0; initial.len()],
            initial,
            outstanding,
            last_exit: if outstanding == 0 { Some(0.0) } else { None },
        }
    }

    /// Record a real departure from queue `j` at time `t`.
    pub fn record_departure(&mut self, j: usize, t: f64) {
        if self.served[j] < self.initial[j] {
            self.served[j] += 1;
            if self.served[j] == self.initial[j] {
                self.outstanding -= 1;
                if self.outstanding == 0 {
                    self.last_exit = Some(t);
                }
            }
        }
    }

    pub fn all_departed(&self) -> bool {
        self.outstanding == 0
    }

    pub fn last_exit(&self) -> Option<f64> {
        self.last_exit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Survival {
    /// Time at which the last initial customer left.
    Departed(f64),
    /// Some initial customer was still present at the horizon.
    Censored { horizon: f64 },
}

impl Survival {
    /// Whether some initial customer is still present at time `t`.
    pub fn survives_past(&self, t: f64) -> bool {
        match *self {
            Survival::Departed(s) => s > t,
            Survival::Censored { horizon } => {
                debug_assert!(t <= horizon);
                true
            }
        }
    }
}

/// Time at which the last customer present in `x0` departs, replaying `stream`.
pub fn survival_time(x0: &QueueState, stream: &EventStream, horizon: f64) -> Result<Survival> {
    check_stream(x0, stream, horizon)?;
    let mut record = SurvivalRecord::new(x0);
    if record.all_departed() {
        return Ok(Survival::Departed(0.0));
    }
    let mut x = x0.clone();
    for e in stream.iter().take_while(|e| e.time() <= horizon) {
        if let Some(j) = apply_event(&mut x, &e)? {
            if !e.is_arrival() {
                record.record_departure(j, e.time());
                if record.all_departed() {
                    return Ok(Survival::Departed(e.time()));
                }
            }
        }
    }
    Ok(Survival::Censored { horizon })
}
