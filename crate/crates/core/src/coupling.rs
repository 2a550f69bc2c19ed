//! Several copies of the process driven by one shared event stream.
//!
//! Under the shared stream the pairwise ℓ1 and ℓ∞ distances never increase,
//! componentwise order is preserved and equal copies stay equal. [`coupled_run`]
//! audits all of this event by event; the mixing profile uses the same
//! construction to bound the distance to equilibrium.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::{apply_event, check_stream, evolve, Event, EventStream, ModelParams, QueueState};
use crate::rng::{aux_rng, bounded_index, derive_seed};
use crate::simulator::default_warmup;
use crate::stats::{iid_summary, linear_fit};

/// Full audits run when `n · expected events` stays below this; otherwise
/// distances are audited every [`AUDIT_STRIDE`] events.
pub const FULL_AUDIT_BUDGET: f64 = 1e7;
pub const AUDIT_STRIDE: u64 = 64;

/// Below this many replicas the mixing profile warns about wide intervals.
pub const MIN_REPLICAS: usize = 100;

const MIX_LABEL: u64 = 0x4d49_5845;
const WARM_LABEL: u64 = 0x5741_524d;
const SHARED_LABEL: u64 = 0x5348_4152;
const TRIAL_LABEL: u64 = 0x5452_4941;

/// Default censoring horizon `50 ln n / (1 − λ)`, with `ln n` floored at 1.
pub fn default_censoring_horizon(params: &ModelParams) -> f64 {
    50.0 * (params.n as f64).ln().max(1.0) / (1.0 - params.lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditPolicy {
    /// Full audit when `n · expected events ≤ 1e7`, else every 64 events.
    Auto,
    Full,
    Every(u64),
}

impl AuditPolicy {
    fn stride(self, params: &ModelParams, t: f64) -> u64 {
        match self {
            AuditPolicy::Full => 1,
            AuditPolicy::Every(k) => k.max(1),
            AuditPolicy::Auto => {
                let events = (1.0 + params.lambda) * params.n as f64 * t;
                if params.n as f64 * events <= FULL_AUDIT_BUDGET {
                    1
                } else {
                    AUDIT_STRIDE
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    L1Increase,
    LinfIncrease,
    OrderBroken,
    CoalescenceBroken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub pair: (usize, usize),
    pub time: f64,
    pub before: u64,
    pub after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair: (usize, usize),
    pub l1_start: u64,
    pub linf_start: u32,
    pub l1_end: u64,
    pub linf_end: u32,
    /// `Some(false)` if `x ≤ y`, `Some(true)` if `y ≤ x`, `None` if unordered.
    pub ordered: Option<bool>,
    pub coalesced_at: Option<f64>,
    /// `(event index, ‖Δ‖₁, ‖Δ‖∞)` at each audited event when tracing.
    pub trace: Vec<(u64, u64, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub states: Vec<QueueState>,
    pub pairs: Vec<PairRecord>,
    pub violations: Vec<Violation>,
    pub events: u64,
    pub audit_stride: u64,
}

impl CoupledRun {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn ordering(x: &QueueState, y: &QueueState) -> Option<bool> {
    if x.dominated_by(y) {
        Some(false)
    } else if y.dominated_by(x) {
        Some(true)
    } else {
        None
    }
}

fn check_same_n(states: &[QueueState], stream: &EventStream) -> Result<()> {
    let n = stream.params().n;
    if let Some(bad) = states.iter().find(|s| s.n() != n) {
        return Err(SimError::DimensionMismatch(format!(
            "coupled states must all have n = {n}, found one with {}",
            bad.n()
        )));
    }
    Ok(())
}

/// Change of `|x_j − y_j|` summed over the queues touched by one event.
/// `cx`/`cy` are the queues each copy changed and `delta` is +1 for arrivals
/// and −1 for departures.
#[inline]
fn l1_step(x: &QueueState, y: &QueueState, cx: Option<usize>, cy: Option<usize>, delta: i64) -> i64 {
    let old = |s: &QueueState, c: Option<usize>, j: usize| -> i64 {
        let v = i64::from(s.len_of(j));
        if c == Some(j) {
            v - delta
        } else {
            v
        }
    };
    let mut change = 0;
    let mut touch = |j: usize| {
        let after = (i64::from(x.len_of(j)) - i64::from(y.len_of(j))).abs();
        let before = (old(x, cx, j) - old(y, cy, j)).abs();
        change += after - before;
    };
    match (cx, cy) {
        (Some(a), Some(b)) if a == b => touch(a),
        (a, b) => {
            if let Some(a) = a {
                touch(a);
            }
            if let Some(b) = b {
                touch(b);
            }
        }
    }
    change
}

/// Replay `stream` up to time `t` from every state, auditing every pair.
///
/// ℓ1 distances and coalescence are tracked exactly at every event; ℓ∞ and
/// componentwise order are checked at audited events (see [`AuditPolicy`]).
pub fn coupled_run(
    states: &[QueueState],
    stream: &EventStream,
    t: f64,
    policy: AuditPolicy,
    trace: bool,
) -> Result<CoupledRun> {
    check_same_n(states, stream)?;
    if let Some(s) = states.first() {
        check_stream(s, stream, t)?;
    }
    let stride = policy.stride(stream.params(), t);
    let mut xs = states.to_vec();
    let k = xs.len();
    let mut pairs = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            let l1 = xs[a].l1_distance(&xs[b]);
            let linf = xs[a].linf_distance(&xs[b]);
            pairs.push(PairRecord {
                pair: (a, b),
                l1_start: l1,
                linf_start: linf,
                l1_end: l1,
                linf_end: linf,
                ordered: ordering(&xs[a], &xs[b]),
                coalesced_at: (l1 == 0).then_some(0.0),
                trace: if trace { vec![(0, l1, linf)] } else { Vec::new() },
            });
        }
    }
    let mut violations = Vec::new();
    let mut changed = vec![None; k];
    let mut events = 0u64;
    for e in stream.iter().take_while(|e| e.time() <= t) {
        for (x, c) in xs.iter_mut().zip(changed.iter_mut()) {
            *c = apply_event(x, &e)?;
        }
        events += 1;
        let delta = if e.is_arrival() { 1 } else { -1 };
        let audit = events.is_multiple_of(stride);
        let time = e.time();
        for rec in pairs.iter_mut() {
            let (a, b) = rec.pair;
            let (x, y) = (&xs[a], &xs[b]);
            let before = rec.l1_end;
            let after = (before as i64 + l1_step(x, y, changed[a], changed[b], delta)) as u64;
            rec.l1_end = after;
            if after > before {
                let kind = if rec.coalesced_at.is_some() {
                    ViolationKind::CoalescenceBroken
                } else {
                    ViolationKind::L1Increase
                };
                violations.push(Violation {
                    kind,
                    pair: rec.pair,
                    time,
                    before,
                    after,
                });
            }
            if after == 0 && rec.coalesced_at.is_none() {
                rec.coalesced_at = Some(time);
            }
            if audit {
                debug_assert_eq!(after, x.l1_distance(y));
                let linf = x.linf_distance(y);
                if linf > rec.linf_end {
                    violations.push(Violation {
                        kind: ViolationKind::LinfIncrease,
                        pair: rec.pair,
                        time,
                        before: u64::from(rec.linf_end),
                        after: u64::from(linf),
                    });
                }
                rec.linf_end = linf;
                if let Some(flipped) = rec.ordered {
                    let kept = if flipped { y.dominated_by(x) } else { x.dominated_by(y) };
                    if !kept {
                        violations.push(Violation {
                            kind: ViolationKind::OrderBroken,
                            pair: rec.pair,
                            time,
                            before: 0,
                            after: 1,
                        });
                    }
                }
                if trace {
                    rec.trace.push((events, after, linf));
                }
            }
        }
    }
    for rec in pairs.iter_mut() {
        let (a, b) = rec.pair;
        rec.linf_end = xs[a].linf_distance(&xs[b]);
    }
    Ok(CoupledRun {
        states: xs,
        pairs,
        violations,
        events,
        audit_stride: stride,
    })
}

/// Each state evolved to time `t` under the same stream.
pub fn coupled_evolve(states: &[QueueState], stream: &EventStream, t: f64) -> Result<Vec<QueueState>> {
    check_same_n(states, stream)?;
    let mut xs = states.to_vec();
    if let Some(s) = xs.first() {
        check_stream(s, stream, t)?;
    }
    for e in stream.iter().take_while(|e| e.time() <= t) {
        for x in xs.iter_mut() {
            apply_event(x, &e)?;
        }
    }
    Ok(xs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Coalescence {
    At(f64),
    Censored { horizon: f64 },
}

impl Coalescence {
    pub fn time(&self) -> Option<f64> {
        match *self {
            Coalescence::At(t) => Some(t),
            Coalescence::Censored { .. } => None,
        }
    }
}

/// The queue at which `x_plus` holds one extra customer, if the two states
/// are adjacent in that sense.
pub fn extra_customer(x: &QueueState, x_plus: &QueueState) -> Option<usize> {
    if x.n() != x_plus.n() {
        return None;
    }
    let mut found = None;
    for (j, (&a, &b)) in x.lengths().iter().zip(x_plus.lengths()).enumerate() {
        if a == b {
            continue;
        }
        if b != a + 1 || found.is_some() {
            return None;
        }
        found = Some(j);
    }
    found
}

fn first_meeting(x: &QueueState, y: &QueueState, stream: &EventStream, horizon: f64) -> Result<Coalescence> {
    let mut x = x.clone();
    let mut y = y.clone();
    let mut l1 = x.l1_distance(&y) as i64;
    if l1 == 0 {
        return Ok(Coalescence::At(0.0));
    }
    for e in stream.iter().take_while(|e| e.time() <= horizon) {
        let cx = apply_event(&mut x, &e)?;
        let cy = apply_event(&mut y, &e)?;
        l1 += l1_step(&x, &y, cx, cy, if e.is_arrival() { 1 } else { -1 });
        if l1 == 0 {
            return Ok(Coalescence::At(e.time()));
        }
    }
    Ok(Coalescence::Censored { horizon })
}

/// First time `x` and `x_plus = x + e_k` agree under the shared stream.
pub fn coalescence_time(
    x: &QueueState,
    x_plus: &QueueState,
    stream: &EventStream,
    horizon: f64,
) -> Result<Coalescence> {
    check_same_n(std::slice::from_ref(x), stream)?;
    if extra_customer(x, x_plus).is_none() {
        return Err(SimError::NotAdjacent(format!(
            "second state must equal the first plus one customer at a single queue \
             (‖Δ‖₁ = {})",
            if x.n() == x_plus.n() { x.l1_distance(x_plus) } else { 0 }
        )));
    }
    check_stream(x, stream, horizon)?;
    first_meeting(x, x_plus, stream, horizon)
}

/// Adjacent states from `x` down to `min(x, y)` and back up to `y`.
pub fn adjacent_path(x: &QueueState, y: &QueueState) -> Result<Vec<QueueState>> {
    if x.n() != y.n() {
        return Err(SimError::DimensionMismatch(format!(
            "path endpoints have n = {} and n = {}",
            x.n(),
            y.n()
        )));
    }
    let mut path = vec![x.clone()];
    let mut z = x.clone();
    for j in 0..x.n() {
        while z.len_of(j) > y.len_of(j) {
            z.remove_customer(j)?;
            path.push(z.clone());
        }
    }
    for j in 0..x.n() {
        while z.len_of(j) < y.len_of(j) {
            z.add_customer(j)?;
            path.push(z.clone());
        }
    }
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathCoalescence {
    pub outcome: Coalescence,
    /// Number of adjacent steps `m` on the path through `min(x, y)`;
    /// `m = ‖x − y‖₁ ≤ ‖x‖₁ + ‖y‖₁`.
    pub path_length: u64,
}

/// Coalescence time of two arbitrary states under the shared stream.
pub fn path_coalescence(
    x: &QueueState,
    y: &QueueState,
    stream: &EventStream,
    horizon: f64,
) -> Result<PathCoalescence> {
    check_same_n(&[x.clone(), y.clone()], stream)?;
    check_stream(x, stream, horizon)?;
    Ok(PathCoalescence {
        outcome: first_meeting(x, y, stream, horizon)?,
        path_length: x.l1_distance(y),
    })
}

/// Coalescence times of `x` against `x + e_k` with `k` uniform, one fresh
/// stream per trial.
pub fn adjacent_coalescence_samples(
    params: &ModelParams,
    x: &QueueState,
    trials: usize,
    seed: u64,
    horizon: f64,
) -> Result<Vec<Coalescence>> {
    params.validate()?;
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, TRIAL_LABEL, i as u64);
            let k = bounded_index(&mut aux_rng(s), params.n);
            let mut x_plus = x.clone();
            x_plus.add_customer(k)?;
            let stream = EventStream::seeded(*params, derive_seed(s, SHARED_LABEL, 0), horizon)?;
            coalescence_time(x, &x_plus, &stream, horizon)
        })
        .collect()
}

/// State after running an independent stream from `0ⁿ` for `warmup`.
pub fn warmed_up_state(params: &ModelParams, warmup: f64, seed: u64) -> Result<QueueState> {
    let stream = EventStream::seeded(*params, seed, warmup)?;
    evolve(&QueueState::zeros(params.n), &stream, warmup)
}

/// Coalescence times of `0ⁿ` against an independently warmed-up state.
pub fn path_coalescence_samples(
    params: &ModelParams,
    trials: usize,
    seed: u64,
    warmup: f64,
    horizon: f64,
) -> Result<Vec<PathCoalescence>> {
    params.validate()?;
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, TRIAL_LABEL, i as u64);
            let y = warmed_up_state(params, warmup, derive_seed(s, WARM_LABEL, 0))?;
            let stream = EventStream::seeded(*params, derive_seed(s, SHARED_LABEL, 0), horizon)?;
            path_coalescence(&QueueState::zeros(params.n), &y, &stream, horizon)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingPoint {
    pub t: f64,
    pub pr_neq: f64,
    pub se_neq: f64,
    /// `λ − û_t(1)` for the copy started empty.
    pub deficit: f64,
    pub se_deficit: f64,
    /// `λ e^{−(1+λd)t}`.
    pub bound_lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fitted exponential rate of `Pr(X_t ≠ Y_t)`.
    pub rate: f64,
    pub r_squared: f64,
    /// Grid indices used by the fit.
    pub first: usize,
    pub last: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingProfile {
    pub params: ModelParams,
    pub replicas: usize,
    pub warmup: f64,
    pub points: Vec<MixingPoint>,
    /// Grid points at which some replica had `X_t ≰ Y_t`; the coupling
    /// forbids this, so any entry is a defect.
    pub order_violations: usize,
    pub fit: Option<DecayFit>,
    pub warnings: Vec<String>,
}

/// Upper end of the decaying segment: the fit starts at the first grid point
/// where `Pr(X_t ≠ Y_t)` has dropped to this level.
pub const DECAY_START: f64 = 0.5;
/// The fit stops before the estimate rests on fewer unequal replicas than this.
pub const DECAY_MIN_COUNT: usize = 10;

/// Least-squares fit of `ln Pr(X_t ≠ Y_t)` against `t` over the decaying
/// segment: from the first point at or below [`DECAY_START`] to the last point
/// with at least [`DECAY_MIN_COUNT`] unequal replicas.
pub fn fit_decay(points: &[MixingPoint], replicas: usize) -> Option<DecayFit> {
    let floor = DECAY_MIN_COUNT as f64 / replicas as f64;
    let first = points.iter().position(|p| p.pr_neq <= DECAY_START)?;
    let last = (first..points.len())
        .take_while(|&i| points[i].pr_neq >= floor - 1e-12)
        .last()?;
    if last < first + 2 {
        return None;
    }
    let seg = &points[first..=last];
    let xs: Vec<f64> = seg.iter().map(|p| p.t).collect();
    let ys: Vec<f64> = seg.iter().map(|p| p.pr_neq.ln()).collect();
    let (_, slope, r_squared) = linear_fit(&xs, &ys)?;
    Some(DecayFit {
        rate: -slope,
        r_squared,
        first,
        last,
    })
}

struct ReplicaPath {
    neq: Vec<bool>,
    u1: Vec<f64>,
    ordered: Vec<bool>,
}

fn mixing_replica(params: &ModelParams, grid: &[f64], warmup: f64, seed: u64) -> Result<ReplicaPath> {
    let mut y = warmed_up_state(params, warmup, derive_seed(seed, WARM_LABEL, 0))?;
    let mut x = QueueState::zeros(params.n);
    let horizon = grid.last().copied().unwrap_or(0.0);
    let stream = EventStream::seeded(*params, derive_seed(seed, SHARED_LABEL, 0), horizon)?;
    let mut l1 = x.l1_distance(&y) as i64;
    let mut out = ReplicaPath {
        neq: Vec::with_capacity(grid.len()),
        u1: Vec::with_capacity(grid.len()),
        ordered: Vec::with_capacity(grid.len()),
    };
    let record = |x: &QueueState, y: &QueueState, l1: i64, out: &mut ReplicaPath| {
        out.neq.push(l1 != 0);
        out.u1.push(x.u(1));
        out.ordered.push(x.dominated_by(y));
    };
    let mut next = 0;
    let step = |e: &Event, x: &mut QueueState, y: &mut QueueState, l1: &mut i64| -> Result<()> {
        let cx = apply_event(x, e)?;
        let cy = apply_event(y, e)?;
        *l1 += l1_step(x, y, cx, cy, if e.is_arrival() { 1 } else { -1 });
        Ok(())
    };
    for e in stream.iter() {
        while next < grid.len() && e.time() > grid[next] {
            record(&x, &y, l1, &mut out);
            next += 1;
        }
        step(&e, &mut x, &mut y, &mut l1)?;
    }
    while next < grid.len() {
        record(&x, &y, l1, &mut out);
        next += 1;
    }
    Ok(out)
}

/// `X` starts at `0ⁿ`, `Y` at an independently warmed-up state; both then
/// follow one shared stream. Reports `Pr(X_t ≠ Y_t)` and `λ − û_t(1)` on the grid.
pub fn mixing_profile(
    params: &ModelParams,
    t_grid: &[f64],
    replicas: usize,
    seed_base: u64,
    warmup: Option<f64>,
) -> Result<MixingProfile> {
    params.validate()?;
    if t_grid.is_empty() {
        return Err(SimError::InvalidParams("time grid is empty".into()));
    }
    if t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(SimError::InvalidParams(
            "time grid must be finite, nonnegative and sorted ascending".into(),
        ));
    }
    if replicas == 0 {
        return Err(SimError::InvalidParams("need at least one replica".into()));
    }
    let warmup = warmup.unwrap_or_else(|| default_warmup(params));
    let mut warnings = Vec::new();
    if replicas < MIN_REPLICAS {
        let msg = format!("only {replicas} replicas: confidence intervals will be wide");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let paths: Vec<ReplicaPath> = (0..replicas)
        .into_par_iter()
        .map(|r| mixing_replica(params, t_grid, warmup, derive_seed(seed_base, MIX_LABEL, r as u64)))
        .collect::<Result<_>>()?;
    let rate = 1.0 + params.lambda * params.d as f64;
    let mut col = vec![0.0; replicas];
    let mut order_violations = 0;
    let points = t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            for (c, p) in col.iter_mut().zip(&paths) {
                *c = if p.neq[i] { 1.0 } else { 0.0 };
            }
            let neq = iid_summary(&col);
            for (c, p) in col.iter_mut().zip(&paths) {
                *c = p.u1[i];
            }
            let u1 = iid_summary(&col);
            if paths.iter().any(|p| !p.ordered[i]) {
                order_violations += 1;
            }
            MixingPoint {
                t,
                pr_neq: neq.mean,
                se_neq: neq.se,
                deficit: params.lambda - u1.mean,
                se_deficit: u1.se,
                bound_lower: params.lambda * (-rate * t).exp(),
            }
        })
        .collect::<Vec<_>>();
    let fit = fit_decay(&points, replicas);
    Ok(MixingProfile {
        params: *params,
        replicas,
        warmup,
        points,
        order_violations,
        fit,
        warnings,
    })
}

/// Random state with `n` queues and lengths uniform in `0..=max_len`.
pub fn random_state(n: usize, max_len: u32, seed: u64) -> QueueState {
    let mut rng = aux_rng(seed);
    QueueState::from_lengths((0..n).map(|_| rng.random_range(0..=max_len)).collect())
}
