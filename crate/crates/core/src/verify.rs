//! Registry of named acceptance checks.
//!
//! Each check runs a fixed experiment with a fixed seed and returns a
//! [`Verdict`]. Several checks share the same expensive equilibrium run; a
//! [`Context`] caches it so running the whole registry pays for it once.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{self, AuditPolicy, MixingProfile};
use crate::error::{Result, SimError};
use crate::meanfield;
use crate::model::{evolve, EventStream, ModelParams, QueueState};
use crate::oracle::{self, CappedChainSpec};
use crate::rng::derive_seed;
use crate::simulator::{self, estimate_tail, verify_balance, SamplingPlan, Snapshot, Survival, TailEstimate};
use crate::stats::{iid_summary, Summary};
use crate::theory;

pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Full,
    /// Smaller sample sizes for smoke runs; tolerances are unchanged.
    Quick,
}

/// One compared quantity inside a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    /// Distance to the pass/fail boundary; negative when failing.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub passed: bool,
    /// Headline numbers: the first failing part, else the part with the least
    /// margin relative to its tolerance, else the first part.
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub parts: Vec<Part>,
    pub detail: String,
}

impl Verdict {
    fn from_parts(check: &str, parts: Vec<Part>, detail: String) -> Verdict {
        let headline = parts
            .iter()
            .find(|p| !p.passed)
            .or_else(|| {
                parts
                    .iter()
                    .filter(|p| p.tolerance > 0.0)
                    .min_by(|a, b| (a.margin / a.tolerance).total_cmp(&(b.margin / b.tolerance)))
            })
            .or(parts.first());
        let (observed, expected, tolerance) = headline.map_or((0.0, 0.0, 0.0), |p| (p.observed, p.expected, p.tolerance));
        Verdict {
            check: check.to_string(),
            passed: !parts.is_empty() && parts.iter().all(|p| p.passed),
            observed,
            expected,
            tolerance,
            parts,
            detail,
        }
    }

    /// One line: `PASS name  observed=… expected=… tol=…  detail`.
    pub fn line(&self) -> String {
        format!(
            "{} {:<24} observed={:.6} expected={:.6} tol={:.6}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.check,
            self.observed,
            self.expected,
            self.tolerance,
            self.detail
        )
    }
}

/// `|observed − expected| ≤ tolerance`.
fn within(name: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Part {
    Part {
        name: name.into(),
        observed,
        expected,
        tolerance,
        margin: tolerance - (observed - expected).abs(),
        passed: (observed - expected).abs() <= tolerance,
    }
}

/// `observed ≤ expected + tolerance`.
fn at_most(name: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Part {
    Part {
        name: name.into(),
        observed,
        expected,
        tolerance,
        margin: expected + tolerance - observed,
        passed: observed <= expected + tolerance,
    }
}

/// `observed ≥ expected − tolerance`.
fn at_least(name: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Part {
    Part {
        name: name.into(),
        observed,
        expected,
        tolerance,
        margin: observed - (expected - tolerance),
        passed: observed >= expected - tolerance,
    }
}

pub struct CheckInfo {
    pub name: &'static str,
    pub summary: &'static str,
}

pub const CHECKS: [CheckInfo; 13] = [
    CheckInfo {
        name: "coupling-contraction",
        summary: "shared-stream pairs never separate: l1, linf, order, absorption",
    },
    CheckInfo {
        name: "oracle-stationary",
        summary: "n=2 simulator tails match the exact stationary law",
    },
    CheckInfo {
        name: "oracle-transient",
        summary: "n=2 replica law at t=2 matches uniformization in TV",
    },
    CheckInfo {
        name: "d1-max-law",
        summary: "d=1 maximum follows (1 - lambda^(m+1))^n",
    },
    CheckInfo {
        name: "balance-identity",
        summary: "lambda E[u(i-1)^d] = u(i) at n=1e4",
    },
    CheckInfo {
        name: "tail-law",
        summary: "u(i) close to lambda^(2^i - 1) at n=1e4",
    },
    CheckInfo {
        name: "max-concentration",
        summary: "maximum queue sits on two adjacent values at n=1e5",
    },
    CheckInfo {
        name: "equilibrium-domination",
        summary: "Pr(M >= k) <= n lambda^k and u(i) <= lambda^i",
    },
    CheckInfo {
        name: "mixing-upper",
        summary: "coupled replicas coalesce, exponential decay",
    },
    CheckInfo {
        name: "mixing-lower",
        summary: "empty-start deficit stays above lambda e^(-(1+lambda d)t)",
    },
    CheckInfo {
        name: "survival-bound",
        summary: "initial customers gone by 2n e^(-alpha t)",
    },
    CheckInfo {
        name: "meanfield",
        summary: "ODE fixed point, convergence, step halving, simulator agreement",
    },
    CheckInfo {
        name: "chernoff",
        summary: "Chernoff bounds dominate exact Poisson tails",
    },
];

pub fn check_names() -> impl Iterator<Item = &'static str> {
    CHECKS.iter().map(|c| c.name)
}

/// Shared state for a verification session.
pub struct Context {
    pub mode: Mode,
    pub seed: u64,
    equilibrium: OnceLock<std::result::Result<Equilibrium, SimError>>,
    mixing: OnceLock<std::result::Result<MixingProfile, SimError>>,
}

struct Equilibrium {
    params: ModelParams,
    snapshots: Vec<Snapshot>,
    estimate: TailEstimate,
}

impl Context {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            equilibrium: OnceLock::new(),
            mixing: OnceLock::new(),
        }
    }

    fn pick<T>(&self, full: T, quick: T) -> T {
        match self.mode {
            Mode::Full => full,
            Mode::Quick => quick,
        }
    }

    fn sub_seed(&self, check: usize) -> u64 {
        derive_seed(self.seed, 0x5645_5249, check as u64)
    }

    /// n = 10⁴, λ = 0.7, d = 2 spaced equilibrium samples.
    fn equilibrium(&self) -> Result<&Equilibrium> {
        self.equilibrium
            .get_or_init(|| {
                let params = ModelParams::new(10_000, 0.7, 2)?;
                let plan = SamplingPlan::default_for(&params, self.pick(2_000, 400));
                let snapshots = simulator::run_trajectory(&params, &QueueState::zeros(params.n), &plan, self.sub_seed(5))?;
                let estimate = estimate_tail(&snapshots)?;
                Ok(Equilibrium {
                    params,
                    snapshots,
                    estimate,
                })
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// n = 10³, λ = 0.7, d = 2 coupled mixing profile.
    fn mixing(&self) -> Result<&MixingProfile> {
        self.mixing
            .get_or_init(|| {
                let params = ModelParams::new(1_000, 0.7, 2)?;
                mixing_profile_for(&params, self.pick(500, 100), self.sub_seed(9))
            })
            .as_ref()
            .map_err(Clone::clone)
    }
}

/// Horizon by which coupled replicas should have met: `40 ln n / (1 − λ)`.
pub fn mixing_deadline(params: &ModelParams) -> f64 {
    simulator::default_warmup(params)
}

/// Grid `0, 0.25, …, 3` followed by unit steps up to [`mixing_deadline`].
pub fn mixing_grid(params: &ModelParams) -> Vec<f64> {
    let deadline = mixing_deadline(params);
    let mut grid: Vec<f64> = (0..=12).map(|i| i as f64 * 0.25).collect();
    let mut t = 4.0;
    while t < deadline {
        grid.push(t);
        t += 1.0;
    }
    grid.push(deadline);
    grid
}

fn mixing_profile_for(params: &ModelParams, replicas: usize, seed: u64) -> Result<MixingProfile> {
    coupling::mixing_profile(params, &mixing_grid(params), replicas, seed, None)
}

pub fn run_check(name: &str, ctx: &Context) -> Result<Verdict> {
    match name {
        "coupling-contraction" => coupling_contraction(ctx),
        "oracle-stationary" => oracle_stationary(ctx),
        "oracle-transient" => oracle_transient(ctx),
        "d1-max-law" => d1_max_law(ctx),
        "balance-identity" => balance_identity(ctx),
        "tail-law" => tail_law(ctx),
        "max-concentration" => max_concentration(ctx),
        "equilibrium-domination" => equilibrium_domination(ctx),
        "mixing-upper" => mixing_upper(ctx),
        "mixing-lower" => mixing_lower(ctx),
        "survival-bound" => survival_bound(ctx),
        "meanfield" => meanfield_check(ctx),
        "chernoff" => chernoff(ctx),
        other => Err(SimError::InvalidParams(format!(
            "unknown check '{other}'; known checks: {}",
            check_names().collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Run every check in registry order. Errors become failing verdicts.
pub fn run_all(ctx: &Context) -> Vec<Verdict> {
    check_names().map(|name| run_or_fail(name, ctx)).collect()
}

pub fn run_or_fail(name: &str, ctx: &Context) -> Verdict {
    run_check(name, ctx).unwrap_or_else(|e| Verdict {
        check: name.to_string(),
        passed: false,
        observed: f64::NAN,
        expected: f64::NAN,
        tolerance: f64::NAN,
        parts: Vec::new(),
        detail: format!("error: {e}"),
    })
}

fn coupling_contraction(ctx: &Context) -> Result<Verdict> {
    const N: usize = 50;
    const HORIZON: f64 = 200.0;
    let lambdas = [0.3, 0.5, 0.9];
    let pairs = ctx.pick(1_000, 200);
    let base = ctx.sub_seed(1);
    let runs: Vec<_> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let params = ModelParams::new(N, lambdas[i % 3], 1 + (i / 3) % 3)?;
            let seed = derive_seed(base, 0, i as u64);
            let x = coupling::random_state(N, 20, derive_seed(seed, 1, 0));
            // odd pairs are ordered so that order preservation is exercised
            let y = if i % 2 == 0 {
                coupling::random_state(N, 20, derive_seed(seed, 2, 0))
            } else {
                let extra = coupling::random_state(N, 20, derive_seed(seed, 2, 0));
                let lengths = x.lengths().iter().zip(extra.lengths()).map(|(a, b)| (a + b).min(20).max(*a)).collect();
                QueueState::from_lengths(lengths)
            };
            let stream = EventStream::seeded(params, derive_seed(seed, 3, 0), HORIZON)?;
            coupling::coupled_run(&[x, y], &stream, HORIZON, AuditPolicy::Full, false)
        })
        .collect::<Result<_>>()?;
    let violations: usize = runs.iter().map(|r| r.violations.len()).sum();
    let coalesced = runs.iter().filter(|r| r.pairs[0].coalesced_at.is_some()).count();
    let ordered = runs.iter().filter(|r| r.pairs[0].ordered.is_some()).count();
    let events: u64 = runs.iter().map(|r| r.events).sum();
    let parts = vec![within("violations", violations as f64, 0.0, 0.0)];
    Ok(Verdict::from_parts(
        "coupling-contraction",
        parts,
        format!("{pairs} pairs, {ordered} ordered, {coalesced} coalesced, {events} audited events"),
    ))
}

/// n = 2, λ = 0.5, d = 2, cap 12.
fn small_spec() -> Result<CappedChainSpec> {
    CappedChainSpec::new(2, 0.5, 2, 12)
}

fn oracle_stationary(ctx: &Context) -> Result<Verdict> {
    let spec = small_spec()?;
    let st = oracle::stationary(&spec)?;
    let u_pi = oracle::tail_fractions(&spec, &st.pi);
    let params = ModelParams::new(spec.n, spec.lambda, spec.d)?;
    let count = ctx.pick(100_000, 20_000);
    let plan = SamplingPlan::default_for(&params, count);
    let snaps = simulator::run_trajectory(&params, &QueueState::zeros(2), &plan, ctx.sub_seed(2))?;
    let est = estimate_tail(&snaps)?;
    let mut parts = vec![at_most("residual", st.residual, 0.0, 1e-12)];
    let mut compared = 0;
    for (k, &target) in u_pi.iter().enumerate().skip(1) {
        // only levels the sample actually resolves: at least 10 expected hits
        if count as f64 * spec.n as f64 * target < 10.0 {
            break;
        }
        parts.push(within(format!("u({k})"), est.u_hat(k), target, 3.0 * est.se(k)));
        compared += 1;
    }
    Ok(Verdict::from_parts(
        "oracle-stationary",
        parts,
        format!(
            "{count} samples, levels 1..={compared} compared, boundary mass {:.2e}, residual {:.2e}",
            st.boundary_mass, st.residual
        ),
    ))
}

fn oracle_transient(ctx: &Context) -> Result<Verdict> {
    let spec = small_spec()?;
    let t = 2.0;
    let exact = oracle::transient(&spec, &[0, 0], t)?;
    let params = ModelParams::new(spec.n, spec.lambda, spec.d)?;
    let replicas = ctx.pick(100_000, 50_000);
    let base = ctx.sub_seed(3);
    let ends: Vec<Option<usize>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let stream = EventStream::seeded(params, derive_seed(base, 0, r as u64), t)?;
            let x = evolve(&QueueState::zeros(2), &stream, t)?;
            Ok(spec.encode(x.lengths()).ok())
        })
        .collect::<Result<_>>()?;
    let mut empirical = vec![0.0; spec.num_states()];
    let mut outside = 0.0;
    for e in &ends {
        match e {
            Some(i) => empirical[*i] += 1.0 / replicas as f64,
            None => outside += 1.0 / replicas as f64,
        }
    }
    let tv = oracle::exact_tv(&empirical, &exact)? + 0.5 * outside;
    Ok(Verdict::from_parts(
        "oracle-transient",
        vec![at_most("tv", tv, 0.0, 0.03)],
        format!("{replicas} replicas at t = {t}"),
    ))
}

/// `sup_m |F̂(m) − F(m)|` over integer `m`, with `F̂` the empirical CDF of `maxima`.
pub fn kolmogorov_distance(maxima: &[usize], cdf: impl Fn(u64) -> f64) -> f64 {
    let mut hist = BTreeMap::new();
    for &m in maxima {
        *hist.entry(m).or_insert(0usize) += 1;
    }
    let top = maxima.iter().copied().max().unwrap_or(0);
    let mut acc = 0usize;
    let mut worst: f64 = 0.0;
    for m in 0..=top + 1 {
        acc += hist.get(&m).copied().unwrap_or(0);
        let emp = acc as f64 / maxima.len() as f64;
        worst = worst.max((emp - cdf(m as u64)).abs());
    }
    worst
}

fn d1_max_law(ctx: &Context) -> Result<Verdict> {
    let params = ModelParams::new(100, 0.5, 1)?;
    let cdf = |m| theory::d1_max_cdf(params.n as u64, params.lambda, m);
    let exact_count = ctx.pick(10_000, 5_000);
    let exact = simulator::d1_equilibrium_snapshots(&params, exact_count, ctx.sub_seed(4))?;
    let exact_max: Vec<usize> = exact.iter().map(Snapshot::max).collect();
    let ks_exact = kolmogorov_distance(&exact_max, cdf);

    let sim_count = ctx.pick(1_000, 500);
    let plan = SamplingPlan::new(simulator::default_warmup(&params), 50.0, sim_count)?;
    let sim = simulator::run_trajectory(&params, &QueueState::zeros(params.n), &plan, derive_seed(ctx.sub_seed(4), 1, 0))?;
    let sim_max: Vec<usize> = sim.iter().map(Snapshot::max).collect();
    let ks_sim = kolmogorov_distance(&sim_max, cdf);
    Ok(Verdict::from_parts(
        "d1-max-law",
        vec![
            at_most("ks_exact_samples", ks_exact, 0.0, 0.02),
            at_most("ks_simulated", ks_sim, 0.0, 0.05),
        ],
        format!("KS {ks_exact:.4} over {exact_count} geometric samples, {ks_sim:.4} over {sim_count} snapshots"),
    ))
}

fn balance_identity(ctx: &Context) -> Result<Verdict> {
    let eq = ctx.equilibrium()?;
    let n = eq.params.n as f64;
    let report = verify_balance(&eq.snapshots, &eq.params)?;
    let mut parts: Vec<Part> = report
        .residuals
        .iter()
        .take(6)
        .map(|r| within(format!("r({})", r.level), r.value, 0.0, 3.0 * r.se + 10.0 / n))
        .collect();
    parts.push(within("u(1)", eq.estimate.u_hat(1), eq.params.lambda, 0.005));
    Ok(Verdict::from_parts(
        "balance-identity",
        parts,
        format!(
            "{} samples, u(1) = {:.5}, warm-up z = {:.2}",
            eq.snapshots.len(),
            eq.estimate.u_hat(1),
            eq.estimate.warmup_z
        ),
    ))
}

fn tail_law(ctx: &Context) -> Result<Verdict> {
    let eq = ctx.equilibrium()?;
    let p = eq.params;
    let parts: Vec<Part> = (1..=eq.estimate.kmax() + 1)
        .map(|i| {
            within(
                format!("u({i})"),
                eq.estimate.u_hat(i),
                theory::level_tail(p.lambda, p.d, i),
                0.01 + 3.0 * eq.estimate.se(i),
            )
        })
        .collect();
    let worst = parts.iter().map(|q| (q.observed - q.expected).abs()).fold(0.0, f64::max);
    Ok(Verdict::from_parts(
        "tail-law",
        parts,
        format!("max |u(i) - lambda^(2^i-1)| = {worst:.5}"),
    ))
}

fn max_concentration(ctx: &Context) -> Result<Verdict> {
    let params = ModelParams::new(100_000, 0.7, 2)?;
    let count = ctx.pick(500, 50);
    let plan = SamplingPlan::default_for(&params, count);
    let snaps = simulator::run_trajectory(&params, &QueueState::zeros(params.n), &plan, ctx.sub_seed(7))?;
    let maxima: Vec<usize> = snaps.iter().map(Snapshot::max).collect();
    let frac = |pred: &dyn Fn(usize) -> bool| maxima.iter().filter(|&&m| pred(m)).count() as f64 / maxima.len() as f64;
    let mode = theory::predicted_mode(params.n as u64, params.lambda, params.d);
    let top = maxima.iter().copied().max().unwrap_or(0);
    let (best_lo, best_frac) = (0..=top)
        .map(|lo| (lo, frac(&|m| m == lo || m == lo + 1)))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    let predicted_pair = frac(&|m| m + 1 == mode || m == mode);
    let center = theory::lnln_over_lnd(params.n as u64, params.d);
    let near = frac(&|m| (m as f64 - center).abs() <= 4.0);
    let mut hist = BTreeMap::new();
    for &m in &maxima {
        *hist.entry(m).or_insert(0usize) += 1;
    }
    Ok(Verdict::from_parts(
        "max-concentration",
        vec![
            at_least("best_adjacent_pair", best_frac, 0.9, 0.0),
            at_least(format!("pair_{{{},{}}}", mode.saturating_sub(1), mode), predicted_pair, 0.9, 0.0),
            at_least("within_4_of_lnln", near, 0.99, 0.0),
        ],
        format!(
            "{count} snapshots, histogram {hist:?}, best pair {{{best_lo},{}}}, predicted mode {mode}",
            best_lo + 1
        ),
    ))
}

fn equilibrium_domination(ctx: &Context) -> Result<Verdict> {
    let eq = ctx.equilibrium()?;
    let p = eq.params;
    let mut parts = Vec::new();
    for k in 1..=eq.estimate.kmax() + 1 {
        let tail = eq.estimate.max_tail.get(k).copied().unwrap_or(Summary::EMPTY);
        parts.push(at_most(
            format!("Pr(M>={k})"),
            tail.mean,
            theory::bound_max_tail(p.n as u64, p.lambda, k as u32),
            4.0 * tail.se,
        ));
        parts.push(at_most(
            format!("u({k})"),
            eq.estimate.u_hat(k),
            p.lambda.powi(k as i32),
            4.0 * eq.estimate.se(k),
        ));
    }
    Ok(Verdict::from_parts(
        "equilibrium-domination",
        parts,
        format!("levels 1..={} on {} samples", eq.estimate.kmax() + 1, eq.snapshots.len()),
    ))
}

fn mixing_upper(ctx: &Context) -> Result<Verdict> {
    let prof = ctx.mixing()?;
    let last = prof.points.last().expect("grid is never empty");
    let mut parts = vec![
        at_most("pr_neq_at_deadline", last.pr_neq, 0.0, 0.05),
        within("order_violations", prof.order_violations as f64, 0.0, 0.0),
    ];
    let detail = match &prof.fit {
        Some(fit) => {
            parts.push(at_least("r_squared", fit.r_squared, 0.95, 0.0));
            format!(
                "{} replicas, Pr(X != Y) = {:.4} at t = {:.1}, rate {:.4} over t in [{}, {}]",
                prof.replicas, last.pr_neq, last.t, fit.rate, prof.points[fit.first].t, prof.points[fit.last].t
            )
        }
        None => {
            parts.push(at_least("r_squared", f64::NAN, 0.95, 0.0));
            "no decaying segment found".to_string()
        }
    };
    Ok(Verdict::from_parts("mixing-upper", parts, detail))
}

fn mixing_lower(ctx: &Context) -> Result<Verdict> {
    let prof = ctx.mixing()?;
    let parts: Vec<Part> = prof
        .points
        .iter()
        .filter(|p| p.t <= 3.0 + 1e-12)
        .map(|p| {
            // deficit + 3 SE ≥ bound
            at_least(format!("t={}", p.t), p.deficit + 3.0 * p.se_deficit, p.bound_lower, 0.0)
        })
        .collect();
    Ok(Verdict::from_parts(
        "mixing-lower",
        parts,
        format!("{} replicas, grid 0..=3 step 0.25", prof.replicas),
    ))
}

fn survival_bound(ctx: &Context) -> Result<Verdict> {
    // survival depends only on the departure clock and selections, so d is immaterial
    let params = ModelParams::new(100, 0.5, 2)?;
    let replicas = ctx.pick(2_000, 500);
    let times = [20.0, 40.0, 60.0];
    let horizon = 60.0;
    let base = ctx.sub_seed(11);
    let outcomes: Vec<Survival> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(base, 0, r as u64);
            let x0 = theory::d1_equilibrium_sample(params.n, params.lambda, derive_seed(seed, 1, 0))?;
            let stream = EventStream::seeded(params, derive_seed(seed, 2, 0), horizon)?;
            simulator::survival_time(&x0, &stream, horizon)
        })
        .collect::<Result<_>>()?;
    let parts: Vec<Part> = times
        .iter()
        .map(|&t| {
            let ind: Vec<f64> = outcomes.iter().map(|s| if s.survives_past(t) { 1.0 } else { 0.0 }).collect();
            let s = iid_summary(&ind);
            at_most(format!("t={t}"), s.mean, theory::bound_survival(params.n as u64, params.lambda, t), 3.0 * s.se)
        })
        .collect();
    Ok(Verdict::from_parts(
        "survival-bound",
        parts,
        format!("{replicas} replicas, alpha = {:.5}", theory::survival_rate(params.lambda)),
    ))
}

fn meanfield_check(ctx: &Context) -> Result<Verdict> {
    let (lambda, d, k) = (0.5, 2, 12);
    let fp = meanfield::fixed_point(lambda, d, k)?;
    let residual = meanfield::derivative(&fp, lambda, d).iter().map(|v| v.abs()).fold(0.0, f64::max);
    let run = meanfield::integrate(&meanfield::MeanFieldState::zeros(k)?, lambda, d, 50.0, meanfield::DEFAULT_DT)?;
    let gap = run.trajectory.last().max_abs_diff(&fp);
    let mut parts = vec![
        at_most("fixed_point_residual", residual, 0.0, 1e-12),
        at_most("distance_at_T50", gap, 0.0, 1e-6),
        at_most("step_halving", run.halving_error, 0.0, 1e-9),
    ];
    let params = ModelParams::new(10_000, lambda, d)?;
    let plan = SamplingPlan::default_for(&params, ctx.pick(500, 200));
    let snaps = simulator::run_trajectory(&params, &QueueState::zeros(params.n), &plan, ctx.sub_seed(12))?;
    let est = estimate_tail(&snaps)?;
    for i in 1..=est.kmax() + 1 {
        parts.push(within(format!("u({i})"), est.u_hat(i), fp.v(i), 0.01 + 3.0 * est.se(i)));
    }
    Ok(Verdict::from_parts(
        "meanfield",
        parts,
        format!(
            "residual {residual:.1e}, |v(50) - v*| = {gap:.1e}, halving {:.1e}, {} snapshots at n = 1e4",
            run.halving_error,
            snaps.len()
        ),
    ))
}

/// `Pr(X ≤ k)` for `X ~ Poisson(μ)` by summing the mass function.
fn poisson_cdf(mu: f64, k: i64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    let mut p = (-mu).exp();
    let mut acc = p;
    for j in 1..=k {
        p *= mu / j as f64;
        acc += p;
    }
    acc.min(1.0)
}

/// `Pr(X ≥ k)` summed upward until the terms vanish.
fn poisson_upper(mu: f64, k: i64) -> f64 {
    if k <= 0 {
        return 1.0;
    }
    // pmf at k via the recursion from 0
    let mut p = (-mu).exp();
    for j in 1..=k {
        p *= mu / j as f64;
    }
    let mut acc = 0.0;
    let mut j = k;
    while p > 0.0 && (p > acc * 1e-18 || (j as f64) < mu) {
        acc += p;
        j += 1;
        p *= mu / j as f64;
    }
    acc.min(1.0)
}

fn chernoff(_ctx: &Context) -> Result<Verdict> {
    let mus = [0.5, 1.0, 5.0, 20.0, 50.0];
    let mut worst_ratio: f64 = 0.0;
    let mut failures = 0usize;
    let mut comparisons = 0usize;
    let mut first_failure = None;
    for &mu in &mus {
        for e in 1..=20 {
            let eps = e as f64 * 0.05;
            // integer thresholds rounded toward the larger exact tail
            let lower_k = ((1.0 - eps) * mu + 1e-9).floor() as i64;
            let exact_lower = poisson_cdf(mu, lower_k);
            let upper_k = ((1.0 + eps) * mu - 1e-9).ceil() as i64;
            let exact_upper = poisson_upper(mu, upper_k);
            for (exact, bound) in [
                (exact_lower, theory::chernoff_lower(mu, eps)?),
                (exact_upper, theory::chernoff_upper(mu, eps)?),
            ] {
                comparisons += 1;
                worst_ratio = worst_ratio.max(exact / bound);
                if exact > bound {
                    failures += 1;
                    first_failure.get_or_insert((mu, eps, exact, bound));
                }
            }
        }
        let start = (2.0 * std::f64::consts::E * mu).ceil() as i64;
        for x in start..start + 60 {
            let exact = poisson_upper(mu, x);
            let bound = theory::chernoff_2x(mu, x as f64)?;
            comparisons += 1;
            worst_ratio = worst_ratio.max(exact / bound);
            if exact > bound {
                failures += 1;
                first_failure.get_or_insert((mu, x as f64, exact, bound));
            }
        }
    }
    Ok(Verdict::from_parts(
        "chernoff",
        vec![within("violations", failures as f64, 0.0, 0.0)],
        match first_failure {
            None => format!("{comparisons} comparisons, max exact/bound = {worst_ratio:.4}"),
            Some((mu, a, exact, bound)) => {
                format!("{comparisons} comparisons; first failure mu={mu} arg={a}: exact {exact:.3e} > bound {bound:.3e}")
            }
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_are_unique_and_dispatch() {
        let names: Vec<_> = check_names().collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 13);
        let ctx = Context::new(Mode::Quick, 1);
        assert!(run_check("no-such-check", &ctx).is_err());
        assert!(!run_or_fail("no-such-check", &ctx).passed);
    }

    #[test]
    fn poisson_tails_against_closed_forms() {
        assert!((poisson_cdf(1.0, 0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((poisson_upper(1.0, 1) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        for &mu in &[0.5, 5.0, 50.0] {
            for k in 0..120 {
                let s = poisson_cdf(mu, k - 1) + poisson_upper(mu, k);
                assert!((s - 1.0).abs() < 1e-12, "{mu} {k} {s}");
            }
        }
        // the worked example: mu = 1, x = 6
        assert!((poisson_upper(1.0, 6) - 5.94e-4).abs() < 1e-6);
    }

    #[test]
    fn kolmogorov_distance_examples() {
        assert_eq!(kolmogorov_distance(&[0, 0, 1, 1], |m| if m == 0 { 0.5 } else { 1.0 }), 0.0);
        let d = kolmogorov_distance(&[2, 2], |m| (m as f64 + 1.0) / 4.0);
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn verdict_headline_prefers_failure() {
        let v = Verdict::from_parts(
            "x",
            vec![within("a", 1.0, 1.0, 0.1), within("b", 2.0, 1.0, 0.1)],
            String::new(),
        );
        assert!(!v.passed);
        assert_eq!(v.observed, 2.0);
        assert!(v.line().starts_with("FAIL x"));
    }

    #[test]
    fn cheap_checks_pass() {
        let ctx = Context::new(Mode::Quick, DEFAULT_SEED);
        for name in ["chernoff", "oracle-transient"] {
            let v = run_check(name, &ctx).unwrap();
            assert!(v.passed, "{}", v.line());
        }
    }
}
