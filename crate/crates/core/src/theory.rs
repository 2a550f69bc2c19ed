//! Closed-form predictions and probability bounds.
//!
//! Powers of `λ` with exponents `1 + d + … + d^{i-1}` are handled as
//! logarithms throughout, since the exponent grows doubly exponentially in `i`.

use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::QueueState;
use crate::rng::aux_rng;

/// `1 + d + … + d^{i-1}`, i.e. `(d^i − 1)/(d − 1)` (and `i` when `d = 1`).
pub fn level_exponent(d: usize, i: usize) -> f64 {
    let d = d as f64;
    let mut term = 1.0;
    let mut sum = 0.0;
    for _ in 0..i {
        sum += term;
        term *= d;
    }
    sum
}

/// `ln λ^{1 + d + … + d^{i-1}}`.
pub fn ln_level_tail(lambda: f64, d: usize, i: usize) -> f64 {
    let e = level_exponent(d, i);
    if e == 0.0 {
        0.0
    } else {
        e * lambda.ln()
    }
}

/// Limiting fraction of queues with at least `i` customers, `λ^{(d^i−1)/(d−1)}`.
pub fn level_tail(lambda: f64, d: usize, i: usize) -> f64 {
    lambda.powf(level_exponent(d, i))
}

/// `ln(n^{-1/2} ln² n)`, the threshold in the definition of `i_d(n)`.
fn ln_threshold(n: u64) -> f64 {
    let ln_n = (n as f64).ln();
    -0.5 * ln_n + 2.0 * ln_n.ln()
}

/// Least `i ≥ 0` with `λ^{(d^i−1)/(d−1)} < n^{-1/2} ln² n`.
pub fn compute_i_d(n: u64, lambda: f64, d: usize) -> Result<usize> {
    if d < 2 || n < 2 {
        return Err(SimError::Domain(format!(
            "i_d(n) needs d >= 2 and n >= 2 (got d = {d}, n = {n})"
        )));
    }
    check_lambda(lambda)?;
    let thr = ln_threshold(n);
    let mut i = 0;
    while ln_level_tail(lambda, d, i) >= thr {
        i += 1;
    }
    Ok(i)
}

/// `m_2 = i_2 + 1`; `m_d = i_d` for `d ≥ 3`.
pub fn compute_m_d(n: u64, lambda: f64, d: usize) -> Result<usize> {
    if d == 1 {
        return Err(SimError::Domain(
            "m_d(n) is undefined for d = 1; use the d = 1 maximum law (d1_max_cdf)".into(),
        ));
    }
    let i = compute_i_d(n, lambda, d)?;
    Ok(if d == 2 { i + 1 } else { i })
}

/// `i_d(n) = 0` means the threshold exceeds 1: `n` is too small for the
/// asymptotic two-point description to say anything.
pub fn is_pre_asymptotic(n: u64, lambda: f64, d: usize) -> bool {
    compute_i_d(n, lambda, d).map(|i| i == 0).unwrap_or(true)
}

/// Desk-scale mode predictor `max{i : n λ^{(d^i−1)/(d−1)} ≥ 1}`.
pub fn predicted_mode(n: u64, lambda: f64, d: usize) -> usize {
    let ln_n = (n as f64).ln();
    let mut i = 0;
    while ln_n + ln_level_tail(lambda, d, i + 1) >= 0.0 {
        i += 1;
        if d == 1 && i > 1_000_000 {
            break;
        }
    }
    i
}

/// `ln ln n / ln d`.
pub fn lnln_over_lnd(n: u64, d: usize) -> f64 {
    (n as f64).ln().ln() / (d as f64).ln()
}

/// `Pr(M ≤ m) = (1 − λ^{m+1})^n` for `d = 1` in equilibrium.
pub fn d1_max_cdf(n: u64, lambda: f64, m: u64) -> f64 {
    let p = lambda.powf((m + 1) as f64);
    (n as f64 * (-p).ln_1p()).exp()
}

/// The two-sided exponential bounds on [`d1_max_cdf`]:
/// `exp(−nλ^{m+1}/(1−λ^{m+1})) ≤ Pr(M ≤ m) ≤ exp(−nλ^{m+1})`.
pub fn d1_max_cdf_bounds(n: u64, lambda: f64, m: u64) -> (f64, f64) {
    let p = lambda.powf((m + 1) as f64);
    let nf = n as f64;
    ((-nf * p / (1.0 - p)).exp(), (-nf * p).exp())
}

/// Exact equilibrium sample for `d = 1`: `n` i.i.d. geometric lengths with
/// `Pr(X = k) = (1 − λ)λ^k`.
pub fn d1_equilibrium_sample(n: usize, lambda: f64, seed: u64) -> Result<QueueState> {
    check_lambda(lambda)?;
    let geo = Geometric::new(1.0 - lambda).map_err(|e| SimError::Domain(e.to_string()))?;
    let mut rng = aux_rng(seed);
    let lengths = (0..n)
        .map(|_| u32::try_from(geo.sample(&mut rng)).unwrap_or(u32::MAX))
        .collect();
    Ok(QueueState::from_lengths(lengths))
}

/// `nλ^k`, the equilibrium bound on `Pr(M ≥ k)`. May exceed 1.
pub fn bound_max_tail(n: u64, lambda: f64, k: u32) -> f64 {
    n as f64 * lambda.powi(k as i32)
}

/// `α = min{¼ ln(1/λ), ¼}`.
pub fn survival_rate(lambda: f64) -> f64 {
    (0.25 * (1.0 / lambda).ln()).min(0.25)
}

/// `2n e^{−αt}`, the bound on the probability that some initial customer is
/// still present at time `t`. May exceed 1.
pub fn bound_survival(n: u64, lambda: f64, t: f64) -> f64 {
    2.0 * n as f64 * (-survival_rate(lambda) * t).exp()
}

/// A bound value together with whether it is vacuous (≥ 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub vacuous: bool,
}

impl Bound {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            vacuous: value >= 1.0,
        }
    }

    pub fn clamped(&self) -> f64 {
        self.value.min(1.0)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(SimError::Domain(format!("epsilon must lie in [0, 1], got {eps}")));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(SimError::Domain(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    Ok(())
}

/// Lower-tail bound `Pr(X − μ ≤ −εμ) ≤ e^{−ε²μ/2}` for binomial/Poisson `X`.
pub fn chernoff_lower(mu: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok((-0.5 * eps * eps * mu).exp())
}

/// Upper-tail bound `Pr(X − μ ≥ εμ) ≤ e^{−ε²μ/3}`.
pub fn chernoff_upper(mu: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok((-eps * eps * mu / 3.0).exp())
}

/// `Pr(X ≥ x) ≤ 2^{−x}`, valid for `x ≥ 2eμ`.
pub fn chernoff_2x(mu: f64, x: f64) -> Result<f64> {
    if x < 2.0 * std::f64::consts::E * mu {
        return Err(SimError::Domain(format!(
            "the 2^-x bound needs x >= 2e*mu = {}, got {x}",
            2.0 * std::f64::consts::E * mu
        )));
    }
    Ok(2f64.powf(-x))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelPrediction {
    pub level: usize,
    /// `λ^{(d^i−1)/(d−1)}`
    pub fraction: f64,
    /// `n λ^{(d^i−1)/(d−1)}`
    pub expected_count: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionReport {
    pub n: u64,
    pub lambda: f64,
    pub d: usize,
    pub i_d: Option<usize>,
    pub m_d: Option<usize>,
    pub pre_asymptotic: bool,
    pub predicted_mode: usize,
    pub lnln_n_over_ln_d: Option<f64>,
    pub levels: Vec<LevelPrediction>,
    /// `(m, Pr(M ≤ m))` for the same `n, λ` with a single choice.
    pub d1_max_cdf: Vec<(u64, f64)>,
}

pub fn prediction_report(n: u64, lambda: f64, d: usize) -> Result<PredictionReport> {
    check_lambda(lambda)?;
    if n == 0 || d == 0 {
        return Err(SimError::Domain("n and d must be positive".into()));
    }
    let (i_d, m_d) = if d >= 2 && n >= 2 {
        (
            Some(compute_i_d(n, lambda, d)?),
            Some(compute_m_d(n, lambda, d)?),
        )
    } else {
        (None, None)
    };
    let mode = predicted_mode(n, lambda, d);
    let levels = (0..=mode + 2)
        .map(|i| {
            let fraction = level_tail(lambda, d, i);
            LevelPrediction {
                level: i,
                fraction,
                expected_count: fraction * n as f64,
            }
        })
        .collect();
    let d1_mode = predicted_mode(n, lambda, 1) as u64;
    let d1_max_cdf = (0..=d1_mode + 10).map(|m| (m, d1_max_cdf(n, lambda, m))).collect();
    Ok(PredictionReport {
        n,
        lambda,
        d,
        i_d,
        m_d,
        pre_asymptotic: i_d == Some(0),
        predicted_mode: mode,
        lnln_n_over_ln_d: (d >= 2 && n >= 3).then(|| lnln_over_lnd(n, d)),
        levels,
        d1_max_cdf,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdScanRow {
    pub n: u64,
    pub m_d: usize,
    pub lnln_over_lnd: f64,
    pub deviation: f64,
}

/// `|m_d(n) − ln ln n / ln d|` over `n = 10^3, …, 10^9`, restricted to the
/// non-degenerate regime `n^{-1/2} ln² n < λ`. Reported, not asserted.
pub fn md_deviation_scan(lambda: f64, d: usize) -> Result<Vec<MdScanRow>> {
    let mut rows = Vec::new();
    for e in 3..=9u32 {
        let n = 10u64.pow(e);
        if ln_threshold(n) >= lambda.ln() {
            continue;
        }
        let m = compute_m_d(n, lambda, d)?;
        let r = lnln_over_lnd(n, d);
        rows.push(MdScanRow {
            n,
            m_d: m,
            lnln_over_lnd: r,
            deviation: (m as f64 - r).abs(),
        });
    }
    Ok(rows)
}
