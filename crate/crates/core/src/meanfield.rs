//! Mean-field limit: the ODE system for the fraction `v(k)` of queues with at
//! least `k` customers,
//!
//! `dv(k)/dt = λ(v(k−1)^d − v(k)^d) − (v(k) − v(k+1))`, `v(0) = 1`,
//!
//! truncated at level `K` with `v(K+1) = 0`, integrated by fixed-step RK4.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::theory::{ln_level_tail, level_tail};

/// Slack allowed on the ordering `1 ≥ v(1) ≥ … ≥ v(K) ≥ 0` during integration.
pub const MONOTONE_TOL: f64 = 1e-9;

pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    /// `v(1..=K)`.
    values: Vec<f64>,
}

impl MeanFieldState {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(SimError::InvalidParams("truncation level K must be >= 1".into()));
        }
        let s = Self { values };
        s.check(0.0)?;
        Ok(s)
    }

    pub fn zeros(k: usize) -> Result<Self> {
        Self::new(vec![0.0; k])
    }

    pub fn truncation(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `v(k)` with the boundary conventions `v(0) = 1` and `v(k) = 0` for `k > K`.
    pub fn v(&self, k: usize) -> f64 {
        match k {
            0 => 1.0,
            k => self.values.get(k - 1).copied().unwrap_or(0.0),
        }
    }

    fn check(&self, tol: f64) -> Result<()> {
        let mut prev = 1.0;
        for (i, &v) in self.values.iter().enumerate() {
            if !v.is_finite() || v > prev + tol {
                return Err(SimError::Numerical(format!(
                    "monotonicity violated at level {}: v = {v} above v({}) = {prev}",
                    i + 1,
                    i
                )));
            }
            prev = v;
        }
        if prev < -tol {
            return Err(SimError::Numerical(format!("v(K) = {prev} is negative")));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &MeanFieldState) -> f64 {
        let k = self.truncation().max(other.truncation());
        (1..=k)
            .map(|i| (self.v(i) - other.v(i)).abs())
            .fold(0.0, f64::max)
    }
}

/// `dv(k)/dt` for `k = 1..=K`.
pub fn derivative(v: &MeanFieldState, lambda: f64, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.truncation()];
    derivative_into(v.values(), lambda, d as i32, &mut out);
    out
}

fn derivative_into(v: &[f64], lambda: f64, d: i32, out: &mut [f64]) {
    let k_max = v.len();
    let mut prev_pow = 1.0; // v(0)^d
    for k in 0..k_max {
        let cur = v[k];
        let cur_pow = cur.powi(d);
        let next = if k + 1 < k_max { v[k + 1] } else { 0.0 };
        out[k] = lambda * (prev_pow - cur_pow) - (cur - next);
        prev_pow = cur_pow;
    }
}

/// `v(k) = λ^{(d^k−1)/(d−1)}` for `k = 1..=K` (`λ^k` when `d = 1`).
pub fn fixed_point(lambda: f64, d: usize, k: usize) -> Result<MeanFieldState> {
    if k == 0 {
        return Err(SimError::InvalidParams("truncation level K must be >= 1".into()));
    }
    MeanFieldState::new((1..=k).map(|i| level_tail(lambda, d, i)).collect())
}

/// Smallest `K` with `λ^{(d^K−1)/(d−1)} < 1e−12`.
pub fn default_truncation(lambda: f64, d: usize) -> usize {
    let target = 1e-12f64.ln();
    (1..).find(|&k| ln_level_tail(lambda, d, k) < target).unwrap()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MeanFieldState>,
}

impl Trajectory {
    pub fn last(&self) -> &MeanFieldState {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Integration {
    pub trajectory: Trajectory,
    /// Max over the coarse grid of `‖v_h − v_{h/2}‖∞`.
    pub halving_error: f64,
}

fn rk4(v0: &MeanFieldState, lambda: f64, d: usize, horizon: f64, steps: usize) -> Result<Trajectory> {
    let k = v0.truncation();
    let h = horizon / steps as f64;
    let d = d as i32;
    let mut v = v0.values.clone();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(v0.clone());
    for step in 1..=steps {
        derivative_into(&v, lambda, d, &mut k1);
        for i in 0..k {
            tmp[i] = v[i] + 0.5 * h * k1[i];
        }
        derivative_into(&tmp, lambda, d, &mut k2);
        for i in 0..k {
            tmp[i] = v[i] + 0.5 * h * k2[i];
        }
        derivative_into(&tmp, lambda, d, &mut k3);
        for i in 0..k {
            tmp[i] = v[i] + h * k3[i];
        }
        derivative_into(&tmp, lambda, d, &mut k4);
        for i in 0..k {
            v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let state = MeanFieldState { values: v.clone() };
        let t = step as f64 * h;
        state.check(MONOTONE_TOL).map_err(|e| {
            SimError::Numerical(format!("at t = {t}: {e} (step {h} too large or K too small?)"))
        })?;
        times.push(t);
        states.push(state);
    }
    Ok(Trajectory { times, states })
}

/// Integrate from `v0` over `[0, horizon]` with `ceil(horizon/dt)` equal steps,
/// and compare against a run with half the step size.
pub fn integrate(v0: &MeanFieldState, lambda: f64, d: usize, horizon: f64, dt: f64) -> Result<Integration> {
    if !(dt > 0.0) || !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(SimError::InvalidParams(format!(
            "need dt > 0 and a finite horizon >= 0 (dt = {dt}, T = {horizon})"
        )));
    }
    v0.check(0.0)?;
    let steps = ((horizon / dt) - 1e-9).ceil().max(0.0) as usize;
    if steps == 0 {
        return Ok(Integration {
            trajectory: Trajectory {
                times: vec![0.0],
                states: vec![v0.clone()],
            },
            halving_error: 0.0,
        });
    }
    let coarse = rk4(v0, lambda, d, horizon, steps)?;
    let fine = rk4(v0, lambda, d, horizon, 2 * steps)?;
    let halving_error = coarse
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| s.max_abs_diff(&fine.states[2 * i]))
        .fold(0.0, f64::max);
    Ok(Integration {
        trajectory: coarse,
        halving_error,
    })
}
