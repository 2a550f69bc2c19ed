//! Exact computations for tiny systems on the capped state space `{0..C}^n`.
//!
//! Arrivals that would push a queue above the cap are lost; the probability
//! mass on the boundary is reported so callers can bound the truncation error.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Hard limit on the number of enumerated states.
pub const MAX_STATES: usize = 1_000_000;

/// Largest state space solved by dense LU; larger chains use power iteration.
pub const DENSE_LIMIT: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CappedChainSpec {
    pub n: usize,
    pub lambda: f64,
    pub d: usize,
    pub cap: u32,
}

impl CappedChainSpec {
    pub fn new(n: usize, lambda: f64, d: usize, cap: u32) -> Result<Self> {
        let s = Self { n, lambda, d, cap };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(SimError::InvalidParams("n and d must be positive".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(SimError::InvalidParams(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        let states = u128::from(self.cap + 1).checked_pow(self.n as u32).unwrap_or(u128::MAX);
        if states > MAX_STATES as u128 {
            return Err(SimError::StateSpaceTooLarge {
                states,
                limit: MAX_STATES,
            });
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        (self.cap as usize + 1).pow(self.n as u32)
    }

    /// Lexicographic index with queue 1 most significant.
    pub fn encode(&self, x: &[u32]) -> Result<usize> {
        if x.len() != self.n {
            return Err(SimError::DimensionMismatch(format!(
                "state of length {} for n = {}",
                x.len(),
                self.n
            )));
        }
        let base = self.cap as usize + 1;
        x.iter().try_fold(0usize, |acc, &v| {
            if v > self.cap {
                Err(SimError::Domain(format!("queue length {v} exceeds cap {}", self.cap)))
            } else {
                Ok(acc * base + v as usize)
            }
        })
    }

    pub fn decode(&self, mut index: usize) -> Vec<u32> {
        let base = self.cap as usize + 1;
        let mut x = vec![0u32; self.n];
        for slot in x.iter_mut().rev() {
            *slot = (index % base) as u32;
            index /= base;
        }
        x
    }

    pub fn states(&self) -> impl Iterator<Item = Vec<u32>> + '_ {
        (0..self.num_states()).map(|i| self.decode(i))
    }
}

/// Probability that an ordered `d`-tuple of uniform choices routes to each
/// queue under the first-listed-minimum rule, by enumerating all `n^d` tuples.
pub fn choice_probabilities(x: &[u32], d: usize) -> Vec<f64> {
    let n = x.len();
    let total = n.pow(d as u32);
    let mut counts = vec![0usize; n];
    let mut tuple = vec![0usize; d];
    for _ in 0..total {
        let mut best = tuple[0];
        for &c in &tuple[1..] {
            if x[c] < x[best] {
                best = c;
            }
        }
        counts[best] += 1;
        // odometer increment, last position fastest
        for slot in tuple.iter_mut().rev() {
            *slot += 1;
            if *slot < n {
                break;
            }
            *slot = 0;
        }
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Sparse CTMC generator: off-diagonal rates per row plus the diagonal.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    rows: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn off_diagonal(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.diag[i]
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        self.rows[i]
            .iter()
            .filter(|&&(k, _)| k == j)
            .map(|&(_, r)| r)
            .sum()
    }

    pub fn max_outflow(&self) -> f64 {
        self.diag.iter().map(|d| -d).fold(0.0, f64::max)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.diag[i] + self.rows[i].iter().map(|&(_, r)| r).sum::<f64>()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let s = self.size();
        let mut m = DMatrix::zeros(s, s);
        for i in 0..s {
            m[(i, i)] = self.diag[i];
            for &(j, r) in &self.rows[i] {
                m[(i, j)] += r;
            }
        }
        m
    }

    /// Row vector times generator: `p Q`.
    pub fn left_mul(&self, p: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = p.iter().zip(&self.diag).map(|(a, b)| a * b).collect();
        for (i, row) in self.rows.iter().enumerate() {
            let pi = p[i];
            if pi == 0.0 {
                continue;
            }
            for &(j, r) in row {
                out[j] += pi * r;
            }
        }
        out
    }
}

pub fn build_generator(spec: &CappedChainSpec) -> Result<GeneratorMatrix> {
    spec.validate()?;
    let s = spec.num_states();
    let base = spec.cap as usize + 1;
    // stride of queue j in the lexicographic index
    let strides: Vec<usize> = (0..spec.n).map(|j| base.pow((spec.n - 1 - j) as u32)).collect();
    let arrival_rate = spec.lambda * spec.n as f64;
    let mut rows = Vec::with_capacity(s);
    let mut diag = Vec::with_capacity(s);
    for i in 0..s {
        let x = spec.decode(i);
        let p = choice_probabilities(&x, spec.d);
        let mut row = Vec::with_capacity(2 * spec.n);
        let mut out = 0.0;
        for j in 0..spec.n {
            if x[j] < spec.cap && p[j] > 0.0 {
                let r = arrival_rate * p[j];
                row.push((i + strides[j], r));
                out += r;
            }
            if x[j] > 0 {
                row.push((i - strides[j], 1.0));
                out += 1.0;
            }
        }
        rows.push(row);
        diag.push(-out);
    }
    Ok(GeneratorMatrix { rows, diag })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stationary {
    pub pi: Vec<f64>,
    /// `‖πQ‖∞`
    pub residual: f64,
    /// Mass on states with some queue at the cap.
    pub boundary_mass: f64,
    pub method: String,
}

fn residual(gen: &GeneratorMatrix, pi: &[f64]) -> f64 {
    gen.left_mul(pi).iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Solve `πQ = 0`, `Σπ = 1` by dense LU with one refinement step.
pub fn stationary_dense(gen: &GeneratorMatrix) -> Result<Vec<f64>> {
    let s = gen.size();
    if s == 1 {
        return Ok(vec![1.0]);
    }
    let mut a = gen.to_dense().transpose();
    for j in 0..s {
        a[(s - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(s);
    b[s - 1] = 1.0;
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&b)
        .ok_or_else(|| SimError::Numerical("singular system: generator is not irreducible".into()))?;
    let r = &b - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(x.iter().copied().collect())
}

/// Power iteration on the uniformized chain `I + Q/Λ` with `Λ` 5% above the
/// largest outflow (keeps every state aperiodic).
pub fn stationary_power(gen: &GeneratorMatrix, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let s = gen.size();
    let rate = 1.05 * gen.max_outflow();
    if rate == 0.0 {
        return Ok(vec![1.0 / s as f64; s]);
    }
    let mut p = vec![1.0 / s as f64; s];
    for _ in 0..max_iter {
        let pq = gen.left_mul(&p);
        let res = pq.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (pi, q) in p.iter_mut().zip(&pq) {
            *pi += q / rate;
        }
        let sum: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= sum);
        if res < tol {
            return Ok(p);
        }
    }
    Err(SimError::Numerical(format!(
        "power iteration did not reach residual {tol} in {max_iter} iterations"
    )))
}

pub fn stationary(spec: &CappedChainSpec) -> Result<Stationary> {
    let gen = build_generator(spec)?;
    let (pi, method) = if gen.size() <= DENSE_LIMIT {
        (stationary_dense(&gen)?, "dense-lu")
    } else {
        (stationary_power(&gen, 1e-13, 5_000_000)?, "power-iteration")
    };
    let boundary_mass = boundary_mass(spec, &pi);
    Ok(Stationary {
        residual: residual(&gen, &pi),
        pi,
        boundary_mass,
        method: method.into(),
    })
}

pub fn boundary_mass(spec: &CappedChainSpec, p: &[f64]) -> f64 {
    p.iter()
        .enumerate()
        .filter(|(i, _)| spec.decode(*i).contains(&spec.cap))
        .map(|(_, v)| v)
        .sum()
}

/// Default truncation tolerance for the Poisson series in [`transient`].
pub const TRANSIENT_TOL: f64 = 1e-12;

/// Distribution at time `t` from the point mass at `x0`, by uniformization.
pub fn transient(spec: &CappedChainSpec, x0: &[u32], t: f64) -> Result<Vec<f64>> {
    transient_with_tol(spec, x0, t, TRANSIENT_TOL)
}

pub fn transient_with_tol(spec: &CappedChainSpec, x0: &[u32], t: f64, tol: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(SimError::Domain(format!("time must be nonnegative, got {t}")));
    }
    let gen = build_generator(spec)?;
    let start = spec.encode(x0)?;
    let mut p = vec![0.0; gen.size()];
    p[start] = 1.0;
    let rate = gen.max_outflow();
    let mass = rate * t;
    if mass == 0.0 {
        return Ok(p);
    }
    if mass > 1e8 {
        return Err(SimError::Numerical(format!(
            "uniformization needs Λt = {mass:.3e} terms; refusing (overflow guard)"
        )));
    }
    let ln_mass = mass.ln();
    let mut ln_w = -mass; // ln Poisson(0; Λt)
    let mut acc: Vec<f64> = p.iter().map(|v| v * ln_w.exp()).collect();
    let mut k = 0usize;
    loop {
        // p ← p (I + Q/Λ)
        let pq = gen.left_mul(&p);
        for (pi, q) in p.iter_mut().zip(&pq) {
            *pi += q / rate;
        }
        k += 1;
        ln_w += ln_mass - (k as f64).ln();
        let w = ln_w.exp();
        if w > 0.0 {
            for (a, pi) in acc.iter_mut().zip(&p) {
                *a += w * pi;
            }
        }
        // remaining tail Σ_{j>k} w_j ≤ w_{k+1} / (1 − Λt/(k+2)) once k + 2 > Λt
        let next_k = (k + 1) as f64;
        if next_k + 1.0 > mass {
            let w_next = (ln_w + ln_mass - next_k.ln()).exp();
            let tail = w_next / (1.0 - mass / (next_k + 1.0));
            if tail < tol {
                break;
            }
        }
    }
    Ok(acc)
}

/// `½ Σ |p − q|`.
pub fn exact_tv(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(SimError::DimensionMismatch(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `Σ_x p(x) u(k, x)` for `k = 0..=C`.
pub fn tail_fractions(spec: &CappedChainSpec, p: &[f64]) -> Vec<f64> {
    let mut u = vec![0.0; spec.cap as usize + 1];
    for (i, &pi) in p.iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        let x = spec.decode(i);
        for (k, uk) in u.iter_mut().enumerate() {
            let ell = x.iter().filter(|&&v| v as usize >= k).count();
            *uk += pi * ell as f64 / spec.n as f64;
        }
    }
    u
}

/// `λ Σ p(x) u(i−1, x)^d − Σ p(x) u(i, x)` for `i = 1..=C+1`.
pub fn balance_residuals(spec: &CappedChainSpec, p: &[f64]) -> Vec<f64> {
    let levels = spec.cap as usize + 2;
    let mut r = vec![0.0; levels - 1];
    for (idx, &pi) in p.iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        let x = spec.decode(idx);
        let u = |k: usize| x.iter().filter(|&&v| v as usize >= k).count() as f64 / spec.n as f64;
        for (i, ri) in r.iter_mut().enumerate() {
            let level = i + 1;
            *ri += pi * (spec.lambda * u(level - 1).powi(spec.d as i32) - u(level));
        }
    }
    r
}

/// `Pr(M ≥ k)` for `k = 0..=C`.
pub fn max_tail(spec: &CappedChainSpec, p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; spec.cap as usize + 1];
    for (i, &pi) in p.iter().enumerate() {
        let m = spec.decode(i).into_iter().max().unwrap_or(0) as usize;
        for v in &mut out[..=m] {
            *v += pi;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode() {
        let s = CappedChainSpec::new(3, 0.5, 2, 4).unwrap();
        for i in 0..s.num_states() {
            assert_eq!(s.encode(&s.decode(i)).unwrap(), i);
        }
        assert_eq!(s.decode(1), vec![0, 0, 1]);
        assert!(s.encode(&[5, 0, 0]).is_err());
        assert!(s.encode(&[1, 0]).is_err());
    }

    #[test]
    fn state_limit() {
        assert!(matches!(
            CappedChainSpec::new(7, 0.5, 2, 9),
            Err(SimError::StateSpaceTooLarge { .. })
        ));
        assert!(CappedChainSpec::new(6, 0.5, 2, 9).is_ok());
    }

    #[test]
    fn symmetric_tie_probabilities() {
        // (1,1) d=2: tuples (1,1)->1, (1,2)->1, (2,1)->2, (2,2)->2
        assert_eq!(choice_probabilities(&[1, 1], 2), vec![0.5, 0.5]);
        assert_eq!(choice_probabilities(&[0, 3], 2), vec![0.75, 0.25]);
        assert_eq!(choice_probabilities(&[2, 2, 2], 1), vec![1.0 / 3.0; 3]);
        for x in [[0u32, 1, 2, 0], [3, 3, 1, 1], [5, 4, 3, 2]] {
            let p = choice_probabilities(&x, 3);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn generator_structure() {
        let spec = CappedChainSpec::new(3, 0.7, 2, 3).unwrap();
        let g = build_generator(&spec).unwrap();
        for i in 0..g.size() {
            assert!(g.row_sum(i).abs() < 1e-14);
            for &(j, r) in g.off_diagonal(i) {
                assert!(r > 0.0);
                let (a, b) = (spec.decode(i), spec.decode(j));
                let diff: i64 = a.iter().zip(&b).map(|(&u, &v)| (i64::from(u) - i64::from(v)).abs()).sum();
                assert_eq!(diff, 1);
            }
        }
    }

    #[test]
    fn single_queue_is_capped_mm1() {
        let spec = CappedChainSpec::new(1, 0.5, 3, 20).unwrap();
        let g = build_generator(&spec).unwrap();
        assert!((g.rate(0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(g.rate(1, 0), 1.0);
        assert_eq!(g.rate(20, 20), g.diagonal(20));
        let st = stationary(&spec).unwrap();
        let norm = 1.0 - 0.5f64.powi(21);
        for k in 0..=20 {
            let want = 0.5 * 0.5f64.powi(k) / norm;
            assert!((st.pi[k as usize] - want).abs() < 1e-14);
        }
        let u = tail_fractions(&spec, &st.pi);
        assert!((u[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn cap_zero_is_single_state() {
        let spec = CappedChainSpec::new(2, 0.5, 2, 0).unwrap();
        let st = stationary(&spec).unwrap();
        assert_eq!(st.pi, vec![1.0]);
        assert_eq!(transient(&spec, &[0, 0], 3.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn two_queue_stationary() {
        let spec = CappedChainSpec::new(2, 0.5, 2, 12).unwrap();
        let st = stationary(&spec).unwrap();
        assert!(st.residual < 1e-12, "{}", st.residual);
        let u = tail_fractions(&spec, &st.pi);
        assert!((u[1] - 0.5).abs() < 1e-3);
        assert!(st.pi.iter().all(|&p| p >= -1e-15));
        assert!((st.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let r = balance_residuals(&spec, &st.pi);
        assert!(r.iter().all(|v| v.abs() <= st.boundary_mass + 1e-12));
    }

    #[test]
    fn dense_and_power_agree() {
        for spec in [
            CappedChainSpec::new(2, 0.5, 2, 12).unwrap(),
            CappedChainSpec::new(3, 0.8, 2, 5).unwrap(),
        ] {
            let g = build_generator(&spec).unwrap();
            let a = stationary_dense(&g).unwrap();
            let b = stationary_power(&g, 1e-14, 5_000_000).unwrap();
            let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-10, "{worst}");
        }
    }

    #[test]
    fn permutation_symmetry() {
        for (n, cap) in [(2usize, 8u32), (3, 4)] {
            let spec = CappedChainSpec::new(n, 0.6, 2, cap).unwrap();
            let st = stationary(&spec).unwrap();
            for i in 0..spec.num_states() {
                let x = spec.decode(i);
                let mut y = x.clone();
                y.rotate_left(1);
                let mut z = x.clone();
                z.swap(0, n - 1);
                for perm in [y, z] {
                    let j = spec.encode(&perm).unwrap();
                    assert!((st.pi[i] - st.pi[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transient_basics() {
        let spec = CappedChainSpec::new(2, 0.5, 2, 12).unwrap();
        let p0 = transient(&spec, &[0, 0], 0.0).unwrap();
        assert_eq!(p0[0], 1.0);
        assert_eq!(p0.iter().sum::<f64>(), 1.0);

        let st = stationary(&spec).unwrap();
        let late = transient(&spec, &[0, 0], 200.0 / 0.5).unwrap();
        assert!(exact_tv(&late, &st.pi).unwrap() < 1e-8);

        let a = transient_with_tol(&spec, &[1, 0], 3.0, 1e-10).unwrap();
        let b = transient_with_tol(&spec, &[1, 0], 3.0, 1e-14).unwrap();
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transient_matches_matrix_exponential_for_mm1() {
        // single queue, cap 1: two-state chain with rates λ and 1
        let spec = CappedChainSpec::new(1, 0.3, 1, 1).unwrap();
        let t = 1.7;
        let p = transient(&spec, &[0], t).unwrap();
        let s = 0.3 + 1.0;
        let p1 = 0.3 / s * (1.0 - (-s * t).exp());
        assert!((p[1] - p1).abs() < 1e-12);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(exact_tv(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(exact_tv(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(exact_tv(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn overflow_guard() {
        let spec = CappedChainSpec::new(1, 0.5, 1, 2).unwrap();
        assert!(transient(&spec, &[0], 1e9).is_err());
    }
}
