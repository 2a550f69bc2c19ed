use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Queue-length vector with incrementally maintained level counts.
///
/// `levels[k]` is the number of queues holding at least `k` customers. The
/// vector is kept trimmed so that its last entry is nonzero, which makes the
/// maximum queue length `levels.len() - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueueState {
    lengths: Vec<u32>,
    levels: Vec<usize>,
    total: u64,
}

/// Summary statistics of a single state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    /// `ell[k]` = number of queues with length at least `k`, for `k = 0..=max`.
    pub ell: Vec<usize>,
    /// `u[k] = ell[k] / n`.
    pub u: Vec<f64>,
    pub total: u64,
    pub max: usize,
}

impl QueueState {
    pub fn zeros(n: usize) -> Self {
        Self {
            lengths: vec![0; n],
            levels: vec![n],
            total: 0,
        }
    }

    pub fn from_lengths(lengths: Vec<u32>) -> Self {
        let levels = level_counts(&lengths);
        let total = lengths.iter().map(|&x| u64::from(x)).sum();
        Self {
            lengths,
            levels,
            total,
        }
    }

    pub fn n(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[u32] {
        &self.lengths
    }

    pub fn len_of(&self, j: usize) -> u32 {
        self.lengths[j]
    }

    /// Level counts `ell(0..=max)`.
    pub fn level_counts(&self) -> &[usize] {
        &self.levels
    }

    pub fn ell(&self, k: usize) -> usize {
        self.levels.get(k).copied().unwrap_or(0)
    }

    pub fn u(&self, k: usize) -> f64 {
        self.ell(k) as f64 / self.n() as f64
    }

    /// `‖x‖₁`
    pub fn total(&self) -> u64 {
        self.total
    }

    /// `‖x‖∞`
    pub fn max(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn is_empty_system(&self) -> bool {
        self.total == 0
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.n() {
            return Err(SimError::IndexOutOfRange {
                index: j,
                n: self.n(),
            });
        }
        Ok(())
    }

    #[inline]
    fn increment(&mut self, j: usize) {
        let new_len = self.lengths[j] as usize + 1;
        self.lengths[j] += 1;
        if new_len == self.levels.len() {
            self.levels.push(1);
        } else {
            self.levels[new_len] += 1;
        }
        self.total += 1;
    }

    #[inline]
    fn decrement(&mut self, j: usize) {
        let old_len = self.lengths[j] as usize;
        self.lengths[j] -= 1;
        self.levels[old_len] -= 1;
        if old_len == self.levels.len() - 1 && self.levels[old_len] == 0 {
            self.levels.pop();
        }
        self.total -= 1;
    }

    /// Route an arrival: the customer joins the first queue in `choices`
    /// whose length equals the minimum over the chosen queues.
    /// Returns the index of the queue that was joined.
    #[inline]
    pub fn apply_arrival(&mut self, choices: &[usize]) -> Result<usize> {
        let Some((&first, rest)) = choices.split_first() else {
            return Err(SimError::ChoiceCount {
                got: 0,
                expected: 1,
            });
        };
        self.check_index(first)?;
        let mut best = first;
        let mut best_len = self.lengths[first];
        for &c in rest {
            self.check_index(c)?;
            // strict comparison keeps the first listed among ties
            if self.lengths[c] < best_len {
                best = c;
                best_len = self.lengths[c];
            }
        }
        self.increment(best);
        Ok(best)
    }

    /// Serve one customer at `selection` if it is nonempty. Returns `false`
    /// for a virtual departure (empty queue, state unchanged).
    #[inline]
    pub fn apply_departure(&mut self, selection: usize) -> Result<bool> {
        self.check_index(selection)?;
        if self.lengths[selection] == 0 {
            return Ok(false);
        }
        self.decrement(selection);
        Ok(true)
    }

    /// Add one customer to queue `j` directly (no routing).
    pub fn add_customer(&mut self, j: usize) -> Result<()> {
        self.check_index(j)?;
        self.increment(j);
        Ok(())
    }

    /// Remove one customer from queue `j` directly; errors if it is empty.
    pub fn remove_customer(&mut self, j: usize) -> Result<()> {
        self.check_index(j)?;
        if self.lengths[j] == 0 {
            return Err(SimError::Domain(format!("queue {j} is already empty")));
        }
        self.decrement(j);
        Ok(())
    }

    pub fn observables(&self) -> Observables {
        let n = self.n() as f64;
        Observables {
            ell: self.levels.clone(),
            u: self.levels.iter().map(|&c| c as f64 / n).collect(),
            total: self.total,
            max: self.max(),
        }
    }

    pub fn l1_distance(&self, other: &QueueState) -> u64 {
        self.lengths
            .iter()
            .zip(&other.lengths)
            .map(|(&a, &b)| u64::from(a.abs_diff(b)))
            .sum()
    }

    pub fn linf_distance(&self, other: &QueueState) -> u32 {
        self.lengths
            .iter()
            .zip(&other.lengths)
            .map(|(&a, &b)| a.abs_diff(b))
            .max()
            .unwrap_or(0)
    }

    /// Componentwise `self ≤ other`.
    pub fn dominated_by(&self, other: &QueueState) -> bool {
        self.lengths.iter().zip(&other.lengths).all(|(a, b)| a <= b)
    }
}

/// Level counts recomputed from scratch, trimmed like [`QueueState`] keeps them.
pub fn level_counts(lengths: &[u32]) -> Vec<usize> {
    let max = lengths.iter().copied().max().unwrap_or(0) as usize;
    let mut exact = vec![0usize; max + 2];
    for &x in lengths {
        exact[x as usize] += 1;
    }
    // suffix sums turn "exactly k" into "at least k"
    for k in (0..=max).rev() {
        exact[k] += exact[k + 1];
    }
    exact.truncate(max + 1);
    if lengths.is_empty() {
        exact[0] = 0;
    }
    exact
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(v: &[u32]) -> QueueState {
        QueueState::from_lengths(v.to_vec())
    }

    #[test]
    fn arrival_empty_system_first_choice_wins() {
        let mut x = st(&[0, 0, 0]);
        assert_eq!(x.apply_arrival(&[1, 1]).unwrap(), 1);
        assert_eq!(x.lengths(), &[0, 1, 0]);
    }

    #[test]
    fn arrival_tie_goes_to_first_listed() {
        let mut x = st(&[2, 1, 2]);
        x.apply_arrival(&[0, 2]).unwrap();
        assert_eq!(x.lengths(), &[3, 1, 2]);
        let mut y = st(&[2, 1, 2]);
        y.apply_arrival(&[2, 0]).unwrap();
        assert_eq!(y.lengths(), &[2, 1, 3]);
    }

    #[test]
    fn arrival_strict_minimum() {
        let mut x = st(&[0, 5]);
        x.apply_arrival(&[1, 0]).unwrap();
        assert_eq!(x.lengths(), &[1, 5]);
    }

    #[test]
    fn arrival_index_out_of_range() {
        let mut x = st(&[0, 0]);
        assert_eq!(
            x.apply_arrival(&[0, 2]),
            Err(SimError::IndexOutOfRange { index: 2, n: 2 })
        );
        assert_eq!(x.lengths(), &[0, 0]);
    }

    #[test]
    fn departures() {
        let mut x = st(&[3]);
        assert!(x.apply_departure(0).unwrap());
        assert_eq!(x.lengths(), &[2]);

        let mut y = st(&[0, 2]);
        assert!(!y.apply_departure(0).unwrap());
        assert_eq!(y.lengths(), &[0, 2]);

        let mut z = st(&[1, 1]);
        z.apply_departure(1).unwrap();
        assert_eq!(z.lengths(), &[1, 0]);
        assert_eq!(z.max(), 1);

        assert!(z.apply_departure(5).is_err());
    }

    #[test]
    fn observables_by_hand() {
        let o = st(&[0, 0, 0]).observables();
        assert_eq!(o.ell, vec![3]);
        assert_eq!((o.total, o.max), (0, 0));

        let x = st(&[2, 1, 0]);
        let o = x.observables();
        assert_eq!(o.u[0], 1.0);
        assert!((o.u[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((o.u[2] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((o.total, o.max), (3, 2));
        assert_eq!(x.ell(7), 0);
    }

    #[test]
    fn exhaustive_small_state_level_consistency() {
        // every state of {0..3}^3, every arrival pair and every departure
        let n = 3;
        for code in 0..64u32 {
            let lengths: Vec<u32> = (0..n).map(|j| (code >> (2 * j)) & 3).collect();
            let base = QueueState::from_lengths(lengths);
            for a in 0..n {
                for b in 0..n {
                    let mut x = base.clone();
                    x.apply_arrival(&[a, b]).unwrap();
                    assert_eq!(x.level_counts(), level_counts(x.lengths()).as_slice());
                    assert_eq!(x.total(), base.total() + 1);
                }
                let mut x = base.clone();
                let real = x.apply_departure(a).unwrap();
                assert_eq!(x.level_counts(), level_counts(x.lengths()).as_slice());
                assert_eq!(x.total() + u64::from(real), base.total());
            }
        }
    }

    proptest! {
        #[test]
        fn level_counts_track_random_ops(
            init in prop::collection::vec(0u32..6, 1..8),
            ops in prop::collection::vec((any::<bool>(), any::<u64>(), any::<u64>()), 0..200),
        ) {
            let n = init.len();
            let mut x = QueueState::from_lengths(init);
            for (arrive, a, b) in ops {
                let before = x.total();
                if arrive {
                    x.apply_arrival(&[a as usize % n, b as usize % n]).unwrap();
                    prop_assert_eq!(x.total(), before + 1);
                } else {
                    let real = x.apply_departure(a as usize % n).unwrap();
                    prop_assert_eq!(x.total() + u64::from(real), before);
                }
                let fresh = level_counts(x.lengths());
                prop_assert_eq!(x.level_counts(), fresh.as_slice());
                prop_assert_eq!(x.ell(0), n);
                let s: usize = x.level_counts()[1..].iter().sum();
                prop_assert_eq!(s as u64, x.total());
                prop_assert!(x.level_counts().windows(2).all(|w| w[0] >= w[1]));
                prop_assert_eq!(x.max() as u32, x.lengths().iter().copied().max().unwrap());
            }
        }

        #[test]
        fn tail_sum_equals_mean_length(init in prop::collection::vec(0u32..9, 1..10)) {
            let x = QueueState::from_lengths(init);
            let o = x.observables();
            let s: f64 = o.u[1..].iter().sum();
            prop_assert!((s - x.total() as f64 / x.n() as f64).abs() < 1e-12);
        }
    }
}
