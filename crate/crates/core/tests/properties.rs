//! Invariants checked over random inputs.

use proptest::prelude::*;
use supersim_core::coupling::{self, AuditPolicy, Coalescence};
use supersim_core::meanfield::{self, MeanFieldState};
use supersim_core::model::level_counts;
use supersim_core::oracle::{self, CappedChainSpec};
use supersim_core::simulator::{self, SamplingPlan};
use supersim_core::{evolve, EventStream, ModelParams, QueueState};

fn params() -> impl Strategy<Value = ModelParams> {
    (1usize..16, 0.05f64..0.95, 1usize..4).prop_map(|(n, l, d)| ModelParams::new(n, l, d).unwrap())
}

fn state_for(n: usize) -> impl Strategy<Value = QueueState> {
    prop::collection::vec(0u32..10, n).prop_map(QueueState::from_lengths)
}

fn params_and_state() -> impl Strategy<Value = (ModelParams, QueueState)> {
    params().prop_flat_map(|p| (Just(p), state_for(p.n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn level_counts_stay_consistent((p, x) in params_and_state(), seed in any::<u64>()) {
        let s = EventStream::seeded(p, seed, 15.0).unwrap();
        let y = evolve(&x, &s, 15.0).unwrap();
        prop_assert_eq!(y.level_counts(), &level_counts(y.lengths())[..]);
        prop_assert_eq!(y.total(), y.lengths().iter().map(|&v| u64::from(v)).sum::<u64>());
        prop_assert_eq!(y.max() as u32, y.lengths().iter().copied().max().unwrap());
    }

    #[test]
    fn snapshot_tails_are_exact((p, x) in params_and_state(), seed in any::<u64>()) {
        let plan = SamplingPlan::new(1.0, 0.5, 20).unwrap();
        let snaps = simulator::run_trajectory(&p, &x, &plan, seed).unwrap();
        for s in &snaps {
            prop_assert_eq!(s.u(0), 1.0);
            for k in 1..=s.max() + 1 {
                prop_assert!(s.ell(k) <= s.ell(k - 1));
            }
            let mass: usize = (1..=s.max()).map(|k| s.ell(k)).sum();
            prop_assert_eq!(mass as u64, s.total);
        }
        let est = simulator::estimate_tail(&snaps).unwrap();
        let sum_u: f64 = (1..=est.kmax()).map(|k| est.u_hat(k)).sum();
        prop_assert!((sum_u - est.total.mean / p.n as f64).abs() < 1e-9);
        for k in 1..=est.kmax() {
            prop_assert!(est.u_hat(k) <= est.u_hat(k - 1) + 1e-12);
        }
    }

    #[test]
    fn coupled_copies_match_solo_runs((p, x) in params_and_state(), seed in any::<u64>(), extra in any::<u64>()) {
        let s = EventStream::seeded(p, seed, 10.0).unwrap();
        let y = coupling::random_state(p.n, 6, extra);
        let both = coupling::coupled_evolve(&[x.clone(), y.clone()], &s, 10.0).unwrap();
        prop_assert_eq!(&both[0], &evolve(&x, &s, 10.0).unwrap());
        prop_assert_eq!(&both[1], &evolve(&y, &s, 10.0).unwrap());
        prop_assert!(both[0].l1_distance(&both[1]) <= x.l1_distance(&y));
        prop_assert!(both[0].linf_distance(&both[1]) <= x.linf_distance(&y));
    }

    #[test]
    fn empty_start_stays_below((p, y) in params_and_state(), seed in any::<u64>()) {
        let s = EventStream::seeded(p, seed, 25.0).unwrap();
        let run = coupling::coupled_run(&[QueueState::zeros(p.n), y], &s, 25.0, AuditPolicy::Full, true).unwrap();
        prop_assert!(run.clean(), "{:?}", run.violations);
        prop_assert_eq!(run.pairs[0].ordered, Some(false));
        prop_assert!(run.states[0].dominated_by(&run.states[1]));
    }

    #[test]
    fn coalescence_is_absorbing((p, x) in params_and_state(), seed in any::<u64>(), k in any::<usize>()) {
        let horizon = 60.0;
        let s = EventStream::seeded(p, seed, horizon).unwrap();
        let mut x_plus = x.clone();
        x_plus.add_customer(k % p.n).unwrap();
        if let Coalescence::At(t) = coupling::coalescence_time(&x, &x_plus, &s, horizon).unwrap() {
            let a = evolve(&x, &s, t).unwrap();
            let b = evolve(&x_plus, &s, t).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(evolve(&x, &s, horizon).unwrap(), evolve(&x_plus, &s, horizon).unwrap());
        }
    }

    #[test]
    fn meanfield_keeps_monotone_profiles(raw in prop::collection::vec(0.0f64..1.0, 1..10),
                                         lambda in 0.05f64..0.95, d in 1usize..4) {
        let mut v = raw;
        v.sort_by(|a, b| b.total_cmp(a));
        let v0 = MeanFieldState::new(v).unwrap();
        let run = meanfield::integrate(&v0, lambda, d, 5.0, 0.01).unwrap();
        for s in &run.trajectory.states {
            for k in 1..=s.truncation() {
                prop_assert!(s.v(k) <= s.v(k - 1) + 1e-9);
            }
            prop_assert!(s.v(s.truncation()) >= -1e-9);
        }
    }

    #[test]
    fn stationary_law_is_permutation_symmetric(lambda in 0.1f64..0.9, d in 1usize..4) {
        let spec = CappedChainSpec::new(3, lambda, d, 3).unwrap();
        let st = oracle::stationary(&spec).unwrap();
        for i in 0..spec.num_states() {
            let mut y = spec.decode(i);
            y.reverse();
            let j = spec.encode(&y).unwrap();
            prop_assert!((st.pi[i] - st.pi[j]).abs() < 1e-12);
        }
    }
}
