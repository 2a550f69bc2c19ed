//! Statistical spot checks of the simulator and coupling routines.

use supersim_core::coupling::{self, Coalescence};
use supersim_core::rng::derive_seed;
use supersim_core::simulator::{self, SamplingPlan, Survival};
use supersim_core::stats;
use supersim_core::{EventStream, ModelParams, QueueState};

#[test]
fn d1_equilibrium_mean_length() {
    let p = ModelParams::new(200, 0.6, 1).unwrap();
    let snaps = simulator::d1_equilibrium_snapshots(&p, 4000, 11).unwrap();
    let per_queue: Vec<f64> = snaps.iter().map(|s| s.total as f64 / p.n as f64).collect();
    let s = stats::iid_summary(&per_queue);
    let want = 0.6 / 0.4;
    assert!((s.mean - want).abs() <= 3.0 * s.se, "{} ± {} vs {want}", s.mean, s.se);
}

#[test]
fn adjacent_pairs_coalesce_quickly() {
    let p = ModelParams::new(100, 0.5, 2).unwrap();
    let x = coupling::warmed_up_state(&p, simulator::default_warmup(&p), 3).unwrap();
    let samples = coupling::adjacent_coalescence_samples(&p, &x, 500, 17, 500.0).unwrap();
    let mut times: Vec<f64> = samples
        .iter()
        .map(|c| match c {
            Coalescence::At(t) => *t,
            Coalescence::Censored { .. } => panic!("censored at 500"),
        })
        .collect();
    times.sort_by(f64::total_cmp);
    println!("median adjacent coalescence time {:.3}", times[times.len() / 2]);
    assert!(times[0] >= 0.0);
}

fn mode(hist: &std::collections::BTreeMap<usize, usize>) -> usize {
    hist.iter().max_by_key(|(_, &c)| c).map(|(&k, _)| k).unwrap()
}

#[test]
fn running_maximum_stays_near_its_mode() {
    let p = ModelParams::new(1000, 0.7, 2).unwrap();
    let plan = SamplingPlan::default_for(&p, 300);
    let snaps = simulator::run_trajectory(&p, &QueueState::zeros(p.n), &plan, 5).unwrap();
    let m = mode(&simulator::estimate_tail(&snaps).unwrap().max_hist);
    let x = coupling::warmed_up_state(&p, simulator::default_warmup(&p), 6).unwrap();
    let (lo, hi) = simulator::max_interval_extremes(&p, &x, 1000.0, 7).unwrap();
    println!("mode {m}, range over [0, 1000]: {lo}..{hi}");
    assert!(lo + 2 >= m && hi <= m + 2, "mode {m}, range {lo}..{hi}");
}

#[test]
fn lone_customer_leaves_at_unit_rate() {
    let p = ModelParams::new(20, 0.5, 2).unwrap();
    let mut x0 = QueueState::zeros(p.n);
    x0.add_customer(0).unwrap();
    let trials = 4000;
    let alive: Vec<f64> = (0..trials)
        .map(|i| {
            let s = EventStream::seeded(p, derive_seed(99, 1, i), 5.0).unwrap();
            match simulator::survival_time(&x0, &s, 5.0).unwrap() {
                Survival::Departed(t) => f64::from(u8::from(t > 1.0)),
                Survival::Censored { .. } => 1.0,
            }
        })
        .collect();
    let s = stats::iid_summary(&alive);
    let want = (-1.0f64).exp();
    assert!((s.mean - want).abs() <= 3.0 * s.se, "{} ± {} vs {want}", s.mean, s.se);
}
