//! State, event streams and transition dynamics of the supermarket model.
//!
//! `n` single-server FIFO queues with unit-rate exponential service. Customers
//! arrive at total rate `λn`; each samples `d` queues uniformly with
//! replacement and joins the shortest, taking the first listed on ties.
//! Departures are driven by a rate-`n` clock with a uniform queue selection;
//! a selection that lands on an empty queue is ignored.

mod state;
mod stream;

use serde::{Deserialize, Serialize};

pub use state::{level_counts, Observables, QueueState};
pub use stream::{Choices, Event, EventStream, Events};

use crate::error::{Result, SimError};

/// The triple `(n, λ, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub lambda: f64,
    pub d: usize,
}

impl ModelParams {
    pub fn new(n: usize, lambda: f64, d: usize) -> Result<Self> {
        let p = Self { n, lambda, d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(SimError::InvalidParams("n must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(SimError::InvalidParams("d must be at least 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(SimError::InvalidParams(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Apply one event in place. Returns the queue that changed, if any.
#[inline]
pub fn apply_event(state: &mut QueueState, event: &Event) -> Result<Option<usize>> {
    match event {
        Event::Arrival { choices, .. } => state.apply_arrival(choices).map(Some),
        Event::Departure { selection, .. } => Ok(state
            .apply_departure(*selection)?
            .then_some(*selection)),
    }
}

/// The state reached from `x0` after every event of `stream` with time `≤ t`.
pub fn evolve(x0: &QueueState, stream: &EventStream, t: f64) -> Result<QueueState> {
    let mut x = x0.clone();
    evolve_in_place(&mut x, stream, t)?;
    Ok(x)
}

pub fn evolve_in_place(x: &mut QueueState, stream: &EventStream, t: f64) -> Result<()> {
    check_stream(x, stream, t)?;
    for e in stream.iter().take_while(|e| e.time() <= t) {
        apply_event(x, &e)?;
    }
    Ok(())
}

pub(crate) fn check_stream(x: &QueueState, stream: &EventStream, t: f64) -> Result<()> {
    if x.n() != stream.params().n {
        return Err(SimError::DimensionMismatch(format!(
            "state has {} queues, stream drives {}",
            x.n(),
            stream.params().n
        )));
    }
    if !(t >= 0.0) {
        return Err(SimError::Domain(format!("time must be nonnegative, got {t}")));
    }
    if t > stream.horizon() {
        return Err(SimError::InsufficientStream {
            requested: t,
            horizon: stream.horizon(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use smallvec::smallvec;

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0, 0.5, 2).is_err());
        assert!(ModelParams::new(3, 1.0, 2).is_err());
        assert!(ModelParams::new(3, 0.0, 2).is_err());
        assert!(ModelParams::new(3, 0.5, 0).is_err());
        assert!(ModelParams::new(1, 0.5, 1).is_ok());
    }

    #[test]
    fn hand_folded_sequence() {
        let p = ModelParams::new(2, 0.5, 2).unwrap();
        let events = vec![
            Event::Arrival {
                time: 0.1,
                choices: smallvec![0, 1],
            },
            Event::Departure {
                time: 0.2,
                selection: 1,
            },
            Event::Arrival {
                time: 0.3,
                choices: smallvec![1, 0],
            },
        ];
        let s = EventStream::recorded(p, events, 1.0).unwrap();
        let x = evolve(&QueueState::zeros(2), &s, 0.5).unwrap();
        assert_eq!(x.lengths(), &[1, 1]);
        let mid = evolve(&QueueState::zeros(2), &s, 0.15).unwrap();
        assert_eq!(mid.lengths(), &[1, 0]);
    }

    #[test]
    fn zero_time_is_identity() {
        let p = ModelParams::new(4, 0.7, 2).unwrap();
        let s = EventStream::seeded(p, 1, 10.0).unwrap();
        let x0 = QueueState::from_lengths(vec![3, 0, 2, 1]);
        assert_eq!(evolve(&x0, &s, 0.0).unwrap(), x0);
    }

    #[test]
    fn beyond_horizon_is_an_error() {
        let p = ModelParams::new(4, 0.7, 2).unwrap();
        let s = EventStream::seeded(p, 1, 1.0).unwrap();
        let err = evolve(&QueueState::zeros(4), &s, 1.5).unwrap_err();
        assert!(matches!(err, SimError::InsufficientStream { .. }));
        assert!(evolve(&QueueState::zeros(3), &s, 0.5).is_err());
    }

    #[test]
    fn total_is_arrivals_minus_real_departures() {
        let p = ModelParams::new(30, 0.6, 2).unwrap();
        let s = EventStream::seeded(p, 77, 1.0).unwrap();
        let x = evolve(&QueueState::zeros(30), &s, 1.0).unwrap();
        // independent replay: count arrivals and departures that hit a
        // nonempty queue, tracking lengths with a plain vector
        let mut lengths = vec![0u32; 30];
        let (mut arrivals, mut real) = (0u64, 0u64);
        for e in s.iter() {
            match e {
                Event::Arrival { choices, .. } => {
                    arrivals += 1;
                    let mut best = choices[0];
                    for &c in &choices[1..] {
                        if lengths[c] < lengths[best] {
                            best = c;
                        }
                    }
                    lengths[best] += 1;
                }
                Event::Departure { selection, .. } => {
                    if lengths[selection] > 0 {
                        lengths[selection] -= 1;
                        real += 1;
                    }
                }
            }
        }
        assert_eq!(x.total(), arrivals - real);
        assert_eq!(x.lengths(), lengths.as_slice());
    }

    #[test]
    fn evolve_is_deterministic() {
        let p = ModelParams::new(50, 0.9, 3).unwrap();
        let s = EventStream::seeded(p, 123_456, 20.0).unwrap();
        let a = evolve(&QueueState::zeros(50), &s, 20.0).unwrap();
        let b = evolve(&QueueState::zeros(50), &s, 20.0).unwrap();
        assert_eq!(a, b);
    }
}
