//! Event streams: the shared randomness that drives every replica.
//!
//! Arrival epochs and departure epochs are two independent exponential-increment
//! sequences (rates `λn` and `n`) merged by time. Each arrival consumes the next
//! `d` indices of the choice substream, each departure the next index of the
//! selection substream. Because the four components come from independent
//! substreams, the k-th arrival always sees the same choices no matter how the
//! stream is truncated or which state replays it.

use std::io::{BufRead, Write};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use smallvec::SmallVec;

use super::ModelParams;
use crate::error::{Result, SimError};
use crate::rng::{bounded_index, substream, Substream};

pub type Choices = SmallVec<[usize; 4]>;

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Arrival { time: f64, choices: Choices },
    Departure { time: f64, selection: usize },
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::Arrival { time, .. } | Event::Departure { time, .. } => *time,
        }
    }

    pub fn is_arrival(&self) -> bool {
        matches!(self, Event::Arrival { .. })
    }
}

#[derive(Debug, Clone)]
enum Source {
    Seeded(u64),
    Recorded(Vec<Event>),
}

/// A replayable, time-ordered event sequence on `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct EventStream {
    params: ModelParams,
    horizon: f64,
    source: Source,
}

impl EventStream {
    /// Lazily generated stream keyed by `seed`.
    pub fn seeded(params: ModelParams, seed: u64, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        Ok(Self {
            params,
            horizon,
            source: Source::Seeded(seed),
        })
    }

    /// Explicit event list. Times must be strictly increasing, nonnegative and
    /// within the horizon; indices must be in range and arrivals must carry
    /// exactly `d` choices.
    pub fn recorded(params: ModelParams, events: Vec<Event>, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        let mut last = f64::NEG_INFINITY;
        for (i, e) in events.iter().enumerate() {
            let t = e.time();
            if !(t >= 0.0) || t <= last {
                return Err(SimError::MalformedStream(format!(
                    "event {i}: time {t} not strictly increasing from {last}"
                )));
            }
            if t > horizon {
                return Err(SimError::MalformedStream(format!(
                    "event {i}: time {t} beyond horizon {horizon}"
                )));
            }
            last = t;
            match e {
                Event::Arrival { choices, .. } => {
                    if choices.len() != params.d {
                        return Err(SimError::ChoiceCount {
                            got: choices.len(),
                            expected: params.d,
                        });
                    }
                    if let Some(&bad) = choices.iter().find(|&&c| c >= params.n) {
                        return Err(SimError::IndexOutOfRange {
                            index: bad,
                            n: params.n,
                        });
                    }
                }
                Event::Departure { selection, .. } => {
                    if *selection >= params.n {
                        return Err(SimError::IndexOutOfRange {
                            index: *selection,
                            n: params.n,
                        });
                    }
                }
            }
        }
        Ok(Self {
            params,
            horizon,
            source: Source::Recorded(events),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> Option<u64> {
        match self.source {
            Source::Seeded(s) => Some(s),
            Source::Recorded(_) => None,
        }
    }

    /// Events with time `≤ horizon`, in time order. Each call replays from the start.
    pub fn iter(&self) -> Events<'_> {
        let inner = match &self.source {
            Source::Seeded(seed) => EventsInner::Generated(Generator::new(&self.params, *seed)),
            Source::Recorded(v) => EventsInner::Recorded(v.iter()),
        };
        Events {
            inner,
            horizon: self.horizon,
        }
    }

    /// Dump as `A <time> <c1> ... <cd>` / `D <time> <sel>` lines with 1-based indices.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in self.iter() {
            match e {
                Event::Arrival { time, choices } => {
                    write!(w, "A {time:?}")?;
                    for c in choices {
                        write!(w, " {}", c + 1)?;
                    }
                    writeln!(w)?;
                }
                Event::Departure { time, selection } => {
                    writeln!(w, "D {time:?} {}", selection + 1)?;
                }
            }
        }
        Ok(())
    }

    /// Parse the text dump produced by [`EventStream::write_text`].
    pub fn read_text<R: BufRead>(params: ModelParams, horizon: f64, r: R) -> Result<Self> {
        let mut events = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SimError::MalformedStream(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| SimError::MalformedStream(format!("line {}: {msg}", lineno + 1));
            let mut parts = line.split_whitespace();
            let tag = parts.next().ok_or_else(|| bad("empty"))?;
            let time: f64 = parts
                .next()
                .ok_or_else(|| bad("missing time"))?
                .parse()
                .map_err(|_| bad("bad time"))?;
            let idx: Vec<usize> = parts
                .map(|p| match p.parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v - 1),
                    _ => Err(bad("bad queue index")),
                })
                .collect::<Result<_>>()?;
            let ev = match tag {
                "A" => Event::Arrival {
                    time,
                    choices: idx.into_iter().collect(),
                },
                "D" if idx.len() == 1 => Event::Departure {
                    time,
                    selection: idx[0],
                },
                "D" => return Err(bad("departure needs exactly one selection")),
                _ => return Err(bad("unknown tag")),
            };
            events.push(ev);
        }
        Self::recorded(params, events, horizon)
    }
}

fn check_horizon(h: f64) -> Result<()> {
    if !(h >= 0.0) || !h.is_finite() {
        return Err(SimError::InvalidParams(format!(
            "horizon must be finite and nonnegative, got {h}"
        )));
    }
    Ok(())
}

pub struct Events<'a> {
    inner: EventsInner<'a>,
    horizon: f64,
}

enum EventsInner<'a> {
    Generated(Generator),
    Recorded(std::slice::Iter<'a, Event>),
}

impl Iterator for Events<'_> {
    type Item = Event;

    #[inline]
    fn next(&mut self) -> Option<Event> {
        let e = match &mut self.inner {
            EventsInner::Generated(g) => g.next_event(),
            EventsInner::Recorded(it) => it.next()?.clone(),
        };
        (e.time() <= self.horizon).then_some(e)
    }
}

/// Unbounded merge of the arrival and departure processes.
struct Generator {
    arrival_times: ChaCha8Rng,
    choices: ChaCha8Rng,
    departure_times: ChaCha8Rng,
    selections: ChaCha8Rng,
    arrival_rate: f64,
    departure_rate: f64,
    next_arrival: f64,
    next_departure: f64,
    n: usize,
    d: usize,
}

impl Generator {
    fn new(p: &ModelParams, seed: u64) -> Self {
        let mut g = Self {
            arrival_times: substream(seed, Substream::ArrivalTimes),
            choices: substream(seed, Substream::Choices),
            departure_times: substream(seed, Substream::DepartureTimes),
            selections: substream(seed, Substream::Selections),
            arrival_rate: p.lambda * p.n as f64,
            departure_rate: p.n as f64,
            next_arrival: 0.0,
            next_departure: 0.0,
            n: p.n,
            d: p.d,
        };
        g.next_arrival = advance(0.0, &mut g.arrival_times, g.arrival_rate, true);
        g.next_departure = advance(0.0, &mut g.departure_times, g.departure_rate, true);
        g
    }

    #[inline]
    fn next_event(&mut self) -> Event {
        if self.next_arrival == self.next_departure {
            log::warn!(
                "arrival and departure epochs collide at t = {}; shifting the departure by one ulp",
                self.next_departure
            );
            self.next_departure = self.next_departure.next_up();
        }
        if self.next_arrival < self.next_departure {
            let time = self.next_arrival;
            let choices = (0..self.d)
                .map(|_| bounded_index(&mut self.choices, self.n))
                .collect();
            self.next_arrival = advance(time, &mut self.arrival_times, self.arrival_rate, false);
            Event::Arrival { time, choices }
        } else {
            let time = self.next_departure;
            let selection = bounded_index(&mut self.selections, self.n);
            self.next_departure =
                advance(time, &mut self.departure_times, self.departure_rate, false);
            Event::Departure { time, selection }
        }
    }
}

/// Next epoch of a rate-`rate` Poisson process after `t`, forced strictly
/// greater than `t` in floating point.
#[inline]
fn advance(t: f64, rng: &mut ChaCha8Rng, rate: f64, first: bool) -> f64 {
    let e: f64 = Exp1.sample(rng);
    let next = t + e / rate;
    if next > t || (first && next > 0.0) {
        next
    } else {
        t.next_up()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use smallvec::smallvec;

    fn params(n: usize, lambda: f64, d: usize) -> ModelParams {
        ModelParams::new(n, lambda, d).unwrap()
    }

    #[test]
    fn stream_is_thread_transferable() {
        fn is<T: Send + Sync>() {}
        is::<EventStream>();
    }

    #[test]
    fn replay_is_identical() {
        let p = params(20, 0.6, 2);
        let s = EventStream::seeded(p, 99, 5.0).unwrap();
        let a: Vec<Event> = s.iter().collect();
        let b: Vec<Event> = s.iter().collect();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(a.windows(2).all(|w| w[0].time() < w[1].time()));
        assert!(a.iter().all(|e| e.time() <= 5.0));
    }

    #[test]
    fn prefix_is_stable_under_longer_horizon() {
        let p = params(10, 0.5, 3);
        let short: Vec<Event> = EventStream::seeded(p, 4, 2.0).unwrap().iter().collect();
        let long: Vec<Event> = EventStream::seeded(p, 4, 8.0).unwrap().iter().collect();
        assert_eq!(&long[..short.len()], &short[..]);
    }

    #[test]
    fn recorded_rejects_bad_streams() {
        let p = params(2, 0.5, 2);
        let unordered = vec![
            Event::Departure {
                time: 0.2,
                selection: 0,
            },
            Event::Departure {
                time: 0.2,
                selection: 1,
            },
        ];
        assert!(EventStream::recorded(p, unordered, 1.0).is_err());
        let bad_idx = vec![Event::Arrival {
            time: 0.1,
            choices: smallvec![0, 2],
        }];
        assert!(EventStream::recorded(p, bad_idx, 1.0).is_err());
        let short = vec![Event::Arrival {
            time: 0.1,
            choices: smallvec![0],
        }];
        assert!(EventStream::recorded(p, short, 1.0).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let p = params(7, 0.8, 3);
        let s = EventStream::seeded(p, 2024, 3.0).unwrap();
        let mut buf = Vec::new();
        s.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().all(|l| l.starts_with("A ") || l.starts_with("D ")));
        let back = EventStream::read_text(p, 3.0, buf.as_slice()).unwrap();
        let a: Vec<Event> = s.iter().collect();
        let b: Vec<Event> = back.iter().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn text_uses_one_based_indices() {
        let p = params(2, 0.5, 2);
        let ev = vec![
            Event::Arrival {
                time: 0.1,
                choices: smallvec![0, 1],
            },
            Event::Departure {
                time: 0.25,
                selection: 1,
            },
        ];
        let s = EventStream::recorded(p, ev, 1.0).unwrap();
        let mut buf = Vec::new();
        s.write_text(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "A 0.1 1 2\nD 0.25 2\n");
        assert!(EventStream::read_text(p, 1.0, "D 0.1 0\n".as_bytes()).is_err());
    }

    #[test]
    fn count_moments_match_poisson() {
        // #arrivals ~ Poisson(λnT), #departures ~ Poisson(nT); check means and
        // variances over replicas within 4 standard errors.
        let p = params(5, 0.4, 2);
        let horizon = 10.0;
        let reps = 2000;
        let mut arr = Vec::with_capacity(reps);
        let mut dep = Vec::with_capacity(reps);
        for r in 0..reps {
            let s = EventStream::seeded(p, crate::rng::derive_seed(11, 0, r as u64), horizon)
                .unwrap();
            let (a, d) = s.iter().fold((0.0, 0.0), |(a, d), e| {
                if e.is_arrival() {
                    (a + 1.0, d)
                } else {
                    (a, d + 1.0)
                }
            });
            arr.push(a);
            dep.push(d);
        }
        for (xs, mu) in [(&arr, 0.4 * 5.0 * horizon), (&dep, 5.0 * horizon)] {
            let m = xs.iter().sum::<f64>() / reps as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let se_mean = (mu / reps as f64).sqrt();
            assert!((m - mu).abs() < 4.0 * se_mean, "mean {m} vs {mu}");
            // Var of the sample variance for Poisson: (mu + 2 mu^2 (n/(n-1))) / n approx
            let se_var = ((mu + 2.0 * mu * mu) / reps as f64).sqrt();
            assert!((v - mu).abs() < 4.0 * se_var, "var {v} vs {mu}");
        }
    }

    #[test]
    fn choices_are_uniform_and_independent_of_order() {
        let p = params(4, 0.9, 2);
        let s = EventStream::seeded(p, 5, 2000.0).unwrap();
        let mut pair = [[0usize; 4]; 4];
        let mut total = 0usize;
        for e in s.iter() {
            if let Event::Arrival { choices, .. } = e {
                pair[choices[0]][choices[1]] += 1;
                total += 1;
            }
        }
        let expect = total as f64 / 16.0;
        for row in pair {
            for c in row {
                assert!((c as f64 - expect).abs() < 5.0 * expect.sqrt());
            }
        }
    }
}
