//! Branching (cluster) simulation of a Hawkes process with piecewise-constant
//! productivity and an exponential triggering kernel.
//!
//! Background points arrive as a homogeneous Poisson process. Every point at
//! time `s` has `Poisson(K(s))` children, each displaced by an independent
//! `Exp(decay_rate)` delay; children past the horizon are dropped.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::DailyCountSeries;
use crate::error::{Error, Result};

/// Hard cap on the number of points in one catalog.
pub const MAX_POINTS: usize = 1_000_000;

/// Background rate of the replication study (events/day).
pub const STUDY_MU: f64 = 3.0;
/// Exponential decay rate of the replication study (1/day).
pub const STUDY_DECAY: f64 = 0.25;
pub const STUDY_HORIZON: f64 = 100.0;
/// Time of the event in the replication study; the excess starts after it.
pub const STUDY_EVENT_TIME: f64 = 31.0;
pub const STUDY_BASE_K: f64 = 0.2;
pub const STUDY_EXCESS_K: f64 = 1.0;
pub const STUDY_POST_K: f64 = 0.4;
pub const STUDY_DURATIONS: [usize; 5] = [0, 10, 20, 30, 40];
pub const STUDY_CATALOGS_PER_DURATION: usize = 50;

/// Productivity levels as a step function of the parent time:
/// `base` on `(0, t_star]`, `excess` on `(t_star, t_prime]`, `post` after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductivityProfile {
    pub base: f64,
    pub excess: f64,
    pub post: f64,
    pub t_star: f64,
    pub t_prime: f64,
}

impl ProductivityProfile {
    pub fn constant(level: f64, t_star: f64) -> Self {
        Self {
            base: level,
            excess: level,
            post: level,
            t_star,
            t_prime: t_star,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        if t <= self.t_star {
            self.base
        } else if t <= self.t_prime {
            self.excess
        } else {
            self.post
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mu: f64,
    pub decay_rate: f64,
    pub profile: ProductivityProfile,
    pub horizon: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.profile;
        let ok = self.mu >= 0.0
            && self.decay_rate > 0.0
            && self.horizon > 0.0
            && [p.base, p.excess, p.post].iter().all(|k| *k >= 0.0 && k.is_finite())
            && 0.0 < p.t_star
            && p.t_star <= p.t_prime
            && p.t_prime <= self.horizon;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid simulation config {self:?}")))
        }
    }

    /// True when a level that persists outside the bounded excess window is
    /// at least one.
    pub fn is_supercritical(&self) -> bool {
        self.profile.base >= 1.0 || self.profile.post >= 1.0
    }
}

/// Sorted occurrence times in `(0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTimes {
    pub times: Vec<f64>,
    pub horizon: f64,
}

impl EventTimes {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub events: EventTimes,
    pub supercritical: bool,
    /// The point cap was hit; the catalog is incomplete.
    pub truncated: bool,
}

pub fn simulate(config: &SimConfig) -> Result<Simulation> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let horizon = config.horizon;
    let mut times: Vec<f64> = Vec::new();
    let mut truncated = false;

    let n_background = poisson(&mut rng, config.mu * horizon);
    for _ in 0..n_background {
        // (0, horizon]
        times.push(horizon * (1.0 - rng.random::<f64>()));
    }
    if times.len() > MAX_POINTS {
        times.truncate(MAX_POINTS);
        truncated = true;
    }

    let delay = Exp::new(config.decay_rate).expect("decay rate validated");
    let mut generation_start = 0;
    while generation_start < times.len() && !truncated {
        let generation_end = times.len();
        for parent in generation_start..generation_end {
            let t = times[parent];
            let n_children = poisson(&mut rng, config.profile.at(t));
            for _ in 0..n_children {
                let child = t + delay.sample(&mut rng);
                if child <= horizon {
                    if times.len() == MAX_POINTS {
                        truncated = true;
                        break;
                    }
                    times.push(child);
                }
            }
            if truncated {
                break;
            }
        }
        generation_start = generation_end;
    }

    times.sort_by(f64::total_cmp);
    Ok(Simulation {
        events: EventTimes { times, horizon },
        supercritical: config.is_supercritical(),
        truncated,
    })
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// Counts points per day: `counts[d]` is the number of times in `(d, d+1]`.
pub fn bin_to_days(times: &EventTimes, horizon: usize) -> Vec<u64> {
    let mut counts = vec![0u64; horizon];
    for &t in &times.times {
        let day = (t.ceil() as usize).saturating_sub(1);
        if t > 0.0 && day < horizon {
            counts[day] += 1;
        }
    }
    counts
}

/// Per-catalog seed derived from the master seed (SplitMix64 finalizer).
pub fn catalog_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Productivity profile of one replication scenario.
pub fn study_profile(duration: usize) -> ProductivityProfile {
    if duration == 0 {
        ProductivityProfile::constant(STUDY_BASE_K, STUDY_EVENT_TIME)
    } else {
        ProductivityProfile {
            base: STUDY_BASE_K,
            excess: STUDY_EXCESS_K,
            post: STUDY_POST_K,
            t_star: STUDY_EVENT_TIME,
            t_prime: STUDY_EVENT_TIME + duration as f64,
        }
    }
}

/// One labelled synthetic catalog of the replication study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyCatalog {
    pub id: usize,
    pub duration: usize,
    pub config: SimConfig,
    pub series: DailyCountSeries,
}

impl StudyCatalog {
    pub fn scenario(&self) -> String {
        if self.duration == 0 {
            "no_increase".into()
        } else {
            "five_fold".into()
        }
    }
}

/// Calendar date assigned to day 0 of synthetic catalogs.
pub fn synthetic_origin() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date")
}

/// The 250-catalog study: 50 catalogs for each duration in 0, 10, 20, 30, 40.
pub fn generate_study(master_seed: u64) -> Vec<StudyCatalog> {
    let specs: Vec<(usize, usize)> = STUDY_DURATIONS
        .iter()
        .flat_map(|&d| std::iter::repeat_n(d, STUDY_CATALOGS_PER_DURATION))
        .enumerate()
        .collect();
    specs
        .into_par_iter()
        .map(|(id, duration)| {
            let config = SimConfig {
                mu: STUDY_MU,
                decay_rate: STUDY_DECAY,
                profile: study_profile(duration),
                horizon: STUDY_HORIZON,
                seed: catalog_seed(master_seed, id as u64),
            };
            let sim = simulate(&config).expect("study config is valid");
            let counts = bin_to_days(&sim.events, STUDY_HORIZON as usize);
            let series = DailyCountSeries::new(format!("sim{id:03}"), synthetic_origin(), counts)
                .expect("nonempty horizon");
            StudyCatalog {
                id,
                duration,
                config,
                series,
            }
        })
        .collect()
}
