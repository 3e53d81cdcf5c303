//! Brute-force per-point MISD: every case is its own point at its integer
//! day and pairs on the same day are not causal.

use chrono::NaiveDate;
use hawkes_excess::catalog::{DailyCountSeries, StudyWindow};
use hawkes_excess::misd::{
    conditional_intensity, e_step, m_step, FitOptions, ModelParams, Normalization,
    ProductivityStep, TriggeringHistogram,
};
use proptest::prelude::*;


pub const TOL: f64 = 1e-9;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

#[derive(Debug)]
pub struct Case {
    series: DailyCountSeries,
    params: ModelParams,
    normalization: Normalization,
}

/// Per-point MISD on the points inside the window.
struct PointModel {
    /// Day of each point, window points only.
    days: Vec<usize>,
    mu: f64,
    levels: [f64; 3],
    window: StudyWindow,
    g: Vec<f64>,
}

impl PointModel {
    fn new(case: &Case) -> Self {
        let w = case.params.step.window;
        let mut days = Vec::new();
        for d in w.t0..=w.end {
            for _ in 0..case.series.counts()[d] {
                days.push(d);
            }
        }
        Self {
            days,
            mu: case.params.mu,
            levels: case.params.step.levels(),
            window: w,
            g: case.params.kernel.densities().to_vec(),
        }
    }

    fn k(&self, day: usize) -> f64 {
        self.levels[self.window.period_of(day).index()]
    }

    /// Triggering rate a parent on `parent` contributes to day `child`.
    fn rate(&self, parent: usize, child: usize) -> f64 {
        if parent >= child || child - parent > self.g.len() {
            0.0
        } else {
            self.k(parent) * self.g[child - parent - 1]
        }
    }

    fn intensity(&self, day: usize) -> f64 {
        self.mu + self.days.iter().map(|&p| self.rate(p, day)).sum::<f64>()
    }

    /// `p[i][j]` for parents `j != i` and `p[i][i]` for the background.
    fn responsibilities(&self) -> Vec<Vec<f64>> {
        let n = self.days.len();
        let mut p = vec![vec![0.0; n]; n];
        for i in 0..n {
            let lambda = self.intensity(self.days[i]);
            p[i][i] = self.mu / lambda;
            for j in 0..n {
                if j != i {
                    p[i][j] = self.rate(self.days[j], self.days[i]) / lambda;
                }
            }
        }
        p
    }
}

pub fn case_strategy() -> impl Strategy<Value = Case> {
    (3usize..=15, 1usize..=6)
        .prop_flat_map(|(n, max_lag)| {
            (
                prop::collection::vec(0u64..=6, n),
                any::<u64>(),
                any::<bool>(),
                any::<bool>(),
                0.05f64..5.0,
                prop::array::uniform3(0.0f64..2.0),
                prop::collection::vec(0.01f64..1.0, max_lag),
            )
        })
        .prop_filter_map(
            "needs events in the window",
            |(mut counts, pick, with_prime, per_day, mu, levels, raw_g)| {
                while counts.iter().sum::<u64>() > 50 {
                    let i = counts.iter().position(|&c| c > 0).unwrap();
                    counts[i] -= 1;
                }
                let n = counts.len();
                let pick = pick as usize;
                let t0 = pick % (n - 2);
                let end = t0 + 2 + (pick / 11) % (n - t0 - 2);
                let t_star = t0 + 1 + (pick / 101) % (end - t0 - 1);
                let mut window = StudyWindow::new(t0, t_star, end).unwrap();
                if with_prime {
                    let t_prime = t_star + 1 + (pick / 1009) % (end - t_star);
                    window = window.with_t_prime(t_prime).unwrap();
                }
                if counts[t0..=end].iter().all(|&c| c == 0) {
                    return None;
                }
                let total: f64 = raw_g.iter().sum();
                let g = raw_g.iter().map(|x| x / total).collect();
                let origin = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
                Some(Case {
                    series: DailyCountSeries::new("oracle", origin, counts).unwrap(),
                    params: ModelParams {
                        mu,
                        step: ProductivityStep::from_levels(levels, window),
                        kernel: TriggeringHistogram::from_densities(g).unwrap(),
                    },
                    normalization: if per_day {
                        Normalization::PerDay
                    } else {
                        Normalization::PerParent
                    },
                })
            },
        )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

/// Compares the count-aggregated intensity, E-step and M-step of `case`
/// against the per-point formulation.
pub fn check_case(case: &Case) -> Result<(), String> {
    let oracle = PointModel::new(case);
    let w = case.params.step.window;
    let max_lag = oracle.g.len();

    for day in w.t0..=w.end {
        let a = conditional_intensity(&case.params, &case.series, day);
        let b = oracle.intensity(day);
        ensure!(close(a, b), "intensity day {}: {} vs {}", day, a, b);
    }

    let p = oracle.responsibilities();
    let resp = e_step(&case.params, &case.series).unwrap();
    for day in w.t0..=w.end {
        let idx: Vec<usize> = (0..oracle.days.len()).filter(|&i| oracle.days[i] == day).collect();
        let b: f64 = idx.iter().map(|&i| p[i][i]).sum();
        ensure!(close(resp.background(day), b), "background day {}", day);
        for lag in 1..=max_lag {
            let w_oracle: f64 = idx
                .iter()
                .flat_map(|&i| {
                    let p = &p;
                    let days = &oracle.days;
                    (0..days.len())
                        .filter(move |&j| days[j] + lag == day)
                        .map(move |j| p[i][j])
                })
                .sum();
            ensure!(
                close(resp.trigger(day, lag), w_oracle),
                "trigger day {} lag {}: {} vs {}", day, lag, resp.trigger(day, lag), w_oracle
            );
        }
    }

    let options = FitOptions {
        max_lag,
        normalization: case.normalization,
        ..FitOptions::default()
    };
    let m = m_step(&resp, &case.series, w, &options).unwrap().params;
    let n = oracle.days.len();

    let mu = (0..n).map(|i| p[i][i]).sum::<f64>() / w.n_days() as f64;
    ensure!(close(m.mu, mu), "mu {} vs {}", m.mu, mu);

    let mut lag_mass = vec![0.0; max_lag];
    for i in 0..n {
        for j in 0..n {
            if i != j && p[i][j] > 0.0 {
                lag_mass[oracle.days[i] - oracle.days[j] - 1] += p[i][j];
            }
        }
    }
    let total: f64 = lag_mass.iter().sum();
    for (u, &mass) in lag_mass.iter().enumerate() {
        let g = if total > 0.0 { mass / total } else { 1.0 / max_lag as f64 };
        ensure!(close(m.kernel.densities()[u], g), "g({}) {} vs {}", u + 1, m.kernel.densities()[u], g);
    }

    let lengths = w.period_lengths();
    let mut levels = [0.0; 3];
    for (period, level) in levels.iter_mut().enumerate() {
        let parents: Vec<usize> = (0..n)
            .filter(|&j| w.period_of(oracle.days[j]).index() == period)
            .collect();
        if parents.is_empty() {
            continue;
        }
        let offspring: f64 = parents
            .iter()
            .map(|&j| (0..n).filter(|&i| i != j).map(|i| p[i][j]).sum::<f64>())
            .sum();
        *level = match case.normalization {
            Normalization::PerParent => offspring / parents.len() as f64,
            Normalization::PerDay => offspring / lengths[period] as f64,
        };
    }
    let fitted = m.step.levels();
    if w.t_prime.is_some() {
        for period in 0..3 {
            ensure!(close(fitted[period], levels[period]), "level {}: {} vs {}", period, fitted[period], levels[period]);
        }
    } else {
        ensure!(close(m.step.k, levels[0]), "k {} vs {}", m.step.k, levels[0]);
    }
    Ok(())
}
