//! Locating the end of an event-induced excess.
//!
//! A one-sided pre/post Welch test first decides whether the event raised the
//! daily mean at all. If it did, every candidate end day `t' = t*+1 ..= T` is
//! fitted with `t'` fixed, the resulting `k*` trajectory is LOESS-smoothed and
//! the first maximum of the smoothed curve gives the duration.

mod loess;
mod welch;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use loess::{loess_at, loess_smooth, DEFAULT_DEGREE, DEFAULT_SPAN};
pub use welch::{welch_t_test, Sided, WelchTest};

use crate::catalog::{DailyCountSeries, StudyWindow};
use crate::error::{Error, Result};
use crate::misd::{fit, fit_from, FitOptions, FitResult};

pub const DEFAULT_GUARD_HALF_WINDOW: usize = 14;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardOptions {
    pub half_window: usize,
    pub alpha: f64,
    pub sided: Sided,
}

impl Default for GuardOptions {
    fn default() -> Self {
        Self {
            half_window: DEFAULT_GUARD_HALF_WINDOW,
            alpha: DEFAULT_ALPHA,
            sided: Sided::Greater,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardResult {
    pub mean_before: f64,
    pub mean_after: f64,
    pub t_statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub effect_detected: bool,
}

/// Compares the daily counts of the `half_window` days before `t_star` with
/// those after it. The event day belongs to neither sample; both samples are
/// truncated at the window boundaries.
pub fn pre_post_guard(
    series: &DailyCountSeries,
    window: &StudyWindow,
    options: &GuardOptions,
) -> Result<GuardResult> {
    window.check_within(series.len())?;
    let t_star = window.t_star;
    let first = t_star.saturating_sub(options.half_window).max(window.t0);
    let last = (t_star + options.half_window).min(window.end);
    let counts = series.counts();
    let before: Vec<f64> = counts[first..t_star].iter().map(|&c| c as f64).collect();
    let after: Vec<f64> = counts[t_star + 1..=last].iter().map(|&c| c as f64).collect();
    if before.len() < 2 || after.len() < 2 {
        return Err(Error::InsufficientGuardData);
    }
    let test = welch_t_test(&before, &after, options.sided)?;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(GuardResult {
        mean_before: mean(&before),
        mean_after: mean(&after),
        t_statistic: test.t,
        df: test.df,
        p_value: test.p_value,
        alpha: options.alpha,
        effect_detected: test.p_value < options.alpha,
    })
}

/// Index of the first local maximum: the smallest `i` with
/// `v[i-1] <= v[i] >= v[i+1]`, missing neighbours treated as `-inf`.
/// A plateau reports its first index; an increasing sequence its last.
pub fn first_maximum(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "first_maximum of an empty sequence");
    let n = values.len();
    (0..n)
        .find(|&i| {
            let left_ok = i == 0 || values[i] >= values[i - 1];
            let right_ok = i + 1 == n || values[i] >= values[i + 1];
            left_ok && right_ok
        })
        .unwrap_or(n - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub fit: FitOptions,
    pub span: f64,
    /// Local polynomial degree of the smoother (1 or 2).
    pub degree: usize,
    /// Start each candidate fit from the previous candidate's estimate.
    /// Without warm starts the candidates are fitted independently in
    /// parallel.
    pub warm_start: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            span: DEFAULT_SPAN,
            degree: DEFAULT_DEGREE,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationScan {
    pub t_star: usize,
    pub candidate_durations: Vec<usize>,
    pub k_star_values: Vec<f64>,
    pub converged: Vec<bool>,
    pub smoothed_values: Vec<f64>,
    pub chosen_duration: usize,
    pub chosen_t_prime: usize,
}

impl DurationScan {
    /// The decree outcome when no excess is detected: duration zero.
    pub fn none(t_star: usize) -> Self {
        Self {
            t_star,
            candidate_durations: Vec::new(),
            k_star_values: Vec::new(),
            converged: Vec::new(),
            smoothed_values: Vec::new(),
            chosen_duration: 0,
            chosen_t_prime: t_star,
        }
    }

    /// Writes `duration,k_star,smoothed,converged` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "duration,k_star,smoothed,converged")?;
        for i in 0..self.candidate_durations.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.candidate_durations[i],
                self.k_star_values[i],
                self.smoothed_values[i],
                self.converged[i]
            )?;
        }
        Ok(())
    }
}

fn candidate_fit(
    series: &DailyCountSeries,
    window: &StudyWindow,
    t_prime: usize,
    init: Option<&FitResult>,
    options: &FitOptions,
) -> Result<FitResult> {
    let w = window.with_t_prime(t_prime)?;
    match init {
        Some(previous) => fit_from(series, previous.params().warm_start(w), options),
        None => fit(series, w, options),
    }
}

/// Fits every candidate end day and picks the first maximum of the smoothed
/// `k*` trajectory. Candidates that do not converge are kept in the output but
/// left out of the smoothing; more than half failing aborts the scan.
pub fn scan_durations(
    series: &DailyCountSeries,
    window: &StudyWindow,
    options: &ScanOptions,
) -> Result<DurationScan> {
    window.check_within(series.len())?;
    let t_primes: Vec<usize> = (window.t_star + 1..=window.end).collect();
    let fits: Vec<FitResult> = if options.warm_start {
        let mut fits: Vec<FitResult> = Vec::with_capacity(t_primes.len());
        for &tp in &t_primes {
            let f = candidate_fit(series, window, tp, fits.last(), &options.fit)?;
            fits.push(f);
        }
        fits
    } else {
        t_primes
            .par_iter()
            .map(|&tp| candidate_fit(series, window, tp, None, &options.fit))
            .collect::<Result<_>>()?
    };

    let candidate_durations: Vec<usize> = t_primes.iter().map(|tp| tp - window.t_star).collect();
    let k_star_values: Vec<f64> = fits.iter().map(|f| f.step.k_star).collect();
    let converged: Vec<bool> = fits.iter().map(|f| f.converged).collect();
    let failed = converged.iter().filter(|c| !**c).count();
    if 2 * failed > fits.len() {
        return Err(Error::UnstableScan {
            failed,
            total: fits.len(),
        });
    }

    let (xs, ys): (Vec<f64>, Vec<f64>) = candidate_durations
        .iter()
        .zip(&k_star_values)
        .zip(&converged)
        .filter(|(_, &ok)| ok)
        .map(|((&d, &k), _)| (d as f64, k))
        .unzip();
    let queries: Vec<f64> = candidate_durations.iter().map(|&d| d as f64).collect();
    let smoothed_values = if xs.len() >= 3 {
        loess_at(&xs, &ys, &queries, options.span, options.degree)?
    } else {
        // too few points to smooth
        k_star_values.clone()
    };
    let chosen = first_maximum(&smoothed_values);
    let chosen_duration = candidate_durations[chosen];
    Ok(DurationScan {
        t_star: window.t_star,
        chosen_t_prime: window.t_star + chosen_duration,
        candidate_durations,
        k_star_values,
        converged,
        smoothed_values,
        chosen_duration,
    })
}

/// Guard test plus, when it detects an effect, the duration scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationEstimate {
    pub guard: GuardResult,
    pub scan: DurationScan,
}

impl DurationEstimate {
    pub fn duration(&self) -> usize {
        self.scan.chosen_duration
    }

    /// The window with the estimated `t'`, or without one when no excess was
    /// found.
    pub fn fitted_window(&self, window: &StudyWindow) -> Result<StudyWindow> {
        if self.scan.chosen_duration == 0 {
            Ok(window.without_t_prime())
        } else {
            window.with_t_prime(self.scan.chosen_t_prime)
        }
    }
}

pub fn estimate_duration(
    series: &DailyCountSeries,
    window: &StudyWindow,
    guard: &GuardOptions,
    scan: &ScanOptions,
) -> Result<DurationEstimate> {
    let guard = pre_post_guard(series, window, guard)?;
    let scan = if guard.effect_detected {
        scan_durations(series, window, scan)?
    } else {
        DurationScan::none(window.t_star)
    };
    Ok(DurationEstimate { guard, scan })
}

/// Cold-start fit of the three-period model at the estimated `t'`.
pub fn final_fit(
    series: &DailyCountSeries,
    window: &StudyWindow,
    estimate: &DurationEstimate,
    options: &FitOptions,
) -> Result<FitResult> {
    fit(series, estimate.fitted_window(window)?, options)
}
