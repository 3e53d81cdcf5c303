//! Count-aggregated stochastic declustering (nonparametric EM) for a
//! self-exciting process with a three-level productivity step.
//!
//! Cases reported on the same day are exchangeable, so the parentage
//! probabilities of all `c_d` cases of day `d` are identical. The E-step
//! therefore keeps one responsibility row per day: background mass `b_d` and
//! trigger mass `w[d,u]` attributed to parents `u` days earlier. Same-day
//! pairs are never causal, so the triggering histogram lives on lags
//! `1..=L` with unit-width bins.
//!
//! Productivity is indexed by the parent's day: a parent on day `s` in
//! period `P` contributes `c_s · K_P · g(u)` to the intensity `u` days later.

use serde::{Deserialize, Serialize};

use crate::catalog::{DailyCountSeries, Period, StudyWindow};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_LAG: usize = 30;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Lower bound applied to the background rate during iterations.
pub const MU_FLOOR: f64 = 1e-10;
/// Productivity level every period starts from on a cold start.
pub const INITIAL_LEVEL: f64 = 0.5;
/// Warm starts lift period levels to at least this value; a zero level is
/// absorbing under the EM updates.
pub const WARM_START_LEVEL_FLOOR: f64 = 1e-2;

/// How period offspring mass is turned into a productivity level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Offspring mass divided by the number of parent points in the period.
    PerParent,
    /// Offspring mass divided by the period length in days.
    #[default]
    PerDay,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-parent" => Ok(Normalization::PerParent),
            "per-day" => Ok(Normalization::PerDay),
            other => Err(Error::Invalid(format!(
                "unknown normalization {other:?} (expected per-parent or per-day)"
            ))),
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Normalization::PerParent => "per-parent",
            Normalization::PerDay => "per-day",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Largest lag (days) of the triggering histogram.
    pub max_lag: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub normalization: Normalization,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_lag: DEFAULT_MAX_LAG,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            normalization: Normalization::PerDay,
        }
    }
}

/// Histogram estimate of the triggering density on lags `(u-1, u]`,
/// `u = 1..=L`, with unit-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HistogramRecord", into = "HistogramRecord")]
pub struct TriggeringHistogram {
    densities: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct HistogramRecord {
    edges: Vec<f64>,
    densities: Vec<f64>,
}

impl From<TriggeringHistogram> for HistogramRecord {
    fn from(h: TriggeringHistogram) -> Self {
        HistogramRecord {
            edges: h.edges(),
            densities: h.densities,
        }
    }
}

impl TryFrom<HistogramRecord> for TriggeringHistogram {
    type Error = Error;

    fn try_from(r: HistogramRecord) -> Result<Self> {
        if r.edges.len() != r.densities.len() + 1 {
            return Err(Error::Invalid("histogram needs one more edge than bins".into()));
        }
        TriggeringHistogram::from_densities(r.densities)
    }
}

impl TriggeringHistogram {
    pub fn uniform(max_lag: usize) -> Self {
        assert!(max_lag >= 1, "histogram needs at least one bin");
        Self {
            densities: vec![1.0 / max_lag as f64; max_lag],
        }
    }

    /// Builds a histogram from per-bin densities, which must be nonnegative
    /// and integrate to one.
    pub fn from_densities(densities: Vec<f64>) -> Result<Self> {
        if densities.is_empty() || densities.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(Error::Invalid(
                "histogram densities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = densities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "histogram integrates to {total}, expected 1"
            )));
        }
        Ok(Self { densities })
    }

    pub fn max_lag(&self) -> usize {
        self.densities.len()
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    /// Bin edges `0, 1, ..., L`.
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.densities.len()).map(|e| e as f64).collect()
    }

    /// Density at integer lag `u`; zero outside `1..=L`.
    pub fn density(&self, lag: usize) -> f64 {
        if lag == 0 {
            0.0
        } else {
            self.densities.get(lag - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn integral(&self) -> f64 {
        self.densities.iter().sum()
    }
}

/// Three-level productivity step over a study window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductivityStep {
    /// Baseline expected offspring per point.
    pub k: f64,
    /// Additional productivity during the excess period.
    pub k_star: f64,
    /// Change of productivity after the excess period.
    pub k_prime: f64,
    pub window: StudyWindow,
}

impl ProductivityStep {
    /// Builds the step from the total level of each period.
    pub fn from_levels(levels: [f64; 3], window: StudyWindow) -> Self {
        let k = levels[0];
        if window.t_prime.is_none() {
            return Self {
                k,
                k_star: 0.0,
                k_prime: 0.0,
                window,
            };
        }
        Self {
            k,
            k_star: levels[1] - k,
            k_prime: levels[2] - k,
            window,
        }
    }

    pub fn level(&self, period: Period) -> f64 {
        match period {
            Period::Baseline => self.k,
            Period::Excess => self.k + self.k_star,
            Period::Post => self.k + self.k_prime,
        }
    }

    pub fn levels(&self) -> [f64; 3] {
        Period::ALL.map(|p| self.level(p))
    }

    /// Productivity of a parent on `day`.
    pub fn at(&self, day: usize) -> f64 {
        self.level(self.window.period_of(day))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mu: f64,
    pub step: ProductivityStep,
    pub kernel: TriggeringHistogram,
}

impl ModelParams {
    /// Cold-start parameters: half the mean daily count as background rate,
    /// uniform kernel and every period level at [`INITIAL_LEVEL`].
    pub fn initial(series: &DailyCountSeries, window: StudyWindow, max_lag: usize) -> Self {
        let total: u64 = series.counts()[window.t0..=window.end.min(series.last_day())]
            .iter()
            .sum();
        Self {
            mu: (0.5 * total as f64 / window.n_days() as f64).max(MU_FLOOR),
            step: ProductivityStep::from_levels([INITIAL_LEVEL; 3], window),
            kernel: TriggeringHistogram::uniform(max_lag),
        }
    }

    /// Moves fitted parameters onto another window (same event day, different
    /// `t'`), keeping each period's level. Levels are floored so no period
    /// starts at the absorbing value zero.
    pub fn warm_start(&self, window: StudyWindow) -> Self {
        let levels = self.step.levels().map(|l| l.max(WARM_START_LEVEL_FLOOR));
        Self {
            mu: self.mu.max(MU_FLOOR),
            step: ProductivityStep::from_levels(levels, window),
            kernel: self.kernel.clone(),
        }
    }

    fn max_abs_change(&self, other: &Self) -> f64 {
        let mut delta = (self.mu - other.mu)
            .abs()
            .max((self.step.k - other.step.k).abs())
            .max((self.step.k_star - other.step.k_star).abs())
            .max((self.step.k_prime - other.step.k_prime).abs());
        for (a, b) in self.kernel.densities().iter().zip(other.kernel.densities()) {
            delta = delta.max((a - b).abs());
        }
        delta
    }
}

/// Count-aggregated parentage masses for the days of a study window.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityMatrix {
    first_day: usize,
    max_lag: usize,
    background: Vec<f64>,
    trigger: Vec<f64>,
}

impl ResponsibilityMatrix {
    pub fn first_day(&self) -> usize {
        self.first_day
    }

    pub fn n_days(&self) -> usize {
        self.background.len()
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// Background mass `b_d` of absolute day `day`.
    pub fn background(&self, day: usize) -> f64 {
        self.background[day - self.first_day]
    }

    /// Trigger mass `w[d,u]` of day `day` attributed to parents `lag` days
    /// earlier, `lag` in `1..=L`.
    pub fn trigger(&self, day: usize, lag: usize) -> f64 {
        debug_assert!((1..=self.max_lag).contains(&lag));
        self.trigger[(day - self.first_day) * self.max_lag + lag - 1]
    }

    /// `b_d + Σ_u w[d,u]`, which equals `c_d`.
    pub fn row_total(&self, day: usize) -> f64 {
        let row = day - self.first_day;
        self.background[row]
            + self.trigger[row * self.max_lag..(row + 1) * self.max_lag]
                .iter()
                .sum::<f64>()
    }

    pub fn total_background(&self) -> f64 {
        self.background.iter().sum()
    }

    /// `Σ_d w[d,u]` for each lag.
    pub fn lag_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.max_lag];
        for row in self.trigger.chunks_exact(self.max_lag) {
            for (t, w) in totals.iter_mut().zip(row) {
                *t += w;
            }
        }
        totals
    }

    /// Offspring mass attributed to parents on each window day.
    pub fn offspring_by_parent(&self) -> Vec<f64> {
        let n = self.n_days();
        let mut offspring = vec![0.0; n];
        for (row, masses) in self.trigger.chunks_exact(self.max_lag).enumerate() {
            for (lag, w) in (1..=self.max_lag).zip(masses) {
                if lag <= row {
                    offspring[row - lag] += w;
                }
            }
        }
        offspring
    }
}

/// Fitted model for one region and window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FitRecord", try_from = "FitRecord")]
pub struct FitResult {
    pub mu: f64,
    pub step: ProductivityStep,
    pub kernel: TriggeringHistogram,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Periods with no parent points; their level was set to zero.
    pub sparse_periods: [bool; 3],
    /// The background rate ended at [`MU_FLOOR`].
    pub mu_at_floor: bool,
    /// Log-likelihood before each EM sweep; unconverged fits append the
    /// value at the last iterate.
    pub loglik_trace: Vec<f64>,
}

impl FitResult {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            mu: self.mu,
            step: self.step,
            kernel: self.kernel.clone(),
        }
    }

    pub fn window(&self) -> StudyWindow {
        self.step.window
    }

    /// Excess-period level relative to the baseline, `k* / k`.
    pub fn excess_ratio(&self) -> f64 {
        if self.step.k > 0.0 {
            self.step.k_star / self.step.k
        } else {
            0.0
        }
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

#[derive(Serialize, Deserialize)]
struct FitRecord {
    mu: f64,
    k: f64,
    k_star: f64,
    k_prime: f64,
    t0: usize,
    t_star: usize,
    t_prime: Option<usize>,
    end: usize,
    kernel: TriggeringHistogram,
    loglik: f64,
    iterations: usize,
    converged: bool,
    sparse_periods: [bool; 3],
    mu_at_floor: bool,
}

impl From<FitResult> for FitRecord {
    fn from(f: FitResult) -> Self {
        let w = f.step.window;
        FitRecord {
            mu: f.mu,
            k: f.step.k,
            k_star: f.step.k_star,
            k_prime: f.step.k_prime,
            t0: w.t0,
            t_star: w.t_star,
            t_prime: w.t_prime,
            end: w.end,
            kernel: f.kernel,
            loglik: f.loglik,
            iterations: f.iterations,
            converged: f.converged,
            sparse_periods: f.sparse_periods,
            mu_at_floor: f.mu_at_floor,
        }
    }
}

impl TryFrom<FitRecord> for FitResult {
    type Error = Error;

    fn try_from(r: FitRecord) -> Result<Self> {
        let mut window = StudyWindow::new(r.t0, r.t_star, r.end)?;
        if let Some(tp) = r.t_prime {
            window = window.with_t_prime(tp)?;
        }
        Ok(FitResult {
            mu: r.mu,
            step: ProductivityStep {
                k: r.k,
                k_star: r.k_star,
                k_prime: r.k_prime,
                window,
            },
            kernel: r.kernel,
            loglik: r.loglik,
            iterations: r.iterations,
            converged: r.converged,
            sparse_periods: r.sparse_periods,
            mu_at_floor: r.mu_at_floor,
            loglik_trace: Vec::new(),
        })
    }
}

/// Counts of the window days, checked against the series.
fn window_counts<'a>(series: &'a DailyCountSeries, window: &StudyWindow) -> Result<&'a [u64]> {
    window.check_within(series.len())?;
    Ok(&series.counts()[window.t0..=window.end])
}

/// `c_s · K(s)` for each window day.
fn parent_weights(counts: &[u64], params: &ModelParams) -> Vec<f64> {
    let t0 = params.step.window.t0;
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 * params.step.at(t0 + i))
        .collect()
}

/// Intensity of every window day given precomputed parent weights.
fn intensities(weights: &[f64], mu: f64, kernel: &TriggeringHistogram) -> Vec<f64> {
    let g = kernel.densities();
    (0..weights.len())
        .map(|d| {
            let reach = g.len().min(d);
            mu + (1..=reach).map(|u| weights[d - u] * g[u - 1]).sum::<f64>()
        })
        .collect()
}

/// `λ(d) = μ + Σ_{u=1..L} c_{d-u} K(d-u) g(u)`, with history starting at the
/// window start `t0`.
pub fn conditional_intensity(params: &ModelParams, series: &DailyCountSeries, day: usize) -> f64 {
    let t0 = params.step.window.t0;
    if day <= t0 {
        return params.mu;
    }
    let counts = series.counts();
    let reach = params.kernel.max_lag().min(day - t0);
    params.mu
        + (1..=reach)
            .map(|u| {
                let parent = day - u;
                counts[parent] as f64 * params.step.at(parent) * params.kernel.density(u)
            })
            .sum::<f64>()
}

/// Day-level Poisson log-likelihood `Σ_d [c_d log λ(d) − λ(d)]` over the
/// window, additive constants dropped. Returns `-inf` when a day with events
/// has zero intensity.
pub fn log_likelihood(params: &ModelParams, series: &DailyCountSeries) -> Result<f64> {
    let counts = window_counts(series, &params.step.window)?;
    let weights = parent_weights(counts, params);
    let lambda = intensities(&weights, params.mu, &params.kernel);
    Ok(loglik_from(counts, &lambda))
}

fn loglik_from(counts: &[u64], lambda: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&c, &l) in counts.iter().zip(lambda) {
        if c > 0 {
            if l <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += c as f64 * l.ln();
        }
        total -= l;
    }
    total
}

/// Splits each day's count into background and lagged trigger masses.
pub fn e_step(params: &ModelParams, series: &DailyCountSeries) -> Result<ResponsibilityMatrix> {
    let counts = window_counts(series, &params.step.window)?;
    let weights = parent_weights(counts, params);
    let lambda = intensities(&weights, params.mu, &params.kernel);
    e_step_with(counts, &weights, &lambda, params)
}

fn e_step_with(
    counts: &[u64],
    weights: &[f64],
    lambda: &[f64],
    params: &ModelParams,
) -> Result<ResponsibilityMatrix> {
    let t0 = params.step.window.t0;
    let max_lag = params.kernel.max_lag();
    let g = params.kernel.densities();
    let n = counts.len();
    let mut background = vec![0.0; n];
    let mut trigger = vec![0.0; n * max_lag];
    for d in 0..n {
        let c = counts[d] as f64;
        if counts[d] == 0 {
            continue;
        }
        if lambda[d] <= 0.0 {
            return Err(Error::ZeroIntensityDay {
                day: t0 + d,
                count: counts[d],
            });
        }
        let scale = c / lambda[d];
        background[d] = params.mu * scale;
        let row = &mut trigger[d * max_lag..(d + 1) * max_lag];
        for u in 1..=max_lag.min(d) {
            row[u - 1] = weights[d - u] * g[u - 1] * scale;
        }
    }
    Ok(ResponsibilityMatrix {
        first_day: t0,
        max_lag,
        background,
        trigger,
    })
}

/// Outcome of one M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub params: ModelParams,
    /// Periods without parent points (level forced to zero).
    pub sparse_periods: [bool; 3],
}

/// Re-estimates `μ`, the kernel and the period levels from responsibilities.
pub fn m_step(
    resp: &ResponsibilityMatrix,
    series: &DailyCountSeries,
    window: StudyWindow,
    options: &FitOptions,
) -> Result<MStep> {
    let counts = window_counts(series, &window)?;
    if resp.first_day != window.t0 || resp.n_days() != counts.len() {
        return Err(Error::Invalid(
            "responsibilities do not match the window".into(),
        ));
    }

    let mu = resp.total_background() / window.n_days() as f64;

    let lag_totals = resp.lag_totals();
    let trigger_total: f64 = lag_totals.iter().sum();
    let kernel = if trigger_total > 0.0 {
        TriggeringHistogram {
            densities: lag_totals.iter().map(|w| w / trigger_total).collect(),
        }
    } else {
        TriggeringHistogram::uniform(resp.max_lag)
    };

    let mut mass = [0.0; 3];
    let mut parents = [0u64; 3];
    for (i, (offspring, &c)) in resp.offspring_by_parent().iter().zip(counts).enumerate() {
        let p = window.period_of(window.t0 + i).index();
        mass[p] += offspring;
        parents[p] += c;
    }
    let lengths = window.period_lengths();
    let mut levels = [0.0; 3];
    let mut sparse = [false; 3];
    for p in 0..3 {
        if lengths[p] == 0 {
            continue;
        }
        if parents[p] == 0 {
            sparse[p] = true;
            continue;
        }
        levels[p] = match options.normalization {
            Normalization::PerParent => mass[p] / parents[p] as f64,
            Normalization::PerDay => mass[p] / lengths[p] as f64,
        };
    }
    Ok(MStep {
        params: ModelParams {
            mu,
            step: ProductivityStep::from_levels(levels, window),
            kernel,
        },
        sparse_periods: sparse,
    })
}

/// One E-step followed by one M-step.
pub fn em_sweep(
    params: &ModelParams,
    series: &DailyCountSeries,
    options: &FitOptions,
) -> Result<MStep> {
    let resp = e_step(params, series)?;
    m_step(&resp, series, params.step.window, options)
}

/// Fits the model from the default cold start.
pub fn fit(series: &DailyCountSeries, window: StudyWindow, options: &FitOptions) -> Result<FitResult> {
    let init = ModelParams::initial(series, window, options.max_lag);
    fit_from(series, init, options)
}

/// Fits the model starting from `init`, whose window defines the periods.
pub fn fit_from(
    series: &DailyCountSeries,
    init: ModelParams,
    options: &FitOptions,
) -> Result<FitResult> {
    if options.max_lag == 0 || options.max_iter == 0 || !(options.tol > 0.0) {
        return Err(Error::Invalid(format!("invalid fit options {options:?}")));
    }
    if init.kernel.max_lag() != options.max_lag {
        return Err(Error::Invalid(
            "initial kernel does not match the configured max lag".into(),
        ));
    }
    let window = init.step.window;
    let counts = window_counts(series, &window)?;
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::NoEvents);
    }

    let mut params = init;
    params.mu = params.mu.max(MU_FLOOR);
    let mut sparse = [false; 3];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let weights = parent_weights(counts, &params);
        let lambda = intensities(&weights, params.mu, &params.kernel);
        trace.push(loglik_from(counts, &lambda));
        let resp = e_step_with(counts, &weights, &lambda, &params)?;
        let MStep {
            params: mut next,
            sparse_periods,
        } = m_step(&resp, series, window, options)?;
        next.mu = next.mu.max(MU_FLOOR);
        sparse = sparse_periods;
        // converged fits report the parameters the final sweep started from
        if params.max_abs_change(&next) < options.tol {
            converged = true;
            break;
        }
        params = next;
    }
    let loglik = log_likelihood(&params, series)?;
    if !converged {
        trace.push(loglik);
    }
    Ok(FitResult {
        mu_at_floor: params.mu <= MU_FLOOR,
        mu: params.mu,
        step: params.step,
        kernel: params.kernel,
        loglik,
        iterations,
        converged,
        sparse_periods: sparse,
        loglik_trace: trace,
    })
}
