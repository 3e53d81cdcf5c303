//! Event impact: the population-adjusted productivity multiplier κ, the
//! excess-case estimate and the outcome of one event region against its
//! reference region.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{
    aggregate_excluding, ingest_cumulative, slice_window, CaseRecord, CumulativeRow,
    DailyCountSeries, RegionTable, StudyWindow, DEFAULT_POST_DAYS, DEFAULT_PRE_DAYS,
};
use crate::duration::{estimate_duration, final_fit, GuardOptions, GuardResult, ScanOptions};
use crate::error::{Error, Result};
use crate::misd::{fit, FitResult};

/// Which productivity quantity enters κ at each level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaVariant {
    /// `k* - k` at each level.
    #[default]
    AsPrinted,
    /// `k*` alone at each level.
    ExcessOnly,
}

impl FromStr for KappaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-printed" => Ok(KappaVariant::AsPrinted),
            "excess-only" => Ok(KappaVariant::ExcessOnly),
            other => Err(Error::Invalid(format!(
                "unknown kappa variant {other:?} (expected as-printed or excess-only)"
            ))),
        }
    }
}

impl fmt::Display for KappaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KappaVariant::AsPrinted => "as-printed",
            KappaVariant::ExcessOnly => "excess-only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    RallyEffect,
    NoEffect,
    BelowState,
    NotConverged,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::RallyEffect => "RallyEffect",
            Outcome::NoEffect => "NoEffect",
            Outcome::BelowState => "BelowState",
            Outcome::NotConverged => "NotConverged",
        })
    }
}

fn level_excess(f: &FitResult, variant: KappaVariant) -> f64 {
    match variant {
        KappaVariant::AsPrinted => f.step.k_star - f.step.k,
        KappaVariant::ExcessOnly => f.step.k_star,
    }
}

/// κ = (k*_c - k_c)/pop_c - (k*_s - k_s)/pop_s, or the `k*`-only variant.
pub fn compute_kappa(
    county: &FitResult,
    county_population: u64,
    state: &FitResult,
    state_population: u64,
    variant: KappaVariant,
) -> Result<f64> {
    for (name, f) in [("county", county), ("state", state)] {
        if !f.converged {
            return Err(Error::UnusableFit(format!("{name} fit did not converge")));
        }
    }
    if county_population == 0 || state_population == 0 {
        return Err(Error::Invalid("populations must be positive".into()));
    }
    Ok(level_excess(county, variant) / county_population as f64
        - level_excess(state, variant) / state_population as f64)
}

/// `round(kappa * population * duration)`, floored at zero.
pub fn excess_cases(kappa: f64, population: u64, duration: usize) -> u64 {
    let cases = (kappa * population as f64 * duration as f64).round();
    if cases > 0.0 {
        cases as u64
    } else {
        0
    }
}

pub fn classify(county: &FitResult, state: &FitResult, guard: &GuardResult, kappa: f64) -> Outcome {
    if !county.converged || !state.converged {
        Outcome::NotConverged
    } else if !guard.effect_detected || county.step.k_star <= 0.0 {
        Outcome::NoEffect
    } else if kappa <= 0.0 {
        Outcome::BelowState
    } else {
        Outcome::RallyEffect
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactOptions {
    pub pre_days: usize,
    pub post_days: usize,
    pub guard: GuardOptions,
    /// Scan options; `scan.fit` is also used for the final county fit and
    /// the state fit.
    pub scan: ScanOptions,
    pub kappa_variant: KappaVariant,
}

impl Default for ImpactOptions {
    fn default() -> Self {
        Self {
            pre_days: DEFAULT_PRE_DAYS,
            post_days: DEFAULT_POST_DAYS,
            guard: GuardOptions::default(),
            scan: ScanOptions::default(),
            kappa_variant: KappaVariant::default(),
        }
    }
}

/// What went into a report besides the fits themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub options: ImpactOptions,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    /// Fitted window, in days from `first_date`.
    pub window: StudyWindow,
    pub truncated: bool,
    pub county_population: u64,
    pub state_population: u64,
    /// Regions summed into the state series.
    pub state_regions: Vec<String>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub region_id: String,
    pub state_id: String,
    pub event_date: NaiveDate,
    /// Absent when either fit failed to converge.
    pub kappa: Option<f64>,
    pub duration: usize,
    pub excess_cases: u64,
    pub outcome: Outcome,
    pub guard: GuardResult,
    pub county_fit: FitResult,
    pub state_fit: FitResult,
    pub provenance: Provenance,
}

impl ImpactReport {
    pub fn to_json_pretty(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Inputs of one event analysis. `state_regions` holds every county series
/// of the state, event counties included; the reference series sums those
/// not in `excluded` and not the event county itself.
#[derive(Debug, Clone, Copy)]
pub struct ImpactInput<'a> {
    pub county: &'a DailyCountSeries,
    pub state_id: &'a str,
    pub state_regions: &'a [DailyCountSeries],
    pub excluded: &'a BTreeSet<String>,
    pub event_date: NaiveDate,
    pub populations: &'a RegionTable,
}

pub fn run_pipeline(input: &ImpactInput<'_>, options: &ImpactOptions) -> Result<ImpactReport> {
    let county_population = input.populations.population(input.county.region_id())?;
    let slice = slice_window(input.county, input.event_date, options.pre_days, options.post_days)?;
    let estimate = estimate_duration(&slice.series, &slice.window, &options.guard, &options.scan)?;
    let window = estimate.fitted_window(&slice.window)?;
    let county_fit = final_fit(&slice.series, &slice.window, &estimate, &options.scan.fit)?;

    let mut excluded = input.excluded.clone();
    excluded.insert(input.county.region_id().to_string());
    let included: Vec<&DailyCountSeries> = input
        .state_regions
        .iter()
        .filter(|s| !excluded.contains(s.region_id()))
        .collect();
    let state_regions: Vec<String> = included.iter().map(|s| s.region_id().to_string()).collect();
    let mut state_population = 0u64;
    for id in &state_regions {
        state_population += input.populations.population(id)?;
    }
    let state = aggregate_excluding(included, &BTreeSet::new(), input.state_id)?;
    let first_date = slice.series.origin();
    let last_date = slice.series.last_date();
    let (first, last) = match (state.day_of(first_date), state.day_of(last_date)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::EventOutsideData(format!(
                "state series {} covers {}..={}, county window needs {first_date}..={last_date}",
                input.state_id,
                state.origin(),
                state.last_date()
            )))
        }
    };
    let state_fit = fit(&state.subseries(first, last)?, window, &options.scan.fit)?;

    let kappa = if county_fit.converged && state_fit.converged {
        Some(compute_kappa(
            &county_fit,
            county_population,
            &state_fit,
            state_population,
            options.kappa_variant,
        )?)
    } else {
        None
    };
    let outcome = classify(
        &county_fit,
        &state_fit,
        &estimate.guard,
        kappa.unwrap_or(f64::NAN),
    );
    let duration = estimate.duration();
    let excess = match (outcome, kappa) {
        (Outcome::RallyEffect, Some(k)) => excess_cases(k, county_population, duration),
        _ => 0,
    };
    Ok(ImpactReport {
        region_id: input.county.region_id().to_string(),
        state_id: input.state_id.to_string(),
        event_date: input.event_date,
        kappa,
        duration,
        excess_cases: excess,
        outcome,
        guard: estimate.guard,
        county_fit,
        state_fit,
        provenance: Provenance {
            options: *options,
            first_date,
            last_date,
            window,
            truncated: slice.truncated,
            county_population,
            state_population,
            state_regions,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}

/// Runs [`run_pipeline`] for every `(region, date)` event of a county case
/// table. Counties are grouped into states by the table's state column and
/// every event county is left out of every state reference series. Events
/// run in parallel; reports come back in event order.
pub fn run_events(
    records: &[CaseRecord],
    populations: &RegionTable,
    events: &[(String, NaiveDate)],
    options: &ImpactOptions,
) -> Result<Vec<ImpactReport>> {
    let mut rows: BTreeMap<String, Vec<CumulativeRow>> = BTreeMap::new();
    let mut state_of: BTreeMap<String, String> = BTreeMap::new();
    for r in records {
        let id = r.region_id();
        state_of.entry(id.clone()).or_insert_with(|| r.state.clone());
        rows.entry(id).or_default().push(r.to_cumulative());
    }
    let mut series: BTreeMap<String, DailyCountSeries> = BTreeMap::new();
    for (id, region_rows) in &rows {
        series.insert(id.clone(), ingest_cumulative(region_rows, id)?);
    }
    let mut by_state: BTreeMap<String, Vec<DailyCountSeries>> = BTreeMap::new();
    for (id, s) in &series {
        by_state.entry(state_of[id].clone()).or_default().push(s.clone());
    }
    for (id, _) in events {
        if !series.contains_key(id) {
            return Err(Error::RegionNotFound(id.clone()));
        }
    }
    let excluded: BTreeSet<String> = events.iter().map(|(id, _)| id.clone()).collect();
    events
        .par_iter()
        .map(|(id, date)| {
            let state_id = &state_of[id];
            let input = ImpactInput {
                county: &series[id],
                state_id,
                state_regions: &by_state[state_id],
                excluded: &excluded,
                event_date: *date,
                populations,
            };
            run_pipeline(&input, options)
        })
        .collect()
}

/// Summary table, one row per report:
/// `county,state,date,mu,k,k_star,duration,cases,outcome,converged`.
pub fn write_table<W: Write>(reports: &[ImpactReport], mut out: W) -> Result<()> {
    writeln!(out, "county,state,date,mu,k,k_star,duration,cases,outcome,converged")?;
    for r in reports {
        let f = &r.county_fit;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.region_id,
            r.state_id,
            r.event_date,
            f.mu,
            f.step.k,
            f.step.k_star,
            r.duration,
            r.excess_cases,
            r.outcome,
            r.county_fit.converged && r.state_fit.converged
        )?;
    }
    Ok(())
}
