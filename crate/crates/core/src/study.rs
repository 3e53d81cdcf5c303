//! Replication harness for the simulation study: generate the 250 synthetic
//! catalogs, run guard + scan + final fit on each, and summarise duration
//! errors and productivity ratios per scenario.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::StudyWindow;
use crate::duration::{estimate_duration, final_fit, GuardOptions, ScanOptions};
use crate::error::Result;
use crate::simulator::{generate_study, StudyCatalog, STUDY_DURATIONS, STUDY_EVENT_TIME};

/// Day index of the event in a synthetic catalog. Day `d` covers the time
/// interval `(d, d+1]`, so the excess starts on the day after this one.
pub const STUDY_EVENT_DAY: usize = STUDY_EVENT_TIME as usize - 1;

pub const MEDIAN_ERROR_BOUNDS: (f64, f64) = (-2.0, 3.0);
pub const PERCENTILE_ERROR_BOUNDS: (f64, f64) = (-10.0, 7.0);
pub const MAX_FALSE_POSITIVES: usize = 8;
pub const RATIO_BOUNDS_40: (f64, f64) = (4.0, 7.0);
pub const RATIO_BOUNDS_10: (f64, f64) = (1.0, 3.5);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyOptions {
    pub guard: GuardOptions,
    pub scan: ScanOptions,
}

/// Analysis window of a synthetic catalog with `n_days` days.
pub fn study_window(n_days: usize) -> StudyWindow {
    StudyWindow::new(0, STUDY_EVENT_DAY, n_days - 1).expect("study window is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogOutcome {
    pub catalog_id: usize,
    pub true_duration: usize,
    pub seed: u64,
    pub total_count: u64,
    pub guard_p_value: f64,
    pub detected: bool,
    pub estimated_duration: usize,
    pub duration_error: i64,
    pub mu: f64,
    pub k: f64,
    pub k_star: f64,
    /// `k* / k` of the final fit (zero when no excess was found).
    pub ratio: f64,
    pub converged: bool,
}

pub fn analyze_catalog(catalog: &StudyCatalog, options: &StudyOptions) -> Result<CatalogOutcome> {
    let series = &catalog.series;
    let window = study_window(series.len());
    let estimate = estimate_duration(series, &window, &options.guard, &options.scan)?;
    let fitted = final_fit(series, &window, &estimate, &options.scan.fit)?;
    let estimated = estimate.duration();
    Ok(CatalogOutcome {
        catalog_id: catalog.id,
        true_duration: catalog.duration,
        seed: catalog.config.seed,
        total_count: series.total(),
        guard_p_value: estimate.guard.p_value,
        detected: estimate.guard.effect_detected,
        estimated_duration: estimated,
        duration_error: estimated as i64 - catalog.duration as i64,
        mu: fitted.mu,
        k: fitted.step.k,
        k_star: fitted.step.k_star,
        ratio: fitted.excess_ratio(),
        converged: fitted.converged,
    })
}

/// Order statistics reported per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub p5: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p95: f64,
    pub max: f64,
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n-1)p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Summary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Summary {
        min: sorted[0],
        p5: quantile(&sorted, 0.05),
        p25: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        p75: quantile(&sorted, 0.75),
        p95: quantile(&sorted, 0.95),
        max: sorted[sorted.len() - 1],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub duration: usize,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

impl Check {
    fn within(name: impl Into<String>, value: f64, (lower, upper): (f64, f64)) -> Self {
        Self {
            name: name.into(),
            value,
            lower,
            upper,
            pass: value >= lower && value <= upper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub master_seed: u64,
    pub outcomes: Vec<CatalogOutcome>,
    /// Duration error summaries, one row per scenario.
    pub duration_rows: Vec<ScenarioRow>,
    /// `k* / k` summaries for the scenarios with an excess.
    pub ratio_rows: Vec<ScenarioRow>,
    /// Duration-0 catalogs given a nonzero duration.
    pub false_positives: usize,
    /// Catalogs with an excess where the guard found nothing, per scenario.
    pub missed_detections: Vec<(usize, usize)>,
    pub checks: Vec<Check>,
}

impl StudyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn scenario(&self, duration: usize) -> impl Iterator<Item = &CatalogOutcome> {
        self.outcomes.iter().filter(move |o| o.true_duration == duration)
    }

    pub fn duration_row(&self, duration: usize) -> Option<&Summary> {
        self.duration_rows
            .iter()
            .find(|r| r.duration == duration)
            .map(|r| &r.summary)
    }

    pub fn ratio_row(&self, duration: usize) -> Option<&Summary> {
        self.ratio_rows
            .iter()
            .find(|r| r.duration == duration)
            .map(|r| &r.summary)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn from_outcomes(master_seed: u64, outcomes: Vec<CatalogOutcome>) -> Self {
        let mut report = StudyReport {
            master_seed,
            outcomes,
            duration_rows: Vec::new(),
            ratio_rows: Vec::new(),
            false_positives: 0,
            missed_detections: Vec::new(),
            checks: Vec::new(),
        };
        for d in STUDY_DURATIONS {
            let errors: Vec<f64> = report.scenario(d).map(|o| o.duration_error as f64).collect();
            if errors.is_empty() {
                continue;
            }
            report.duration_rows.push(ScenarioRow {
                duration: d,
                summary: summarize(&errors),
            });
            if d == 0 {
                report.false_positives =
                    report.scenario(0).filter(|o| o.estimated_duration > 0).count();
                continue;
            }
            let ratios: Vec<f64> = report.scenario(d).map(|o| o.ratio).collect();
            report.ratio_rows.push(ScenarioRow {
                duration: d,
                summary: summarize(&ratios),
            });
            let missed = report.scenario(d).filter(|o| !o.detected).count();
            report.missed_detections.push((d, missed));
        }

        let mut checks = Vec::new();
        for row in report.duration_rows.iter().filter(|r| r.duration > 0) {
            checks.push(Check::within(
                format!("duration_{}_median_error", row.duration),
                row.summary.median,
                MEDIAN_ERROR_BOUNDS,
            ));
            checks.push(Check::within(
                format!("duration_{}_p5_error", row.duration),
                row.summary.p5,
                PERCENTILE_ERROR_BOUNDS,
            ));
            checks.push(Check::within(
                format!("duration_{}_p95_error", row.duration),
                row.summary.p95,
                PERCENTILE_ERROR_BOUNDS,
            ));
        }
        if report.duration_row(0).is_some() {
            checks.push(Check::within(
                "duration_0_false_positives",
                report.false_positives as f64,
                (0.0, MAX_FALSE_POSITIVES as f64),
            ));
        }
        if let Some(s) = report.ratio_row(40) {
            checks.push(Check::within("ratio_40_median", s.median, RATIO_BOUNDS_40));
        }
        if let Some(s) = report.ratio_row(10) {
            checks.push(Check::within("ratio_10_median", s.median, RATIO_BOUNDS_10));
        }
        report.checks = checks;
        report
    }

    /// Duration-error table: `duration,min,p5,p25,median,p75,p95,max`.
    pub fn write_duration_table<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.duration_rows)
    }

    /// Productivity-ratio table with the same columns.
    pub fn write_ratio_table<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.ratio_rows)
    }

    /// `check,value,lower,upper,pass`.
    pub fn write_checks<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "check,value,lower,upper,pass")?;
        for c in &self.checks {
            writeln!(out, "{},{},{},{},{}", c.name, c.value, c.lower, c.upper, c.pass)?;
        }
        Ok(())
    }

    /// One row per catalog.
    pub fn write_outcomes<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "catalog_id,true_duration,seed,total_count,guard_p_value,detected,estimated_duration,duration_error,mu,k,k_star,ratio,converged"
        )?;
        for o in &self.outcomes {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                o.catalog_id,
                o.true_duration,
                o.seed,
                o.total_count,
                o.guard_p_value,
                o.detected,
                o.estimated_duration,
                o.duration_error,
                o.mu,
                o.k,
                o.k_star,
                o.ratio,
                o.converged
            )?;
        }
        Ok(())
    }
}

fn write_rows<W: Write>(mut out: W, rows: &[ScenarioRow]) -> Result<()> {
    writeln!(out, "duration,min,p5,p25,median,p75,p95,max")?;
    for r in rows {
        let s = &r.summary;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.duration, s.min, s.p5, s.p25, s.median, s.p75, s.p95, s.max
        )?;
    }
    Ok(())
}

/// Analyses a set of catalogs in parallel; the order of `outcomes` follows
/// the input order.
pub fn analyze_catalogs(catalogs: &[StudyCatalog], options: &StudyOptions) -> Result<Vec<CatalogOutcome>> {
    catalogs
        .par_iter()
        .map(|c| analyze_catalog(c, options))
        .collect()
}

/// Generates and analyses the full 250-catalog study.
pub fn replicate(master_seed: u64, options: &StudyOptions) -> Result<StudyReport> {
    let catalogs = generate_study(master_seed);
    let outcomes = analyze_catalogs(&catalogs, options)?;
    Ok(StudyReport::from_outcomes(master_seed, outcomes))
}
