//! Daily count ingestion: cumulative case tables to clean daily counts,
//! event-centred windows and reference-region aggregates.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Days of history kept before the event by default.
pub const DEFAULT_PRE_DAYS: usize = 30;
/// Days kept after the event by default.
pub const DEFAULT_POST_DAYS: usize = 150;

/// Nonnegative daily event counts for one region, day `d` being
/// `origin + d` days.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyCountSeries {
    region_id: String,
    origin: NaiveDate,
    counts: Vec<u64>,
}

impl DailyCountSeries {
    pub fn new(region_id: impl Into<String>, origin: NaiveDate, counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Invalid("a daily series needs at least one day".into()));
        }
        Ok(Self {
            region_id: region_id.into(),
            origin,
            counts,
        })
    }

    pub fn region_id(&self) -> &str {
        &self.region_id
    }

    pub fn origin(&self) -> NaiveDate {
        self.origin
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    /// Always false: a series holds at least one day.
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Index of the last day.
    pub fn last_day(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.origin + Days::new(day as u64)
    }

    pub fn last_date(&self) -> NaiveDate {
        self.date_of(self.last_day())
    }

    /// Day index of `date`, if it falls inside the series.
    pub fn day_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.origin).num_days();
        if offset < 0 || offset as usize >= self.counts.len() {
            None
        } else {
            Some(offset as usize)
        }
    }

    pub fn with_region_id(mut self, region_id: impl Into<String>) -> Self {
        self.region_id = region_id.into();
        self
    }

    /// Running sum of the daily counts.
    pub fn cumulative(&self) -> Vec<u64> {
        self.counts
            .iter()
            .scan(0u64, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect()
    }

    /// Sub-series covering days `first..=last`.
    pub fn subseries(&self, first: usize, last: usize) -> Result<Self> {
        if first > last || last >= self.counts.len() {
            return Err(Error::Invalid(format!(
                "day range {first}..={last} outside series of {} days",
                self.counts.len()
            )));
        }
        Ok(Self {
            region_id: self.region_id.clone(),
            origin: self.date_of(first),
            counts: self.counts[first..=last].to_vec(),
        })
    }

    /// Writes the canonical `date,count` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["date", "count"]).map_err(csv_io)?;
        for (day, count) in self.counts.iter().enumerate() {
            out.write_record([self.date_of(day).to_string(), count.to_string()])
                .map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a canonical `date,count` CSV. Dates must be consecutive.
    pub fn read_csv<R: Read>(reader: R, region_id: impl Into<String>) -> Result<Self> {
        let mut input = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        expect_headers(&mut input, &["date", "count"])?;
        let mut origin = None;
        let mut counts = Vec::new();
        for (idx, record) in input.records().enumerate() {
            let line = format!("line {}", idx + 2);
            let record = record.map_err(|e| Error::schema(&line, e.to_string()))?;
            let date = parse_date(field(&record, 0, &line)?, &line)?;
            let count = parse_u64(field(&record, 1, &line)?, "count", &line)?;
            match origin {
                None => origin = Some(date),
                Some(o) => {
                    let expected = o + Days::new(counts.len() as u64);
                    if date != expected {
                        return Err(Error::schema(
                            line,
                            format!("expected date {expected}, found {date}"),
                        ));
                    }
                }
            }
            counts.push(count);
        }
        let origin = origin.ok_or_else(|| Error::schema("line 2", "no data rows"))?;
        Self::new(region_id, origin, counts)
    }
}

/// Which of the three productivity periods a day belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Baseline,
    Excess,
    Post,
}

impl Period {
    pub const ALL: [Period; 3] = [Period::Baseline, Period::Excess, Period::Post];

    pub fn index(self) -> usize {
        match self {
            Period::Baseline => 0,
            Period::Excess => 1,
            Period::Post => 2,
        }
    }
}

/// Analysis window in day indices: start `t0`, event day `t_star`, optional
/// excess end `t_prime` and last day `end`.
///
/// Days `t0..=t_star` form the baseline period, `t_star+1..=t_prime` the
/// excess period and `t_prime+1..=end` the post period. Without `t_prime`
/// every day is baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub t0: usize,
    pub t_star: usize,
    pub t_prime: Option<usize>,
    pub end: usize,
}

impl StudyWindow {
    pub fn new(t0: usize, t_star: usize, end: usize) -> Result<Self> {
        if !(t0 < t_star && t_star < end) {
            return Err(Error::Invalid(format!(
                "window needs t0 < t* < T, got t0={t0}, t*={t_star}, T={end}"
            )));
        }
        Ok(Self {
            t0,
            t_star,
            t_prime: None,
            end,
        })
    }

    pub fn with_t_prime(mut self, t_prime: usize) -> Result<Self> {
        if !(self.t_star < t_prime && t_prime <= self.end) {
            return Err(Error::Invalid(format!(
                "t' must satisfy t* < t' <= T, got t*={}, t'={t_prime}, T={}",
                self.t_star, self.end
            )));
        }
        self.t_prime = Some(t_prime);
        Ok(self)
    }

    pub fn without_t_prime(mut self) -> Self {
        self.t_prime = None;
        self
    }

    /// Number of days covered, `end - t0 + 1`.
    pub fn n_days(&self) -> usize {
        self.end - self.t0 + 1
    }

    /// Length of the excess period in days (0 without `t_prime`).
    pub fn duration(&self) -> usize {
        self.t_prime.map_or(0, |tp| tp - self.t_star)
    }

    /// Period of an absolute day index inside the window.
    pub fn period_of(&self, day: usize) -> Period {
        match self.t_prime {
            None => Period::Baseline,
            Some(_) if day <= self.t_star => Period::Baseline,
            Some(tp) if day <= tp => Period::Excess,
            Some(_) => Period::Post,
        }
    }

    /// Number of days in each period.
    pub fn period_lengths(&self) -> [usize; 3] {
        match self.t_prime {
            None => [self.n_days(), 0, 0],
            Some(tp) => [
                self.t_star - self.t0 + 1,
                tp - self.t_star,
                self.end - tp,
            ],
        }
    }

    /// Checks that the window fits inside a series of `len` days.
    pub fn check_within(&self, len: usize) -> Result<()> {
        if self.end >= len {
            return Err(Error::Invalid(format!(
                "window ends at day {} but the series has {len} days",
                self.end
            )));
        }
        Ok(())
    }
}

/// Region populations keyed by region id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionTable {
    populations: BTreeMap<String, u64>,
}

impl RegionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, region_id: impl Into<String>, population: u64) -> Result<()> {
        let region_id = region_id.into();
        if population == 0 {
            return Err(Error::Invalid(format!(
                "population of {region_id} must be positive"
            )));
        }
        self.populations.insert(region_id, population);
        Ok(())
    }

    pub fn population(&self, region_id: &str) -> Result<u64> {
        self.populations
            .get(region_id)
            .copied()
            .ok_or_else(|| Error::UnknownPopulation(region_id.to_string()))
    }

    pub fn contains(&self, region_id: &str) -> bool {
        self.populations.contains_key(region_id)
    }

    pub fn len(&self) -> usize {
        self.populations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.populations.is_empty()
    }

    /// Reads a `fips,population` CSV.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut input = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        expect_headers(&mut input, &["fips", "population"])?;
        let mut table = Self::new();
        for (idx, record) in input.records().enumerate() {
            let line = format!("line {}", idx + 2);
            let record = record.map_err(|e| Error::schema(&line, e.to_string()))?;
            let fips = field(&record, 0, &line)?;
            let population = parse_u64(field(&record, 1, &line)?, "population", &line)?;
            if fips.is_empty() {
                return Err(Error::schema(line, "empty fips"));
            }
            table
                .insert(fips, population)
                .map_err(|e| Error::schema(&line, e.to_string()))?;
        }
        Ok(table)
    }
}

/// One cumulative observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CumulativeRow {
    pub date: NaiveDate,
    pub region_id: String,
    pub cumulative: u64,
}

/// One row of a county-level cumulative case table
/// (`date,county,state,fips,cases,deaths`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseRecord {
    pub date: NaiveDate,
    pub county: String,
    pub state: String,
    pub fips: String,
    pub cases: u64,
}

impl CaseRecord {
    /// The fips code, or `state:county` when the fips is blank.
    pub fn region_id(&self) -> String {
        if self.fips.is_empty() {
            format!("{}:{}", self.state, self.county)
        } else {
            self.fips.clone()
        }
    }

    pub fn to_cumulative(&self) -> CumulativeRow {
        CumulativeRow {
            date: self.date,
            region_id: self.region_id(),
            cumulative: self.cases,
        }
    }
}

/// Parses a county case table with header `date,county,state,fips,cases,deaths`.
/// Deaths are not read.
pub fn read_case_table<R: Read>(reader: R) -> Result<Vec<CaseRecord>> {
    let mut input = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    expect_headers(
        &mut input,
        &["date", "county", "state", "fips", "cases", "deaths"],
    )?;
    let mut rows = Vec::new();
    for (idx, record) in input.records().enumerate() {
        let line = format!("line {}", idx + 2);
        let record = record.map_err(|e| Error::schema(&line, e.to_string()))?;
        rows.push(CaseRecord {
            date: parse_date(field(&record, 0, &line)?, &line)?,
            county: field(&record, 1, &line)?.to_string(),
            state: field(&record, 2, &line)?.to_string(),
            fips: field(&record, 3, &line)?.to_string(),
            cases: parse_u64(field(&record, 4, &line)?, "cases", &line)?,
        });
    }
    Ok(rows)
}

/// First-differences the cumulative counts of `region`.
///
/// Day 0 is the first reported date. Missing interior dates carry the
/// cumulative value forward and negative differences clamp to zero.
/// Exact duplicate rows are dropped; duplicates with different values are
/// rejected.
pub fn ingest_cumulative(rows: &[CumulativeRow], region: &str) -> Result<DailyCountSeries> {
    let mut by_date: BTreeMap<NaiveDate, u64> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.region_id == region) {
        if let Some(&previous) = by_date.get(&row.date) {
            if previous != row.cumulative {
                return Err(Error::AmbiguousInput(format!(
                    "region {region} has conflicting values {previous} and {} on {}",
                    row.cumulative, row.date
                )));
            }
        } else {
            by_date.insert(row.date, row.cumulative);
        }
    }
    let (&origin, _) = by_date
        .iter()
        .next()
        .ok_or_else(|| Error::RegionNotFound(region.to_string()))?;
    let (&last, _) = by_date.iter().next_back().expect("nonempty");
    let n_days = (last - origin).num_days() as usize + 1;

    let mut counts = Vec::with_capacity(n_days);
    let mut previous = 0u64;
    let mut reported = by_date.iter().peekable();
    for day in 0..n_days {
        let date = origin + Days::new(day as u64);
        let cumulative = match reported.peek() {
            Some(&(&d, &value)) if d == date => {
                reported.next();
                value
            }
            _ => previous,
        };
        counts.push(cumulative.saturating_sub(previous));
        // a downward correction lowers the running total the next day is
        // differenced against
        previous = cumulative;
    }
    DailyCountSeries::new(region, origin, counts)
}

/// An event-centred slice of a series and its analysis window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSlice {
    pub series: DailyCountSeries,
    pub window: StudyWindow,
    /// True when either side was cut short by the series boundaries.
    pub truncated: bool,
}

/// Cuts `[event - pre_days, event + post_days]` out of `series`, truncating at
/// the series boundaries.
///
/// A truncated side must keep at least `min(requested, 2)` days.
pub fn slice_window(
    series: &DailyCountSeries,
    event_date: NaiveDate,
    pre_days: usize,
    post_days: usize,
) -> Result<WindowSlice> {
    if pre_days == 0 || post_days == 0 {
        return Err(Error::WindowTooShort(
            "pre and post windows need at least one day".into(),
        ));
    }
    let event = series.day_of(event_date).ok_or_else(|| {
        Error::EventOutsideData(format!(
            "{event_date} not within {}..={}",
            series.origin(),
            series.last_date()
        ))
    })?;
    let first = event.saturating_sub(pre_days);
    let last = (event + post_days).min(series.last_day());
    let pre = event - first;
    let post = last - event;
    if pre < pre_days.min(2) || post < post_days.min(2) {
        return Err(Error::WindowTooShort(format!(
            "only {pre} day(s) before and {post} day(s) after {event_date}"
        )));
    }
    let sub = series.subseries(first, last)?;
    let window = StudyWindow::new(0, pre, last - first)?;
    Ok(WindowSlice {
        series: sub,
        window,
        truncated: pre < pre_days || post < post_days,
    })
}

/// Element-wise sum of the daily counts of every series not in `excluded`,
/// aligned by calendar date. Days a region does not cover count as zero.
pub fn aggregate_excluding<'a, I>(
    all_series: I,
    excluded: &BTreeSet<String>,
    label: &str,
) -> Result<DailyCountSeries>
where
    I: IntoIterator<Item = &'a DailyCountSeries>,
{
    let included: Vec<&DailyCountSeries> = all_series
        .into_iter()
        .filter(|s| !excluded.contains(s.region_id()))
        .collect();
    let origin = included
        .iter()
        .map(|s| s.origin())
        .min()
        .ok_or(Error::EmptyAggregate)?;
    let last = included.iter().map(|s| s.last_date()).max().expect("nonempty");
    let mut counts = vec![0u64; (last - origin).num_days() as usize + 1];
    for series in included {
        let offset = (series.origin() - origin).num_days() as usize;
        for (slot, &c) in counts[offset..].iter_mut().zip(series.counts()) {
            *slot += c;
        }
    }
    DailyCountSeries::new(label, origin, counts)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn expect_headers<R: Read>(input: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let headers = input
        .headers()
        .map_err(|e| Error::schema("line 1", e.to_string()))?;
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(Error::schema(
            "line 1",
            format!("expected header {:?}, found {:?}", expected.join(","), found.join(",")),
        ));
    }
    Ok(())
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize, line: &str) -> Result<&'r str> {
    record
        .get(idx)
        .ok_or_else(|| Error::schema(line, format!("missing column {}", idx + 1)))
}

fn parse_date(raw: &str, line: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map_err(|_| Error::schema(line, format!("invalid ISO date {raw:?}")))
}

fn parse_u64(raw: &str, name: &str, line: &str) -> Result<u64> {
    raw.parse::<u64>()
        .map_err(|_| Error::schema(line, format!("invalid {name} {raw:?}")))
}
