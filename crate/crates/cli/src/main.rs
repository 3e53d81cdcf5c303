mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use hawkes_excess::catalog::{
    ingest_cumulative, read_case_table, CaseRecord, CumulativeRow, DailyCountSeries, RegionTable,
    StudyWindow, DEFAULT_POST_DAYS, DEFAULT_PRE_DAYS,
};
use hawkes_excess::duration::{
    estimate_duration, GuardOptions, ScanOptions, Sided, DEFAULT_ALPHA, DEFAULT_DEGREE,
    DEFAULT_GUARD_HALF_WINDOW, DEFAULT_SPAN,
};
use hawkes_excess::impact::{run_events, write_table, ImpactOptions, KappaVariant};
use hawkes_excess::misd::{fit, FitOptions, Normalization, DEFAULT_MAX_ITER, DEFAULT_MAX_LAG, DEFAULT_TOL};
use hawkes_excess::simulator::{
    bin_to_days, generate_study, simulate, synthetic_origin, ProductivityProfile, SimConfig,
    STUDY_BASE_K, STUDY_DECAY, STUDY_EVENT_TIME, STUDY_EXCESS_K, STUDY_HORIZON, STUDY_MU,
    STUDY_POST_K,
};
use hawkes_excess::study::{replicate, StudyOptions};

#[derive(Parser)]
#[command(
    name = "hawkes-excess",
    version,
    about = "Excess productivity and duration of events in daily count series",
    after_help = "Every command also accepts --config <FILE>: a flat `key = value` file whose keys \
                  are the command's long flag names. Flags given on the command line override it."
)]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the 250-catalog study, or one custom catalog with --custom.
    Simulate(SimulateArgs),
    /// Run the simulation study and check it against the acceptance tolerances.
    Replicate(ReplicateArgs),
    /// Turn one region of a cumulative case table into daily counts.
    Ingest(IngestArgs),
    /// Fit the three-period model with fixed event and end days.
    Fit(FitArgs),
    /// Guard test and duration scan around an event day.
    Scan(ScanArgs),
    /// Event impact against the rest of the state.
    Impact(ImpactArgs),
}

#[derive(Args, Clone)]
struct FitFlags {
    /// Longest triggering lag in days.
    #[arg(long, default_value_t = DEFAULT_MAX_LAG)]
    max_lag: usize,
    /// Convergence tolerance on the largest parameter change.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// EM iteration cap.
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Productivity normalization: per-day or per-parent.
    #[arg(long, default_value_t = Normalization::PerDay)]
    normalization: Normalization,
}

impl FitFlags {
    fn options(&self) -> FitOptions {
        FitOptions {
            max_lag: self.max_lag,
            tol: self.tol,
            max_iter: self.max_iter,
            normalization: self.normalization,
        }
    }
}

#[derive(Args, Clone)]
struct ScanFlags {
    #[command(flatten)]
    fit: FitFlags,
    /// Days on each side of the event compared by the guard test.
    #[arg(long, default_value_t = DEFAULT_GUARD_HALF_WINDOW)]
    half_window: usize,
    /// Guard test significance level.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Two-sided guard test instead of after > before.
    #[arg(long)]
    two_sided: bool,
    /// LOESS span (fraction of candidates per local fit).
    #[arg(long, default_value_t = DEFAULT_SPAN)]
    span: f64,
    /// LOESS local polynomial degree (1 or 2).
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    degree: usize,
    /// Fit scan candidates independently (in parallel) instead of warm-starting.
    #[arg(long)]
    cold: bool,
}

impl ScanFlags {
    fn guard(&self) -> GuardOptions {
        GuardOptions {
            half_window: self.half_window,
            alpha: self.alpha,
            sided: if self.two_sided { Sided::TwoSided } else { Sided::Greater },
        }
    }

    fn scan(&self) -> ScanOptions {
        ScanOptions {
            fit: self.fit.options(),
            span: self.span,
            degree: self.degree,
            warm_start: !self.cold,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory for catalog CSVs and manifest.csv.
    #[arg(long)]
    out: PathBuf,
    /// Master seed (study) or catalog seed (--custom).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Simulate one catalog from the parameters below.
    #[arg(long)]
    custom: bool,
    /// Background rate (events/day).
    #[arg(long, default_value_t = STUDY_MU)]
    mu: f64,
    /// Exponential decay rate of the triggering kernel (1/day).
    #[arg(long, default_value_t = STUDY_DECAY)]
    decay: f64,
    /// Productivity up to the event time.
    #[arg(long, default_value_t = STUDY_BASE_K)]
    k_base: f64,
    /// Productivity between the event time and the excess end.
    #[arg(long, default_value_t = STUDY_EXCESS_K)]
    k_excess: f64,
    /// Productivity after the excess end.
    #[arg(long, default_value_t = STUDY_POST_K)]
    k_post: f64,
    /// Event time.
    #[arg(long, default_value_t = STUDY_EVENT_TIME)]
    t_star: f64,
    /// Excess end time; equal to --t-star for no excess.
    #[arg(long, default_value_t = STUDY_EVENT_TIME)]
    t_prime: f64,
    /// Simulation horizon in days.
    #[arg(long, default_value_t = STUDY_HORIZON)]
    horizon: f64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct ReplicateArgs {
    /// Output directory for the summary tables.
    #[arg(long)]
    out: PathBuf,
    /// Master seed of the study.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    scan: ScanFlags,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct IngestArgs {
    /// County case table with header date,county,state,fips,cases,deaths.
    #[arg(long)]
    cases: PathBuf,
    /// Region id (fips, or state:county when the fips is blank).
    #[arg(long)]
    region: String,
    /// Output CSV (date,count).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WindowFlags {
    /// Daily count CSV (date,count).
    #[arg(long)]
    series: PathBuf,
    /// First day of the analysis window (day index).
    #[arg(long, default_value_t = 0)]
    t0: usize,
    /// Event day (day index); the excess starts the day after.
    #[arg(long)]
    t_star: usize,
    /// Last day of the window (default: last day of the series).
    #[arg(long)]
    end: Option<usize>,
}

impl WindowFlags {
    fn load(&self) -> Result<(DailyCountSeries, StudyWindow), CliError> {
        let series = read_series(&self.series)?;
        let end = self.end.unwrap_or(series.last_day());
        let window = StudyWindow::new(self.t0, self.t_star, end)?;
        window.check_within(series.len())?;
        Ok((series, window))
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    window: WindowFlags,
    /// Last day of the excess period (day index); omit for a single level.
    #[arg(long)]
    t_prime: Option<usize>,
    #[command(flatten)]
    fit: FitFlags,
    /// Output JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    window: WindowFlags,
    #[command(flatten)]
    scan: ScanFlags,
    /// Output CSV (duration,k_star,smoothed,converged).
    #[arg(long)]
    out: PathBuf,
    /// Output JSON summary (chosen duration and guard test).
    #[arg(long)]
    summary: PathBuf,
}

#[derive(Args)]
struct ImpactArgs {
    /// County case table with header date,county,state,fips,cases,deaths.
    #[arg(long)]
    cases: PathBuf,
    /// Population table with header fips,population.
    #[arg(long)]
    populations: PathBuf,
    /// Event list with header fips,date; every listed county is left out of
    /// its state's reference series.
    #[arg(long, conflicts_with_all = ["region", "date"])]
    events: Option<PathBuf>,
    /// Single event region (used with --date).
    #[arg(long, requires = "date")]
    region: Option<String>,
    /// Single event date, YYYY-MM-DD (used with --region).
    #[arg(long, requires = "region")]
    date: Option<NaiveDate>,
    /// Days before the event in the analysis window.
    #[arg(long, default_value_t = DEFAULT_PRE_DAYS)]
    pre_days: usize,
    /// Days after the event in the analysis window.
    #[arg(long, default_value_t = DEFAULT_POST_DAYS)]
    post_days: usize,
    /// κ definition: as-printed (k* - k) or excess-only (k*).
    #[arg(long, default_value_t = KappaVariant::AsPrinted)]
    kappa_variant: KappaVariant,
    #[command(flatten)]
    scan: ScanFlags,
    /// Output directory for the per-event JSON reports and impact_table.csv.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(hawkes_excess::Error),
    Acceptance(String),
}

impl From<hawkes_excess::Error> for CliError {
    fn from(e: hawkes_excess::Error) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Acceptance(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Replicate(a) => cmd_replicate(&a),
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Scan(a) => cmd_scan(&a),
        Command::Impact(a) => cmd_impact(&a),
    }
}

fn set_threads(n: usize) -> Result<(), CliError> {
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set thread count: {e}")))?;
    }
    Ok(())
}

/// Writes `path` through a temporary file in the same directory.
fn write_atomic<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> hawkes_excess::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| CliError::from(e.error))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

fn read_series(path: &Path) -> Result<DailyCountSeries, CliError> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DailyCountSeries::read_csv(BufReader::new(File::open(path)?), id)?)
}

fn read_cases(path: &Path) -> Result<Vec<CaseRecord>, CliError> {
    Ok(read_case_table(BufReader::new(File::open(path)?))?)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    set_threads(a.threads)?;
    fs::create_dir_all(&a.out)?;
    let mut manifest = String::from("catalog_id,scenario,duration,seed\n");
    if a.custom {
        let config = SimConfig {
            mu: a.mu,
            decay_rate: a.decay,
            profile: ProductivityProfile {
                base: a.k_base,
                excess: a.k_excess,
                post: a.k_post,
                t_star: a.t_star,
                t_prime: a.t_prime,
            },
            horizon: a.horizon,
            seed: a.seed,
        };
        let sim = simulate(&config)?;
        if sim.truncated {
            eprintln!("warning: point cap reached, catalog is incomplete");
        }
        let counts = bin_to_days(&sim.events, a.horizon.ceil() as usize);
        let series = DailyCountSeries::new("catalog_000", synthetic_origin(), counts)?;
        write_atomic(&a.out.join("catalog_000.csv"), |w| series.write_csv(w))?;
        let duration = (a.t_prime - a.t_star).max(0.0);
        manifest.push_str(&format!("0,custom,{duration},{}\n", a.seed));
    } else {
        for c in generate_study(a.seed) {
            let name = format!("catalog_{:03}.csv", c.id);
            write_atomic(&a.out.join(name), |w| c.series.write_csv(w))?;
            manifest.push_str(&format!(
                "{},{},{},{}\n",
                c.id,
                c.scenario(),
                c.duration,
                c.config.seed
            ));
        }
    }
    write_text(&a.out.join("manifest.csv"), &manifest)
}

fn cmd_replicate(a: &ReplicateArgs) -> Result<(), CliError> {
    set_threads(a.threads)?;
    fs::create_dir_all(&a.out)?;
    let options = StudyOptions {
        guard: a.scan.guard(),
        scan: a.scan.scan(),
    };
    let report = replicate(a.seed, &options)?;
    write_atomic(&a.out.join("duration_errors.csv"), |w| report.write_duration_table(w))?;
    write_atomic(&a.out.join("productivity_ratios.csv"), |w| report.write_ratio_table(w))?;
    write_atomic(&a.out.join("checks.csv"), |w| report.write_checks(w))?;
    write_atomic(&a.out.join("outcomes.csv"), |w| report.write_outcomes(w))?;
    println!("false positives (duration 0): {}", report.false_positives);
    for (d, missed) in &report.missed_detections {
        println!("missed detections (duration {d}): {missed}");
    }
    for c in &report.checks {
        println!(
            "{} {} = {} (allowed {}..={})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.lower,
            c.upper
        );
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("  {}: {} outside [{}, {}]", c.name, c.value, c.lower, c.upper))
            .collect();
        Err(CliError::Acceptance(format!(
            "acceptance failure:\n{}",
            failed.join("\n")
        )))
    }
}

fn cmd_ingest(a: &IngestArgs) -> Result<(), CliError> {
    let rows: Vec<CumulativeRow> = read_cases(&a.cases)?.iter().map(|r| r.to_cumulative()).collect();
    let series = ingest_cumulative(&rows, &a.region)?;
    write_atomic(&a.out, |w| series.write_csv(w))
}

fn cmd_fit(a: &FitArgs) -> Result<(), CliError> {
    let (series, window) = a.window.load()?;
    let window = match a.t_prime {
        Some(tp) => window.with_t_prime(tp)?,
        None => window,
    };
    let result = fit(&series, window, &a.fit.options())?;
    write_text(&a.out, &result.to_json_pretty()?)
}

fn cmd_scan(a: &ScanArgs) -> Result<(), CliError> {
    let (series, window) = a.window.load()?;
    let estimate = estimate_duration(&series, &window, &a.scan.guard(), &a.scan.scan())?;
    write_atomic(&a.out, |w| estimate.scan.write_csv(w))?;
    let summary = serde_json::json!({
        "chosen_duration": estimate.scan.chosen_duration,
        "chosen_t_prime": estimate.scan.chosen_t_prime,
        "t_star": estimate.scan.t_star,
        "p_value": estimate.guard.p_value,
        "guard": estimate.guard,
    });
    let mut text = serde_json::to_string_pretty(&summary).map_err(hawkes_excess::Error::from)?;
    text.push('\n');
    write_text(&a.summary, &text)
}

fn read_events(path: &Path) -> Result<Vec<(String, NaiveDate)>, CliError> {
    let schema = |line: usize, msg: String| {
        CliError::Data(hawkes_excess::Error::schema(
            format!("{} line {line}", path.display()),
            msg,
        ))
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(File::open(path)?));
    let headers = reader.headers().map_err(|e| schema(1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["fips", "date"] {
        return Err(schema(1, "expected header fips,date".into()));
    }
    let mut events = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| schema(line, e.to_string()))?;
        let date = record[1]
            .parse::<NaiveDate>()
            .map_err(|e| schema(line, format!("bad date {:?}: {e}", &record[1])))?;
        events.push((record[0].to_string(), date));
    }
    Ok(events)
}

fn cmd_impact(a: &ImpactArgs) -> Result<(), CliError> {
    set_threads(a.threads)?;
    let events = match (&a.events, &a.region, a.date) {
        (Some(path), _, _) => read_events(path)?,
        (None, Some(region), Some(date)) => vec![(region.clone(), date)],
        _ => return Err(CliError::Usage("give --events, or --region with --date".into())),
    };
    let records = read_cases(&a.cases)?;
    let populations = RegionTable::read_csv(BufReader::new(File::open(&a.populations)?))?;

    let options = ImpactOptions {
        pre_days: a.pre_days,
        post_days: a.post_days,
        guard: a.scan.guard(),
        scan: a.scan.scan(),
        kappa_variant: a.kappa_variant,
    };
    let reports = run_events(&records, &populations, &events, &options)?;

    fs::create_dir_all(&a.out)?;
    for r in &reports {
        let name = format!("impact_{}_{}.json", file_safe(&r.region_id), r.event_date);
        write_text(&a.out.join(name), &r.to_json_pretty()?)?;
    }
    write_atomic(&a.out.join("impact_table.csv"), |w| write_table(&reports, w))
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}
