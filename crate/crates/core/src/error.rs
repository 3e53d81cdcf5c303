use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("region not found: {0}")]
    RegionNotFound(String),
    #[error("ambiguous input: {0}")]
    AmbiguousInput(String),
    #[error("event outside data: {0}")]
    EventOutsideData(String),
    #[error("window too short: {0}")]
    WindowTooShort(String),
    #[error("empty aggregate: every region was excluded")]
    EmptyAggregate,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no events in the analysis window")]
    NoEvents,
    #[error("zero-intensity day {day} with {count} events")]
    ZeroIntensityDay { day: usize, count: u64 },
    #[error("insufficient guard data: need at least 2 days each side of the event")]
    InsufficientGuardData,
    #[error("insufficient samples: two-sample test needs at least 2 values per sample")]
    InsufficientSamples,
    #[error("unstable scan: {failed} of {total} candidate fits did not converge")]
    UnstableScan { failed: usize, total: usize },
    #[error("unknown population for region {0}")]
    UnknownPopulation(String),
    #[error("unusable fit: {0}")]
    UnusableFit(String),
    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            location: location.into(),
            message: message.into(),
        }
    }
}
