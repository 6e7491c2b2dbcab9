//! Error type shared across the library, with a stable mapping onto the
//! CLI exit-code classes (2 = configuration, 3 = numerical, 4 = I/O or data).

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value, unknown key, or a referenced path that
    /// does not exist at validation time. The message names the offending
    /// field (e.g. `paths.yield`).
    #[error("config error: {0}")]
    Config(String),

    /// A row of an input file could not be parsed.
    #[error("malformed file {path}, line {line}: {msg}")]
    MalformedFile {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    /// Two rows claim the same (country, year) cell.
    #[error("duplicate key in {path}: country {country}, year {year}")]
    DuplicateKey {
        path: PathBuf,
        country: String,
        year: i32,
    },

    /// A climate panel needs at least two years per country to form
    /// year-over-year differences.
    #[error("insufficient years for country {0}: need at least 2")]
    InsufficientYears(String),

    /// The volatility screen removed every country.
    #[error("volatility filter removed all countries")]
    AllCountriesRemoved,

    /// Yield and climate panels share no usable country/year overlap.
    #[error("empty intersection of yield and climate panels: {0}")]
    EmptyIntersection(String),

    /// Parameter vector length (or another shape) does not match the model
    /// variant and country count.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A variance parameter is non-positive or degenerately small.
    #[error("non-positive or degenerate variance: {0}")]
    NonPositiveVariance(f64),

    /// A conditional mean was requested at a cell with a missing regressor.
    #[error("missing regressor for country index {country}, time index {t}")]
    MissingRegressor { country: usize, t: usize },

    /// A weight vector that must be normalized is not.
    #[error("weights are not normalized (sum = {0})")]
    UnnormalizedWeights(f64),

    /// Every particle's likelihood is -inf, so reweighting is impossible.
    #[error("all particle weights are zero after reweighting")]
    AllWeightsZero,

    /// The climate panel lacks the regressors for the forecast target year.
    #[error("no climate regressors for target year {0}")]
    MissingClimateForTarget(i32),

    /// Production aggregation needs a positive last level for each country.
    #[error("missing or non-positive production level for country {0}")]
    MissingLevel(String),

    /// Scenario trajectories end before the requested projection horizon.
    #[error("projection horizon {horizon} exceeds trajectory end {end}")]
    HorizonExceedsTrajectory { horizon: i32, end: i32 },

    /// Evidence records being compared were not computed on the same data.
    #[error("evidence records not comparable: {0}")]
    MismatchedData(String),

    /// Percent-change curves need a non-zero baseline production level.
    #[error("baseline production is zero")]
    ZeroBaseline,

    /// Any other numerical failure (non-finite intermediate, failed
    /// factorization with no fallback, and so on).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Exit-code class used by the CLI: 2 configuration, 3 numerical,
    /// 4 I/O and malformed or inconsistent input data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::DimensionMismatch(_)
            | Error::NonPositiveVariance(_)
            | Error::MissingRegressor { .. }
            | Error::UnnormalizedWeights(_)
            | Error::AllWeightsZero
            | Error::ZeroBaseline
            | Error::Numerical(_) => 3,
            Error::MalformedFile { .. }
            | Error::DuplicateKey { .. }
            | Error::InsufficientYears(_)
            | Error::AllCountriesRemoved
            | Error::EmptyIntersection(_)
            | Error::MissingClimateForTarget(_)
            | Error::MissingLevel(_)
            | Error::HorizonExceedsTrajectory { .. }
            | Error::MismatchedData(_)
            | Error::Io { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
