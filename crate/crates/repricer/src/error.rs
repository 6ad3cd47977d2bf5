//! Crate-wide error type.
//!
//! Library entry points return [`Result`]; binaries attach context with
//! `anyhow` at the call site. Variants are grouped by the module that raises
//! them, but all of them funnel into the single [`Error`] enum so callers can
//! match once.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes the library reports.
#[derive(Debug, Error)]
pub enum Error {
    /// A feature that needs at least one competitor was requested while the
    /// market snapshot had none (e.g. the gap-to-cheapest regressor).
    #[error("feature `{0}` is undefined for a market with no competitors")]
    EmptyMarketFeature(String),

    /// A user-defined feature referenced an extra offer column the snapshot
    /// does not carry.
    #[error("market snapshot has no extra column `{0}`")]
    MissingExtraColumn(String),

    /// Coefficient vector length does not match the enabled feature list.
    #[error("coefficient count {got} does not match feature count {want}")]
    CoefficientMismatch { got: usize, want: usize },

    /// An action set (price grid) was empty where a price decision is needed.
    #[error("action set is empty")]
    EmptyActionSet,

    /// A price was requested at or beyond the end of the sales horizon.
    #[error("horizon exhausted: t={t} with {horizon} periods")]
    HorizonExhausted { t: f64, horizon: usize },

    /// A price, rate, or count parameter was outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A competitor trajectory was too short or misaligned for the requested
    /// evaluation horizon.
    #[error("trajectory has {got} steps but the horizon needs {want}")]
    TrajectoryTooShort { got: usize, want: usize },

    /// Flat key-value config could not be parsed.
    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    /// Config contained a key the target schema does not define.
    #[error("unknown config key `{key}` in section `{section}`")]
    UnknownConfigKey { section: String, key: String },

    /// Config was missing a required section.
    #[error("missing config section `[{0}]`")]
    MissingConfigSection(String),

    /// Config was missing a required key.
    #[error("missing config key `{key}` in section `{section}`")]
    MissingConfigKey { section: String, key: String },

    /// A CSV file could not be parsed.
    #[error("csv parse error in {path} at line {line}: {msg}")]
    CsvParse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Calibration input was unusable (empty, degenerate, or inconsistent).
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Newton/IRLS iteration failed to make progress.
    #[error("fit did not converge: {0}")]
    FitDiverged(String),

    /// Underlying I/O failure.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
