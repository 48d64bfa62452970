use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),

    #[error("duty cycle is undefined for a trace with no input events")]
    EmptyTrace,

    #[error("{arm}: {source}")]
    Arm {
        arm: String,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "observed rate {rate} Hz at v_e = {v_e} V lies beyond the pre-peak branch \
         (valid up to {limit} Hz); the input rate is ambiguous"
    )]
    SaturationAmbiguity { v_e: f64, rate: f64, limit: f64 },

    #[error("{axis} = {value} outside table range [{min}, {max}]")]
    OutOfRange {
        axis: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("table build failed: {0}")]
    Build(String),

    #[error("parse error in {path}{}: {message}", location.map(|(l, c)| format!(" at line {l}, column {c}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        location: Option<(usize, usize)>,
        message: String,
    },

    #[error("unsupported format version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a detector / arm label to an error.
    pub fn for_arm(self, arm: impl Into<String>) -> Self {
        Error::Arm {
            arm: arm.into(),
            source: Box::new(self),
        }
    }
}
