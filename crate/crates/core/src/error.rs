use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while validating inputs, reading files or running scenarios.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry '{id}': {reason}")]
    InvalidGeometry { id: String, reason: String },
    #[error("unknown movement label '{0}'")]
    UnknownMovement(String),
    #[error("unknown zone pattern '{0}'")]
    UnknownPattern(String),
    #[error("invalid zone pattern: {0}")]
    InvalidPattern(String),
    #[error("invalid turn ratio for {zone}: {reason}")]
    InvalidTurnRatio { zone: String, reason: String },
    #[error("invalid demand profile: {0}")]
    InvalidProfile(String),
    #[error(
        "cycle of {cycle} s cannot fit four phases of {min_green} s green plus {yellow} s yellow"
    )]
    CycleTooShort {
        cycle: u32,
        yellow: u32,
        min_green: u32,
    },
    #[error("signal program has a gap: {0}")]
    ProgramGap(String),
    #[error("vehicle plans are not sorted by departure (at index {0})")]
    UnsortedPlans(usize),
    #[error("vehicle '{id}' departs at {depart} s, outside the {minutes}-minute horizon")]
    OutOfHorizon {
        id: String,
        depart: u32,
        minutes: u32,
    },
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("invalid trajectory '{id}': {reason}")]
    InvalidTrajectory { id: String, reason: String },
    #[error("zero green time for direction {0}")]
    ZeroGreen(usize),
    #[error("the demand stream is exhausted")]
    EpisodeOver,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error(
        "experiment cell (intersection {intersection}, pattern {pattern}, policy {policy}, cycle {cycle}) failed: {source}"
    )]
    Cell {
        intersection: String,
        pattern: String,
        policy: String,
        cycle: u32,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Xml(#[from] quick_xml::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
