use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage a failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Load,
    Extract,
    Phantom,
    Plan,
    Map,
    Simulate,
    Compare,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Extract => "extract",
            Stage::Phantom => "phantom",
            Stage::Plan => "plan",
            Stage::Map => "map",
            Stage::Simulate => "simulate",
            Stage::Compare => "compare",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

/// Coarse classification used for process exit codes and HTTP status mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad parameters or configuration.
    Validation,
    /// File-system or format problems.
    Io,
    /// The computation itself could not proceed (empty skull, unstable grid, ...).
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported NIfTI datatype code {0} (expected int16 or float32)")]
    UnsupportedDatatype(i16),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tilt ({tilt_x}°, {tilt_y}°) exceeds the ±10° bound on each axis")]
    TiltOutOfBounds { tilt_x: f64, tilt_y: f64 },

    #[error("no voxel at or above {threshold} HU; cannot extract a skull")]
    EmptySkull { threshold: f64 },

    #[error("mask is empty")]
    EmptyMask,

    #[error("phantom does not fit inside the grid: {0}")]
    PhantomOutOfGrid(String),

    #[error("point ({x:.3}, {y:.3}, {z:.3}) mm lies outside the volume: {what}")]
    OutsideVolume {
        what: String,
        x: f64,
        y: f64,
        z: f64,
    },

    #[error("unstable configuration: {0}")]
    Unstable(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("element lists do not match: {0}")]
    IndexMismatch(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn outside(what: impl Into<String>, p: &crate::WorldPoint) -> Self {
        Error::OutsideVolume {
            what: what.into(),
            x: p.x,
            y: p.y,
            z: p.z,
        }
    }

    /// Wrap with a stage label; an already labeled error keeps its innermost stage.
    pub fn at(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// The error with any stage label stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self.root() {
            Error::Io { .. } | Error::Format { .. } | Error::UnsupportedDatatype(_) => ErrorClass::Io,
            Error::InvalidParameter(_)
            | Error::TiltOutOfBounds { .. }
            | Error::OutsideVolume { .. }
            | Error::DimensionMismatch(_)
            | Error::IndexMismatch(_) => ErrorClass::Validation,
            Error::EmptySkull { .. }
            | Error::EmptyMask
            | Error::PhantomOutOfGrid(_)
            | Error::Unstable(_)
            | Error::UndefinedCorrelation(_) => ErrorClass::Numerical,
            Error::Stage { .. } => unreachable!("root() strips stage labels"),
        }
    }
}

pub trait ResultExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
