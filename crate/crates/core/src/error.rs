use std::path::PathBuf;

/// Errors produced by the mapping pipeline, the simulator and the file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the map extent")]
    OutOfMap { x: f64, y: f64 },

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("variances must be positive (cell {cell}, point {point})")]
    InvalidVariance { cell: f64, point: f64 },

    #[error("invalid convolution model: {0}")]
    InvalidModel(String),

    #[error("layer has no valid cell to inpaint from")]
    NothingToInpaint,

    #[error("degenerate plane fit: {0}")]
    DegeneratePlane(&'static str),

    #[error("time {time} is outside the trajectory span [{start}, {end}]")]
    OutOfTrajectory { time: f64, start: f64, end: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unknown layer `{name}` (available: {available})")]
    UnknownLayer { name: String, available: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
