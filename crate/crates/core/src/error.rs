use thiserror::Error;

use crate::geometry::Frame;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("frame mismatch: expected {expected:?}, got {actual:?}")]
    FrameMismatch { expected: Frame, actual: Frame },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("segmentation failed: {reason} ({clusters} clusters, extents {extents:?})")]
    Segmentation {
        reason: String,
        clusters: usize,
        /// Estimated (width, height) of each candidate cluster, meters.
        extents: Vec<(f64, f64)>,
    },

    #[error("rank deficient input: {0}")]
    Rank(String),

    #[error("gaussian fit failed: {0}")]
    Fit(String),

    #[error("key beam selection failed: {0}")]
    Selection(String),

    #[error("no PD beam detected: {0}")]
    DetectionMiss(String),

    #[error("azimuth/center model failed: {0}")]
    Model(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("{path}:{line}: field `{field}`: {message}")]
    Parse {
        path: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
