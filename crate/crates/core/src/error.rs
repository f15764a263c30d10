use thiserror::Error;

use crate::geometry::Frame;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("line lies at infinity (zero direction)")]
    LineAtInfinity,

    #[error("expected a line in the {expected:?} frame, got {actual:?}")]
    FrameMismatch { expected: Frame, actual: Frame },

    #[error("degenerate triangulation: back-projection planes are nearly parallel (sin = {sine:.3e})")]
    DegenerateTriangulation { sine: f64 },

    #[error("degenerate vanishing point hypothesis: segments are collinear")]
    DegenerateHypothesis,

    #[error("vanishing point fit is ill-conditioned")]
    IllConditioned,

    #[error("need at least {required} segments, got {got}")]
    TooFewSegments { required: usize, got: usize },

    #[error("re-projected line is at infinity (l_d = {l_d:.3e})")]
    DegenerateLine { l_d: f64 },

    #[error("projected vanishing point is at infinity (v3 = {v3:.3e})")]
    VpAtInfinity { v3: f64 },

    #[error("track {track} has {observations} observation(s) in the window, need at least 2")]
    TrackTooShort { track: u64, observations: usize },

    #[error("inconsistent ids: {0}")]
    InconsistentIds(String),

    #[error("normal equations are singular in variables {variables:?}")]
    SingularNormalEquations { variables: Vec<String> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset schema version {found} is not supported (expected {expected})")]
    VersionError { found: u32, expected: u32 },

    #[error("malformed dataset: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
