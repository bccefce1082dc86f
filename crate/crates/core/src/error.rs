use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invalid scenario: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("position ({x}, {y}) is outside the grid")]
    OutOfBounds { x: f64, y: f64 },

    #[error("patch centered at ({x}, {y}) does not intersect the grid")]
    PatchOutsideGrid { x: f64, y: f64 },

    #[error("command (v={v}, omega={omega}) violates kinematic limits: {reason}")]
    CommandOutOfLimits { v: f64, omega: f64, reason: String },

    #[error("sample carries no {0} channel")]
    MissingChannel(&'static str),

    #[error("empty force list")]
    EmptyForces,

    #[error("unknown terrain label `{0}`")]
    UnknownLabel(String),

    #[error("waypoint graph: {0}")]
    Graph(String),

    #[error("vlm backend: {0}")]
    Backend(String),

    #[error("png encoding: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
