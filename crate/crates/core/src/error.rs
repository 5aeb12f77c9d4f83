use thiserror::Error;

/// Errors raised by the analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    #[error("polygon is self-intersecting (edges {0} and {1} cross)")]
    SelfIntersecting(usize, usize),

    #[error("nucleus {0} has an empty rasterized interior")]
    EmptyInterior(usize),

    #[error("nuclei {0} and {1} have overlapping interiors")]
    OverlappingInteriors(usize, usize),

    #[error("nucleus {0} has an empty orbit")]
    EmptyOrbit(usize),

    #[error("mask must contain both foreground and background pixels")]
    UniformMask,

    #[error("no feasible knot pair on the search grid")]
    NoFeasibleKnots,

    #[error("infeasible synthetic layout: {0}")]
    InfeasibleLayout(String),

    #[error("registration diverged at iteration {iteration}: criterion rose from {previous} to {current}")]
    Divergence {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure is numerical rather than a problem with the data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
