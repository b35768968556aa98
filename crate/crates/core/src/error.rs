use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate potential: {0}")]
    DegeneratePotential(String),
    /// The odd-sector spectrum does not consist of exactly one eigenvalue below the edge.
    #[error("spectral condition violated: {0}")]
    SpectralCondition(String),
    /// The resonance coupling integral vanishes to tolerance.
    #[error("FGR condition violated: {0}")]
    FgrDegenerate(String),
    #[error("window error: {0}")]
    Window(String),
    #[error("near-singular solve: {0}")]
    NearSingular(String),
    #[error("blowup at t = {time}: {reason}")]
    Blowup { time: f64, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
