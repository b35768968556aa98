//! Process exit codes and the JSON error report.

use kinklab_core::Error;
use serde::Serialize;

pub const OK: i32 = 0;
pub const RUNTIME: i32 = 1;
pub const INVALID_ARGUMENT: i32 = 2;
/// The odd-sector spectral conditions fail.
pub const SPECTRAL_CONDITION: i32 = 3;
/// The resonance coupling integral vanishes.
pub const FGR_CONDITION: i32 = 4;
/// The potential is not an admissible double well.
pub const DEGENERATE_POTENTIAL: i32 = 5;
/// A computed result contradicts a structural check.
pub const CHECK_FAILED: i32 = 6;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Check(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => CHECK_FAILED,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) | Error::Parse(_) => INVALID_ARGUMENT,
                Error::SpectralCondition(_) => SPECTRAL_CONDITION,
                Error::FgrDegenerate(_) => FGR_CONDITION,
                Error::DegeneratePotential(_) => DEGENERATE_POTENTIAL,
                _ => RUNTIME,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Check(_) => "check_failed",
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) => "invalid_argument",
                Error::Parse(_) => "parse",
                Error::SpectralCondition(_) => "spectral_condition",
                Error::FgrDegenerate(_) => "fgr_condition",
                Error::DegeneratePotential(_) => "degenerate_potential",
                Error::Window(_) => "window",
                Error::NearSingular(_) => "near_singular",
                Error::Blowup { .. } => "blowup",
                Error::Io(_) => "io",
                Error::Csv(_) => "csv",
                Error::Json(_) => "json",
            },
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() }
    }
}
