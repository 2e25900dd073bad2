use std::fmt;
use std::path::PathBuf;

use skeleton_refine::Error;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// A stage was requested before the checkpoint it builds on exists.
    Dependency { stage: &'static str, missing: PathBuf },
    Core(Error),
}

impl CliError {
    /// 0 success, 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Dependency { .. } => 2,
            CliError::Core(e) => match e {
                Error::Config(_) => 1,
                Error::DegenerateGeometry(_)
                | Error::NumericalOverflow(_)
                | Error::NumericalDegeneracy(_)
                | Error::TrainingDiverged { .. } => 3,
                _ => 2,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Dependency { stage, missing } => write!(
                f,
                "dependency error: stage {stage} has not been trained ({} not found)",
                missing.display()
            ),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}
