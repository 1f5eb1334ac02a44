use std::fmt;
use std::path::PathBuf;

use compo_core::{Error, ErrorClass};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    /// An upstream artifact is absent; `producer` names the command that
    /// writes it.
    MissingInput { path: PathBuf, producer: &'static str },
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::MissingInput { .. } => EXIT_DATA,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => EXIT_CONFIG,
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => f.write_str(msg),
            CliError::MissingInput { path, producer } => {
                write!(f, "{} not found; it is produced by `compo {producer}`", path.display())
            }
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
