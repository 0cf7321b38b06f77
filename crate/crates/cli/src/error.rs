use overica::ErrorKind;

/// Failures surfaced by the CLI, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] overica::Error),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_ASSUMPTION: i32 = 5;
pub const EXIT_SAMPLING: i32 = 6;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Format(_) => EXIT_FORMAT,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Input => EXIT_INPUT,
                ErrorKind::Numerical => EXIT_NUMERICAL,
                ErrorKind::Assumption => EXIT_ASSUMPTION,
                ErrorKind::Sampling => EXIT_SAMPLING,
            },
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}
