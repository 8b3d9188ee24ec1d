//! CLI error taxonomy mapped onto process exit codes: usage errors exit 2
//! (bad flags, bad grids, invalid configurations), runtime errors exit 1
//! (I/O, numeric failures). Success exits 0.

#[derive(Debug)]
pub enum CliError {
    /// The invocation itself is wrong; printed with the subcommand usage.
    Usage(String),
    /// The invocation was fine but execution failed.
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl From<calign::Error> for CliError {
    fn from(e: calign::Error) -> Self {
        match e {
            calign::Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(format!("serialization error: {e}"))
    }
}
