use thiserror::Error;

/// Runner failures, each tied to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing run artifacts: {0}")]
    Artifacts(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("reference failure: {0}")]
    Reference(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Artifacts(_) | CliError::Io(_) => 1,
            CliError::Solver(_) => 2,
            CliError::DegenerateDomain(_) => 3,
            CliError::Reference(_) => 4,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<hjb_pi::Error> for CliError {
    fn from(e: hjb_pi::Error) -> Self {
        use hjb_pi::Error as E;
        match e {
            E::DegenerateDomain(_) | E::InvalidRegion(_) => CliError::DegenerateDomain(e.to_string()),
            E::UndefinedMetric(_) => CliError::Reference(e.to_string()),
            E::UnknownSystem(_) => CliError::Config(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}
