use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] uddl::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("usage: {0}")]
    Usage(String),

    #[error("{0}")]
    Check(String),
}

impl CliError {
    /// 0 success, 1 usage/IO/config, 2 format, 3 shape or consistency,
    /// 4 numeric failure, 5 protocol or sampling.
    pub fn exit_code(&self) -> i32 {
        use uddl::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Format(_) => 2,
                E::Shape(_) | E::Consistency(_) | E::InvalidDictionary(_) => 3,
                E::Numeric(_) => 4,
                E::Sampling { .. } | E::Training { .. } => 5,
                E::Io(_) | E::Input(_) | E::Config(_) | E::Spec(_) => 1,
            },
            CliError::Io(_) | CliError::Usage(_) | CliError::Check(_) => 1,
        }
    }
}

pub(crate) fn format_err(msg: impl Into<String>) -> CliError {
    CliError::Core(uddl::Error::Format(msg.into()))
}
