use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config {field}: {msg}")]
    Config { field: String, msg: String },

    #[error(transparent)]
    Core(#[from] mdmtl::Error),

    /// a verification run (e.g. gradient check) found a failure
    #[error("check failed: {0}")]
    Check(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Config { field: field.into(), msg: msg.into() }
    }

    /// 0 success, 1 validation error, 2 runtime failure.
    pub fn exit_code(&self) -> i32 {
        use mdmtl::Error as E;
        match self {
            CliError::Config { .. } => 1,
            CliError::Core(E::Shape(_) | E::InvalidValue(_) | E::Descriptor(_) | E::Dataset(_) | E::Parse { .. }) => 1,
            CliError::Core(_) | CliError::Check(_) | CliError::Io(_) => 2,
        }
    }
}
