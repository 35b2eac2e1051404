use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error(transparent)]
    Numeric(#[from] styledyn::Error),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// 2 for configuration problems, 3 for numeric or invariant failures,
    /// 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numeric(_) | CliError::Invariant(_) | CliError::Plot(_) => 3,
            CliError::Io { .. } => 1,
        }
    }
}
