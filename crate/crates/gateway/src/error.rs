use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Input {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] cordchat_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("server error: {0}")]
    Server(String),
}

impl GatewayError {
    pub fn input(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Input {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 bad configuration or parameters, 3 missing or unreadable input,
    /// 4 corrupt or inconsistent artifacts, 1 anything else.
    pub fn exit_code(&self) -> ExitCode {
        use cordchat_core::Error as E;
        let code = match self {
            Self::Config(_) => 2,
            Self::Core(E::InvalidParameter(_) | E::InvalidInput(_)) => 2,
            Self::Input { .. } => 3,
            Self::Core(E::Io(_)) => 3,
            Self::Core(E::CorruptIndex(_) | E::CorruptArtifact { .. } | E::Consistency(_)) => 4,
            _ => 1,
        };
        ExitCode::from(code)
    }
}
