/// Failures split by exit code: bad input is 1, a failed estimation is 2.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Estimation(String),
}

impl AppError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub fn estimation(msg: impl Into<String>) -> Self {
        Self::Estimation(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Estimation(_) => 2,
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        Self::Validation(format!("io: {e}"))
    }
}

pub type AppResult<T> = Result<T, AppError>;

/// Core errors raised while checking inputs count as validation failures.
pub(crate) fn invalid_input(e: panelcf_core::Error) -> AppError {
    AppError::Validation(e.to_string())
}

pub(crate) fn failed(e: panelcf_core::Error) -> AppError {
    AppError::Estimation(e.to_string())
}
