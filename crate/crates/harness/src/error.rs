use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no records matched the filter; nothing to report")]
    EmptyReport,

    #[error(transparent)]
    Core(#[from] aiq_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Process exit status, grouped by failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config = 1,
    Data = 2,
    Numerical = 3,
    EmptyReport = 4,
}

impl HarnessError {
    pub fn kind(&self) -> FailureKind {
        use aiq_core::Error as E;
        match self {
            HarnessError::Config(_) => FailureKind::Config,
            HarnessError::Data(_) | HarnessError::Io(_) | HarnessError::Csv(_) => FailureKind::Data,
            HarnessError::Json(_) => FailureKind::Data,
            HarnessError::Numerical(_) => FailureKind::Numerical,
            HarnessError::EmptyReport => FailureKind::EmptyReport,
            HarnessError::Core(e) => match e {
                E::Format(_) | E::Length { .. } | E::Io(_) | E::Json(_) | E::Checkpoint(_) => {
                    FailureKind::Data
                }
                E::NumericalDivergence(_) | E::UndefinedEntropy => FailureKind::Numerical,
                _ => FailureKind::Config,
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind() as i32
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
