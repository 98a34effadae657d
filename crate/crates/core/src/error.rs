use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AuditError>;

#[derive(Debug, Error)]
pub enum AuditError {
    /// Invalid configuration: unknown columns, out-of-range settings, missing
    /// inputs required by a selected component.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data failed validation.
    #[error("data validation error: {0}")]
    Data(String),

    /// A numerical routine failed (non-convergence, singular system,
    /// non-finite result).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Wraps an error with the pipeline stage that produced it.
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<AuditError>,
    },
}

impl AuditError {
    pub fn config(msg: impl Into<String>) -> Self {
        AuditError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        AuditError::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        AuditError::Numerical(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AuditError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        AuditError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with stage wrappers removed.
    pub fn root(&self) -> &AuditError {
        match self {
            AuditError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for the CLI: 2 configuration, 3 data validation,
    /// 4 numerical failure, 1 for i/o.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            AuditError::Config(_) => 2,
            AuditError::Data(_) => 3,
            AuditError::Numerical(_) => 4,
            AuditError::Io { .. } => 1,
            AuditError::Stage { .. } => unreachable!("root() strips stage wrappers"),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
