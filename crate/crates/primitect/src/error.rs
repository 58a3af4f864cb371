use std::path::PathBuf;

/// Everything the command line can fail with. Each variant maps to its own
/// process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("cannot read {path}: {msg}")]
    Input { path: PathBuf, msg: String },
    #[error("malformed config {path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("no buildings found in {0}")]
    NoBuildings(PathBuf),
    #[error("{0} unit(s) did not converge")]
    NotConverged(usize),
    #[error("missing stage output {path}; run the `{stage}` stage first")]
    MissingStage { path: PathBuf, stage: &'static str },
    #[error("{path} was written under a different config; rerun the `{stage}` stage")]
    Stale { path: PathBuf, stage: &'static str },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] primitect_core::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input { .. } => 3,
            Failure::Config { .. } => 4,
            Failure::NoBuildings(_) => 5,
            Failure::NotConverged(_) => 6,
            Failure::MissingStage { .. } => 7,
            Failure::Stale { .. } => 8,
            Failure::Write { .. } | Failure::Format(_) | Failure::Core(_) => 1,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Failure::Format(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Failure>;
