use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: dtype mismatch ({lhs} vs {rhs})")]
    Dtype {
        op: &'static str,
        lhs: crate::tensor::Dtype,
        rhs: crate::tensor::Dtype,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{}: line {line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Non-finite loss or parameters during training.
    #[error("numerical failure at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    /// A named sub-run of a larger experiment failed.
    #[error("{name}: {source}")]
    Experiment { name: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn in_experiment(self, name: &str) -> Self {
        Error::Experiment {
            name: name.into(),
            source: Box::new(self),
        }
    }

    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Divergence { .. } => true,
            Error::Experiment { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
