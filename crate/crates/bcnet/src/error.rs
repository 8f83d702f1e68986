use thiserror::Error;

/// Error type shared across the crate.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("numeric error in {op}: {msg}")]
    Numeric { op: &'static str, msg: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("scene generation failed: no placement hit overlap range [{lo}, {hi}] after {attempts} attempts")]
    Generation { lo: f32, hi: f32, attempts: usize },
    #[error("balance sampling: need {needed} {kind} samples, pool has {available}")]
    SamplingDeficit {
        kind: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },
    #[error("training diverged: NaN loss at iteration {iter}, last finite loss {last_loss}")]
    NanLoss { iter: usize, last_loss: f32 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
