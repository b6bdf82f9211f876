use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration field holds an invalid value.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Input data does not fit the model geometry.
    #[error("input error: {0}")]
    Input(String),

    /// The positional encoding cannot serve the requested token grid.
    #[error(
        "resolution error: learnable positional table was built for a {built_h}x{built_w} grid \
         but the input has a {got_h}x{got_w} grid; interpolate the table (resize) to run at a new resolution"
    )]
    Resolution {
        built_h: usize,
        built_w: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("two evaluations of the same function disagreed (max |diff| = {0:e})")]
    Determinism(f64),

    #[error("checkpoint {path} is corrupt: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
