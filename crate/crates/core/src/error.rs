use latent_ckks::CkksError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ckks(#[from] CkksError),

    /// Tensor or graph shapes do not fit together.
    #[error("shape error: {0}")]
    Shape(String),

    /// A layer needs more levels than remain; carries the layer name.
    #[error("depth error at layer {layer:?}: {source}")]
    Depth {
        layer: String,
        #[source]
        source: CkksError,
    },

    /// The planner cannot place a unit within the usable levels.
    #[error("planning error: {0}")]
    Plan(String),

    #[error("weight bundle error: {0}")]
    Bundle(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps a scheme error raised while executing `layer`, keeping depth
    /// failures distinguishable from other scheme errors.
    pub fn at_layer(layer: &str, e: Error) -> Error {
        match e {
            Error::Ckks(c @ CkksError::Depth { .. }) => Error::Depth {
                layer: layer.to_string(),
                source: c,
            },
            other => other,
        }
    }

    /// Process exit code: 2 validation, 3 depth or planning, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Depth { .. } | Error::Plan(_) | Error::Ckks(CkksError::Depth { .. }) => 3,
            Error::Io(_) | Error::Ckks(CkksError::Io(_)) => 4,
            _ => 2,
        }
    }
}
