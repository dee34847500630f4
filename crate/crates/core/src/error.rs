use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("model incompatible with input: {0}")]
    ModelIncompatible(String),
    #[error("numeric failure in {layer}")]
    Numeric { layer: String },
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("training step {step} (seed {seed}) failed: {source}")]
    TrainStep {
        step: usize,
        seed: u64,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }

    pub fn numeric(layer: impl Into<String>) -> Self {
        Error::Numeric { layer: layer.into() }
    }
}
