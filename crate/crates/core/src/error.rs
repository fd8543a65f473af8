use thiserror::Error;

/// Error taxonomy shared by every module in the crate.
#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("value {value} out of range for {what}")]
    Range { what: &'static str, value: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index out of bounds: {what} = {index}, limit {limit}")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("unknown {what}: {key}")]
    Lookup { what: &'static str, key: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
