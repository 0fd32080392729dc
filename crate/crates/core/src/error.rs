use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("zero marginal on cylinder {sites:?} = {values:?}")]
    Division { sites: Vec<usize>, values: Vec<u8> },
    #[error("stationary law not unique: {0}")]
    NonUnique(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
