use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter `{name}` out of range: {detail}")]
    Parameter { name: &'static str, detail: String },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("estimation error: {0}")]
    Estimation(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, detail: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            detail: detail.into(),
        }
    }
}
