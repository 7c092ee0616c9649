use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DimensionError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("body index {index} out of range for a chain with {links} links")]
    BodyIndex { index: usize, links: usize },
}
