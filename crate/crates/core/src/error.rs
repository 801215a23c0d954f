use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("singular degree at vertex {vertex} (degree {degree:e})")]
    SingularDegree { vertex: usize, degree: f64 },
    #[error("matrix is not symmetric (max |M - M^T| = {max_asymmetry:e})")]
    Symmetry { max_asymmetry: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("token id {token} outside vocabulary of size {vocab_size}")]
    Vocabulary { token: usize, vocab_size: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    Length { expected: usize, actual: usize },
    #[error("non-finite feature value at byte offset {offset}")]
    Data { offset: usize },
    #[error("numeric check failed: {0}")]
    Check(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// Process exit codes used by the command-line front end.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const FORMAT: i32 = 4;
    pub const NUMERIC: i32 = 5;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => exit_code::USAGE,
            Error::Io(_) => exit_code::IO,
            Error::Format(_)
            | Error::Length { .. }
            | Error::Data { .. }
            | Error::Vocabulary { .. } => exit_code::FORMAT,
            Error::Shape { .. }
            | Error::EmptyInput(_)
            | Error::Degenerate(_)
            | Error::NonFinite(_)
            | Error::SingularDegree { .. }
            | Error::Symmetry { .. }
            | Error::Check(_)
            | Error::State(_) => exit_code::NUMERIC,
        }
    }
}

/// Attaches the offending path to an I/O error.
pub(crate) fn at_path(path: &std::path::Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}
