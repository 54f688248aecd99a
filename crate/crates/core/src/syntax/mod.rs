//! Text formats: While source, assembly, and the per-instruction annotation
//! sidecar.

pub mod annot;
pub mod asm;
pub mod source;

use std::fmt;

/// A diagnostic anchored to a 1-based line and column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl ParseError {
    pub fn new(line: usize, col: usize, msg: impl Into<String>) -> Self {
        ParseError { line, col, msg: msg.into() }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.msg)
    }
}

impl std::error::Error for ParseError {}

pub use annot::{read_annotations, write_annotations};
pub use asm::{emit_asm, parse_asm};
pub use source::{parse_expr, parse_program};
