//! A lock-aware compiler from a small While language to a RISC-style
//! assembly, together with dynamic checkers for the obligations under which
//! compilation preserves value-dependent noninterference.

pub mod checkers;
pub mod compiler;
pub mod fixtures;
pub mod gen;
pub mod lang;
pub mod locking;
pub mod policy;
pub mod risc;
pub mod sim;
pub mod while_lang;
pub mod syntax;
