//! Bundled example programs and policies.

use crate::policy::Policy;
use crate::risc::Program;
use crate::syntax::{parse_asm, parse_program};
use crate::while_lang::Cmd;

pub const WORKER_POLICY: &str = include_str!("../fixtures/worker.toml");
pub const WORKER: &str = include_str!("../fixtures/worker.w");
pub const WORKER_UNLOCKED_FLAG: &str = include_str!("../fixtures/worker_unlocked_flag.w");
pub const TOGGLER: &str = include_str!("../fixtures/toggler.w");
pub const TYPIST: &str = include_str!("../fixtures/typist.w");
pub const SUSPENDER: &str = include_str!("../fixtures/suspender.w");
pub const LEAKY_WORKER: &str = include_str!("../fixtures/leaky_worker.w");
pub const WORKER_ENV: &str = include_str!("../fixtures/worker.env");

pub const RACY_WRITE: &str = include_str!("../fixtures/racy_write.w");
pub const RACY_READ: &str = include_str!("../fixtures/racy_read.w");
pub const RACY_BRANCH: &str = include_str!("../fixtures/racy_branch.w");

pub const KERNEL_POLICY: &str = include_str!("../fixtures/kernel.toml");
pub const KERNEL: &str = include_str!("../fixtures/kernel.w");
pub const LEAKY_KERNEL: &str = include_str!("../fixtures/leaky_kernel.w");

pub const SECRET_BRANCH_POLICY: &str = include_str!("../fixtures/secret_branch.toml");
pub const SECRET_BRANCH_ABS: &str = include_str!("../fixtures/secret_branch_abs.w");
pub const SECRET_BRANCH_PADDED: &str = include_str!("../fixtures/secret_branch_padded.s");
pub const SECRET_BRANCH_UNPADDED: &str = include_str!("../fixtures/secret_branch_unpadded.s");
pub const LEAKY_ASM: &str = include_str!("../fixtures/leaky.s");

pub const CDDC_POLICY: &str = include_str!("../fixtures/cddc.toml");
pub const CDDC_INPUT: &str = include_str!("../fixtures/cddc_input.w");
pub const CDDC_COMPOSITOR: &str = include_str!("../fixtures/cddc_compositor.w");

/// Parses a bundled policy. Panics on a malformed fixture.
pub fn policy(text: &str) -> Policy {
    Policy::from_toml_str(text).expect("bundled policy parses")
}

/// Parses a bundled source program. Panics on a malformed fixture.
pub fn program(text: &str) -> Cmd {
    parse_program(text).expect("bundled program parses")
}

/// Parses a bundled assembly program. Panics on a malformed fixture.
pub fn asm(text: &str) -> Program {
    parse_asm(text).expect("bundled assembly parses")
}
