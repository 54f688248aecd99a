//! Lock acquisition and release, shared by both languages' semantics.

use thiserror::Error;

use crate::lang::{EvalError, Memory, Mode, ModeState, Var};
use crate::policy::Policy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SemanticsError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("`{0}` is not a declared lock")]
    UnknownLock(Var),
    #[error("release of `{0}`, which this thread does not hold")]
    NotHeld(Var),
    #[error("register r{0} out of range")]
    BadRegister(usize),
    #[error("jump to unknown label L{0}")]
    UnknownLabel(u32),
}

/// Takes `k` if it is free. Returns `false` (and changes nothing) when the
/// lock is held by someone.
pub fn acquire(policy: &Policy, k: &Var, mds: &mut ModeState, mem: &mut Memory) -> Result<bool, SemanticsError> {
    let li = policy.lock_interp(k).ok_or_else(|| SemanticsError::UnknownLock(k.clone()))?;
    let cur = mem.get(k).ok_or_else(|| EvalError::UnknownVar(k.clone()))?;
    if cur != 0 {
        return Ok(false);
    }
    mem.set(k, 1)?;
    for v in &li.no_write {
        mds.get_mut(Mode::AsmNoW).insert(v.clone());
        mds.get_mut(Mode::GuarNoW).remove(v);
    }
    for v in &li.no_read_write {
        mds.get_mut(Mode::AsmNoRW).insert(v.clone());
        mds.get_mut(Mode::GuarNoRW).remove(v);
    }
    Ok(true)
}

/// Gives `k` back. The lock must be set and its assumptions held.
pub fn release(policy: &Policy, k: &Var, mds: &mut ModeState, mem: &mut Memory) -> Result<(), SemanticsError> {
    let li = policy.lock_interp(k).ok_or_else(|| SemanticsError::UnknownLock(k.clone()))?;
    let cur = mem.get(k).ok_or_else(|| EvalError::UnknownVar(k.clone()))?;
    let held = cur != 0
        && li.no_write.is_subset(mds.get(Mode::AsmNoW))
        && li.no_read_write.is_subset(mds.get(Mode::AsmNoRW));
    if !held {
        return Err(SemanticsError::NotHeld(k.clone()));
    }
    mem.set(k, 0)?;
    for v in &li.no_write {
        mds.get_mut(Mode::AsmNoW).remove(v);
        mds.get_mut(Mode::GuarNoW).insert(v.clone());
    }
    for v in &li.no_read_write {
        mds.get_mut(Mode::AsmNoRW).remove(v);
        mds.get_mut(Mode::GuarNoRW).insert(v.clone());
    }
    Ok(())
}
