//! The source language: a While language with lock primitives and a
//! deterministic small-step semantics.

use std::fmt;
use std::sync::Arc;

use crate::lang::{truthy, Expr, Memory, ModeState, Var};
use crate::locking::{self, SemanticsError};
use crate::policy::Policy;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cmd {
    Skip,
    Assign(Var, Expr),
    Seq(Arc<Cmd>, Arc<Cmd>),
    If(Expr, Arc<Cmd>, Arc<Cmd>),
    While(Expr, Arc<Cmd>),
    LockAcq(Var),
    LockRel(Var),
    /// Only produced by evaluation.
    Stop,
}

impl Cmd {
    pub fn assign(v: &str, e: Expr) -> Cmd {
        Cmd::Assign(Var::new(v), e)
    }

    pub fn seq(a: Cmd, b: Cmd) -> Cmd {
        Cmd::Seq(Arc::new(a), Arc::new(b))
    }

    pub fn if_(e: Expr, a: Cmd, b: Cmd) -> Cmd {
        Cmd::If(e, Arc::new(a), Arc::new(b))
    }

    pub fn while_(e: Expr, body: Cmd) -> Cmd {
        Cmd::While(e, Arc::new(body))
    }

    pub fn acquire(k: &str) -> Cmd {
        Cmd::LockAcq(Var::new(k))
    }

    pub fn release(k: &str) -> Cmd {
        Cmd::LockRel(Var::new(k))
    }

    /// Right-nested sequence. `None` for an empty list.
    pub fn seq_all(cmds: impl IntoIterator<Item = Cmd>) -> Option<Cmd> {
        let mut cmds: Vec<Cmd> = cmds.into_iter().collect();
        let mut acc = cmds.pop()?;
        while let Some(c) = cmds.pop() {
            acc = Cmd::seq(c, acc);
        }
        Some(acc)
    }

    pub fn leftmost(&self) -> &Cmd {
        match self {
            Cmd::Seq(a, _) => a.leftmost(),
            c => c,
        }
    }

    pub fn contains_stop(&self) -> bool {
        match self {
            Cmd::Stop => true,
            Cmd::Seq(a, b) | Cmd::If(_, a, b) => a.contains_stop() || b.contains_stop(),
            Cmd::While(_, b) => b.contains_stop(),
            _ => false,
        }
    }

    /// Every expression the command may evaluate, in program order.
    pub fn exprs(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        self.collect_exprs(&mut out);
        out
    }

    fn collect_exprs<'a>(&'a self, out: &mut Vec<&'a Expr>) {
        match self {
            Cmd::Assign(_, e) => out.push(e),
            Cmd::Seq(a, b) => {
                a.collect_exprs(out);
                b.collect_exprs(out);
            }
            Cmd::If(e, a, b) => {
                out.push(e);
                a.collect_exprs(out);
                b.collect_exprs(out);
            }
            Cmd::While(e, b) => {
                out.push(e);
                b.collect_exprs(out);
            }
            _ => {}
        }
    }

    /// Number of statements, counting compound statements once each.
    pub fn size(&self) -> usize {
        match self {
            Cmd::Seq(a, b) => a.size() + b.size(),
            Cmd::If(_, a, b) => 1 + a.size() + b.size(),
            Cmd::While(_, b) => 1 + b.size(),
            _ => 1,
        }
    }

    fn write_source(&self, f: &mut fmt::Formatter<'_>, indent: usize) -> fmt::Result {
        let pad = "    ".repeat(indent);
        match self {
            Cmd::Skip => writeln!(f, "{pad}skip;"),
            Cmd::Stop => writeln!(f, "{pad}stop;"),
            Cmd::Assign(v, e) => writeln!(f, "{pad}{v} := {e};"),
            Cmd::LockAcq(k) => writeln!(f, "{pad}acquire {k};"),
            Cmd::LockRel(k) => writeln!(f, "{pad}release {k};"),
            Cmd::Seq(a, b) => {
                a.write_source(f, indent)?;
                b.write_source(f, indent)
            }
            Cmd::If(e, a, b) => {
                writeln!(f, "{pad}if {e} {{")?;
                a.write_source(f, indent + 1)?;
                writeln!(f, "{pad}}} else {{")?;
                b.write_source(f, indent + 1)?;
                writeln!(f, "{pad}}}")
            }
            Cmd::While(e, b) => {
                writeln!(f, "{pad}while {e} {{")?;
                b.write_source(f, indent + 1)?;
                writeln!(f, "{pad}}}")
            }
        }
    }
}

/// Prints in the concrete source syntax (with `stop;` for the evaluation-only
/// command).
impl fmt::Display for Cmd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_source(f, 0)
    }
}

impl fmt::Debug for Cmd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cmd::Skip => write!(f, "Skip"),
            Cmd::Stop => write!(f, "Stop"),
            Cmd::Assign(v, e) => write!(f, "Assign({v}, {e})"),
            Cmd::LockAcq(k) => write!(f, "LockAcq({k})"),
            Cmd::LockRel(k) => write!(f, "LockRel({k})"),
            Cmd::Seq(a, b) => write!(f, "Seq({a:?}, {b:?})"),
            Cmd::If(e, a, b) => write!(f, "If({e}, {a:?}, {b:?})"),
            Cmd::While(e, b) => write!(f, "While({e}, {b:?})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Progressed,
    /// Waiting on a held lock; nothing changed.
    Blocked,
    /// Already finished; nothing changed.
    Stopped,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WhileConfig {
    pub cmd: Cmd,
    pub mds: ModeState,
    pub mem: Memory,
}

impl WhileConfig {
    pub fn new(cmd: Cmd, mds: ModeState, mem: Memory) -> Self {
        WhileConfig { cmd, mds, mem }
    }

    pub fn stops(&self) -> bool {
        self.cmd == Cmd::Stop
    }

    pub fn step(&mut self, policy: &Policy) -> Result<Outcome, SemanticsError> {
        if self.stops() {
            return Ok(Outcome::Stopped);
        }
        match step_cmd(&self.cmd, &mut self.mds, &mut self.mem, policy)? {
            Some(next) => {
                self.cmd = next;
                Ok(Outcome::Progressed)
            }
            None => Ok(Outcome::Blocked),
        }
    }

    /// Takes up to `n` steps, stopping early on a block or at the end.
    /// Returns the number actually taken.
    pub fn step_n(&mut self, policy: &Policy, n: usize) -> Result<usize, SemanticsError> {
        for i in 0..n {
            if self.step(policy)? != Outcome::Progressed {
                return Ok(i);
            }
        }
        Ok(n)
    }
}

/// `None` means blocked. Memory and modes are only touched on progress.
fn step_cmd(c: &Cmd, mds: &mut ModeState, mem: &mut Memory, policy: &Policy) -> Result<Option<Cmd>, SemanticsError> {
    Ok(Some(match c {
        Cmd::Stop => return Ok(Some(Cmd::Stop)),
        Cmd::Skip => Cmd::Stop,
        Cmd::Assign(v, e) => {
            let val = e.eval(mem)?;
            mem.set(v, val)?;
            Cmd::Stop
        }
        Cmd::Seq(a, b) => {
            if **a == Cmd::Stop {
                return Ok(Some((**b).clone()));
            }
            match step_cmd(a, mds, mem, policy)? {
                None => return Ok(None),
                Some(Cmd::Stop) => (**b).clone(),
                Some(a2) => Cmd::Seq(Arc::new(a2), b.clone()),
            }
        }
        Cmd::If(e, a, b) => {
            if truthy(e.eval(mem)?) {
                (**a).clone()
            } else {
                (**b).clone()
            }
        }
        Cmd::While(e, body) => Cmd::If(
            e.clone(),
            Arc::new(Cmd::Seq(body.clone(), Arc::new(c.clone()))),
            Arc::new(Cmd::Stop),
        ),
        Cmd::LockAcq(k) => {
            if !locking::acquire(policy, k, mds, mem)? {
                return Ok(None);
            }
            Cmd::Stop
        }
        Cmd::LockRel(k) => {
            locking::release(policy, k, mds, mem)?;
            Cmd::Stop
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{BinOp, Mode, Value};
    use crate::policy::Policy;

    fn policy() -> Policy {
        Policy::from_toml_str(
            r#"
            [vars]
            universe = ["x", "y"]
            [locks.k]
            no_write = ["x"]
            "#,
        )
        .unwrap()
    }

    fn cfg(cmd: Cmd, p: &Policy) -> WhileConfig {
        WhileConfig::new(cmd, p.initial_mds(), p.zero_memory())
    }

    fn get(c: &WhileConfig, v: &str) -> Value {
        c.mem.get(&Var::new(v)).unwrap()
    }

    #[test]
    fn assign_is_one_atomic_step() {
        let p = policy();
        let mut c = cfg(Cmd::assign("x", Expr::bin(BinOp::Add, Expr::Const(1), Expr::Const(1))), &p);
        assert_eq!(c.step(&p).unwrap(), Outcome::Progressed);
        assert!(c.stops());
        assert_eq!(get(&c, "x"), 2);
        assert_eq!(c.step(&p).unwrap(), Outcome::Stopped);
    }

    #[test]
    fn while_unfolds_to_if() {
        let p = policy();
        let w = Cmd::while_(Expr::var("x"), Cmd::Skip);
        let mut c = cfg(w.clone(), &p);
        c.step(&p).unwrap();
        let expect = Cmd::if_(Expr::var("x"), Cmd::seq(Cmd::Skip, w), Cmd::Stop);
        assert_eq!(c.cmd, expect);
        assert_eq!(c.mem, p.zero_memory());
    }

    #[test]
    fn seq_folds_stop_in_the_same_step() {
        let p = policy();
        let mut c = cfg(Cmd::seq(Cmd::Skip, Cmd::assign("y", Expr::Const(3))), &p);
        c.step(&p).unwrap();
        assert_eq!(c.cmd, Cmd::assign("y", Expr::Const(3)));
        c.step(&p).unwrap();
        assert!(c.stops());
    }

    #[test]
    fn if_takes_then_on_nonzero() {
        let p = policy();
        let prog = Cmd::if_(Expr::var("x"), Cmd::assign("y", Expr::Const(1)), Cmd::assign("y", Expr::Const(2)));
        let mut c = cfg(prog.clone(), &p);
        c.mem.set(&Var::new("x"), -4).unwrap();
        c.step_n(&p, 2).unwrap();
        assert_eq!(get(&c, "y"), 1);
        let mut c = cfg(prog, &p);
        c.step_n(&p, 2).unwrap();
        assert_eq!(get(&c, "y"), 2);
    }

    #[test]
    fn acquire_blocks_on_held_lock() {
        let p = policy();
        let mut c = cfg(Cmd::acquire("k"), &p);
        c.mem.set(&Var::new("k"), 1).unwrap();
        let before = c.clone();
        assert_eq!(c.step(&p).unwrap(), Outcome::Blocked);
        assert_eq!(c, before);
    }

    #[test]
    fn lock_round_trip_moves_modes() {
        let p = policy();
        let x = Var::new("x");
        let mut c = cfg(Cmd::seq(Cmd::acquire("k"), Cmd::release("k")), &p);
        assert!(c.mds.contains(Mode::GuarNoW, &x));
        c.step(&p).unwrap();
        assert!(c.mds.contains(Mode::AsmNoW, &x));
        assert!(!c.mds.contains(Mode::GuarNoW, &x));
        assert_eq!(get(&c, "k"), 1);
        c.step(&p).unwrap();
        assert_eq!(c.mds, p.initial_mds());
        assert_eq!(get(&c, "k"), 0);
    }

    #[test]
    fn release_without_holding_is_an_error() {
        let p = policy();
        let mut c = cfg(Cmd::release("k"), &p);
        assert_eq!(c.step(&p), Err(SemanticsError::NotHeld(Var::new("k"))));
        let mut c = cfg(Cmd::acquire("x"), &p);
        assert_eq!(c.step(&p), Err(SemanticsError::UnknownLock(Var::new("x"))));
    }

    #[test]
    fn leftmost_examples() {
        let a = Cmd::assign("x", Expr::Const(1));
        assert_eq!(Cmd::seq(Cmd::Skip, a.clone()).leftmost(), &Cmd::Skip);
        let nested = Cmd::seq(Cmd::seq(a.clone(), Cmd::Skip), Cmd::Skip);
        assert_eq!(nested.leftmost(), &a);
        let w = Cmd::while_(Expr::Const(1), Cmd::Skip);
        assert_eq!(w.leftmost(), &w);
    }

    #[test]
    fn stops_examples() {
        let p = policy();
        assert!(cfg(Cmd::Stop, &p).stops());
        assert!(!cfg(Cmd::Skip, &p).stops());
        assert!(!cfg(Cmd::seq(Cmd::Skip, Cmd::Skip), &p).stops());
    }

    #[test]
    fn seq_all_nests_right() {
        let c = Cmd::seq_all([Cmd::Skip, Cmd::acquire("k"), Cmd::release("k")]).unwrap();
        assert_eq!(c, Cmd::seq(Cmd::Skip, Cmd::seq(Cmd::acquire("k"), Cmd::release("k"))));
        assert!(Cmd::seq_all([]).is_none());
    }
}
