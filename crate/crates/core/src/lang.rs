//! Values, variables, expressions, shared memory and mode states.
//!
//! These types are shared by the source language, the target language and
//! every checker. Memories and mode states are plain values: cloning one
//! yields an independent snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Machine word. Arithmetic wraps on overflow; nonzero is true.
pub type Value = i64;

pub const FALSE: Value = 0;
pub const TRUE: Value = 1;

pub fn truthy(v: Value) -> bool {
    v != 0
}

pub fn from_bool(b: bool) -> Value {
    if b {
        TRUE
    } else {
        FALSE
    }
}

/// Name of a shared program variable or lock variable.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Var(Arc<str>);

/// Locks live in shared memory, so a lock name is just a variable name that
/// the policy designates as a lock.
pub type LockName = Var;

impl Var {
    pub fn new(name: &str) -> Self {
        Var(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Var {
    fn from(s: &str) -> Self {
        Var::new(s)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Eq,
    Ne,
    Lt,
    And,
    Or,
}

impl BinOp {
    pub const ALL: [BinOp; 8] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::Lt,
        BinOp::And,
        BinOp::Or,
    ];

    pub fn apply(self, a: Value, b: Value) -> Value {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Eq => from_bool(a == b),
            BinOp::Ne => from_bool(a != b),
            BinOp::Lt => from_bool(a < b),
            // Both operands are already evaluated: no short-circuiting.
            BinOp::And => from_bool(truthy(a) && truthy(b)),
            BinOp::Or => from_bool(truthy(a) || truthy(b)),
        }
    }

    /// Source-level spelling.
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    pub fn from_symbol(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.symbol() == s)
    }

    /// Assembly mnemonic.
    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "ADD",
            BinOp::Sub => "SUB",
            BinOp::Mul => "MUL",
            BinOp::Eq => "EQ",
            BinOp::Ne => "NE",
            BinOp::Lt => "LT",
            BinOp::And => "AND",
            BinOp::Or => "OR",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.mnemonic() == s)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    Const(Value),
    Var(Var),
    BinOp(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown variable `{0}`")]
    UnknownVar(Var),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(Var::new(name))
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::BinOp(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn eval(&self, mem: &Memory) -> Result<Value, EvalError> {
        match self {
            Expr::Const(n) => Ok(*n),
            Expr::Var(v) => mem.get(v).ok_or_else(|| EvalError::UnknownVar(v.clone())),
            Expr::BinOp(op, a, b) => {
                let a = a.eval(mem)?;
                let b = b.eval(mem)?;
                Ok(op.apply(a, b))
            }
        }
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::BinOp(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn mentions(&self, v: &Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(w) => w == v,
            Expr::BinOp(_, a, b) => a.mentions(v) || b.mentions(v),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::BinOp(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(n) => write!(f, "{n}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::BinOp(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Shared memory: a total map over the declared variables and locks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Memory(BTreeMap<Var, Value>);

impl Memory {
    pub fn new() -> Self {
        Memory(BTreeMap::new())
    }

    /// All of `vars` set to zero.
    pub fn zeroed<'a>(vars: impl IntoIterator<Item = &'a Var>) -> Self {
        Memory(vars.into_iter().map(|v| (v.clone(), 0)).collect())
    }

    pub fn get(&self, v: &Var) -> Option<Value> {
        self.0.get(v).copied()
    }

    pub fn contains(&self, v: &Var) -> bool {
        self.0.contains_key(v)
    }

    /// Writes `val` to `v`. Writing outside the declared domain is an error.
    pub fn set(&mut self, v: &Var, val: Value) -> Result<(), EvalError> {
        match self.0.get_mut(v) {
            Some(slot) => {
                *slot = val;
                Ok(())
            }
            None => Err(EvalError::UnknownVar(v.clone())),
        }
    }

    /// Inserts or overwrites, extending the domain if needed.
    pub fn insert(&mut self, v: Var, val: Value) {
        self.0.insert(v, val);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, Value)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(Var, Value)> for Memory {
    fn from_iter<I: IntoIterator<Item = (Var, Value)>>(iter: I) -> Self {
        Memory(iter.into_iter().collect())
    }
}

impl fmt::Display for Memory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str("}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    AsmNoW,
    AsmNoRW,
    GuarNoW,
    GuarNoRW,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::AsmNoW, Mode::AsmNoRW, Mode::GuarNoW, Mode::GuarNoRW];

    fn index(self) -> usize {
        self as usize
    }
}

/// Ghost state recording which access assumptions and guarantees a thread
/// currently holds.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeState {
    sets: [BTreeSet<Var>; 4],
}

impl ModeState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, mode: Mode) -> &BTreeSet<Var> {
        &self.sets[mode.index()]
    }

    pub fn get_mut(&mut self, mode: Mode) -> &mut BTreeSet<Var> {
        &mut self.sets[mode.index()]
    }

    pub fn contains(&self, mode: Mode, v: &Var) -> bool {
        self.get(mode).contains(v)
    }

    /// `v` is readable unless the thread assumes nobody else touches it.
    pub fn readable(&self, v: &Var) -> bool {
        !self.contains(Mode::AsmNoRW, v)
    }

    /// Others may change `v` only when no assumption covers it.
    pub fn writable(&self, v: &Var) -> bool {
        !self.contains(Mode::AsmNoW, v) && !self.contains(Mode::AsmNoRW, v)
    }

    /// Both access predicates at once.
    pub fn readable_writable(&self, v: &Var) -> (bool, bool) {
        (self.readable(v), self.writable(v))
    }
}

/// The assumption sets a thread (or the compiler on its behalf) holds:
/// variables nobody else writes, and variables nobody else touches.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AsmRec {
    pub no_write: BTreeSet<Var>,
    pub no_read_write: BTreeSet<Var>,
}

impl AsmRec {
    pub fn new() -> Self {
        Self::default()
    }

    /// The Asm half of a mode state.
    pub fn of_mds(mds: &ModeState) -> Self {
        AsmRec {
            no_write: mds.get(Mode::AsmNoW).clone(),
            no_read_write: mds.get(Mode::AsmNoRW).clone(),
        }
    }

    pub fn covers(&self, v: &Var) -> bool {
        self.no_write.contains(v) || self.no_read_write.contains(v)
    }

    pub fn matches(&self, mds: &ModeState) -> bool {
        &self.no_write == mds.get(Mode::AsmNoW) && &self.no_read_write == mds.get(Mode::AsmNoRW)
    }
}

impl fmt::Display for ModeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |s: &BTreeSet<Var>| {
            s.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(",")
        };
        write!(
            f,
            "AsmNoW[{}] AsmNoRW[{}] GuarNoW[{}] GuarNoRW[{}]",
            show(self.get(Mode::AsmNoW)),
            show(self.get(Mode::AsmNoRW)),
            show(self.get(Mode::GuarNoW)),
            show(self.get(Mode::GuarNoRW)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mem(pairs: &[(&str, Value)]) -> Memory {
        pairs.iter().map(|(k, v)| (Var::new(k), *v)).collect()
    }

    #[test]
    fn eval_examples() {
        let v = Expr::var("v");
        let e = Expr::bin(BinOp::Add, v.clone(), Expr::bin(BinOp::Add, v, Expr::Const(1)));
        assert_eq!(e.eval(&mem(&[("v", 3)])), Ok(7));
        assert_eq!(Expr::Const(42).eval(&Memory::new()), Ok(42));
        let eq = Expr::bin(BinOp::Eq, Expr::var("a"), Expr::var("b"));
        assert_eq!(eq.eval(&mem(&[("a", 5), ("b", 5)])), Ok(1));
    }

    #[test]
    fn eval_unknown_variable() {
        let err = Expr::var("ghost").eval(&Memory::new()).unwrap_err();
        assert_eq!(err, EvalError::UnknownVar(Var::new("ghost")));
    }

    #[test]
    fn arithmetic_wraps() {
        let e = Expr::bin(BinOp::Add, Expr::Const(i64::MAX), Expr::Const(1));
        assert_eq!(e.eval(&Memory::new()), Ok(i64::MIN));
        let m = Expr::bin(BinOp::Mul, Expr::Const(i64::MIN), Expr::Const(-1));
        assert_eq!(m.eval(&Memory::new()), Ok(i64::MIN));
    }

    #[test]
    fn logic_is_zero_one() {
        let m = Memory::new();
        let and = Expr::bin(BinOp::And, Expr::Const(7), Expr::Const(-2));
        assert_eq!(and.eval(&m), Ok(1));
        let or = Expr::bin(BinOp::Or, Expr::Const(0), Expr::Const(0));
        assert_eq!(or.eval(&m), Ok(0));
        let lt = Expr::bin(BinOp::Lt, Expr::Const(-3), Expr::Const(2));
        assert_eq!(lt.eval(&m), Ok(1));
    }

    #[test]
    fn vars_examples() {
        assert!(Expr::Const(1).vars().is_empty());
        let v = Expr::var("v");
        let e = Expr::bin(BinOp::Add, v.clone(), Expr::bin(BinOp::Add, v, Expr::Const(1)));
        assert_eq!(e.vars(), [Var::new("v")].into_iter().collect());
        let x = Expr::var("x");
        let e = Expr::bin(BinOp::Add, x.clone(), Expr::bin(BinOp::Mul, Expr::var("y"), x));
        assert_eq!(e.vars(), [Var::new("x"), Var::new("y")].into_iter().collect());
    }

    #[test]
    fn depth_counts_levels() {
        assert_eq!(Expr::Const(0).depth(), 1);
        let e = Expr::bin(BinOp::Sub, Expr::var("a"), Expr::bin(BinOp::Sub, Expr::var("b"), Expr::Const(2)));
        assert_eq!(e.depth(), 3);
    }

    #[test]
    fn mode_access_predicates() {
        let mut mds = ModeState::new();
        let x = Var::new("x");
        assert_eq!(mds.readable_writable(&x), (true, true));
        mds.get_mut(Mode::AsmNoW).insert(x.clone());
        assert_eq!(mds.readable_writable(&x), (true, false));
        let mut mds = ModeState::new();
        mds.get_mut(Mode::AsmNoRW).insert(x.clone());
        assert_eq!(mds.readable_writable(&x), (false, false));
    }

    #[test]
    fn memory_set_rejects_undeclared() {
        let mut m = mem(&[("a", 1)]);
        assert!(m.set(&Var::new("a"), 4).is_ok());
        assert_eq!(m.get(&Var::new("a")), Some(4));
        assert!(m.set(&Var::new("b"), 4).is_err());
    }
}
