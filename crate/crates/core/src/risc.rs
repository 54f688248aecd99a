//! The target language: labelled RISC-style instructions over a register
//! file and the shared memory.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

use crate::lang::{BinOp, Memory, ModeState, Value, Var};
use crate::locking::{self, SemanticsError};
use crate::policy::Policy;
use crate::while_lang::Outcome;

pub type Reg = usize;
pub type Label = u32;

pub const DEFAULT_REGS: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Load(Reg, Var),
    Store(Var, Reg),
    Jmp(Label),
    /// Jump when the register holds zero.
    Jz(Label, Reg),
    Nop,
    MoveK(Reg, Value),
    MoveR(Reg, Reg),
    /// `dst := dst op src`
    Arith(BinOp, Reg, Reg),
    LockAcq(Var),
    LockRel(Var),
}

impl Op {
    pub fn jump_target(&self) -> Option<Label> {
        match self {
            Op::Jmp(l) | Op::Jz(l, _) => Some(*l),
            _ => None,
        }
    }

    pub fn registers(&self) -> Vec<Reg> {
        match self {
            Op::Load(r, _) | Op::Store(_, r) | Op::Jz(_, r) | Op::MoveK(r, _) => vec![*r],
            Op::MoveR(a, b) | Op::Arith(_, a, b) => vec![*a, *b],
            _ => vec![],
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            Op::Load(..) => "LOAD",
            Op::Store(..) => "STORE",
            Op::Jmp(_) => "JMP",
            Op::Jz(..) => "JZ",
            Op::Nop => "NOP",
            Op::MoveK(..) => "MOVK",
            Op::MoveR(..) => "MOVR",
            Op::Arith(..) => "OP",
            Op::LockAcq(_) => "LOCKACQ",
            Op::LockRel(_) => "LOCKREL",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.mnemonic();
        match self {
            Op::Load(r, v) => write!(f, "{m} r{r} {v}"),
            Op::Store(v, r) => write!(f, "{m} {v} r{r}"),
            Op::Jmp(l) => write!(f, "{m} L{l}"),
            Op::Jz(l, r) => write!(f, "{m} L{l} r{r}"),
            Op::Nop => f.write_str(m),
            Op::MoveK(r, n) => write!(f, "{m} r{r} {n}"),
            Op::MoveR(a, b) => write!(f, "{m} r{a} r{b}"),
            Op::Arith(op, a, b) => write!(f, "{m} {} r{a} r{b}", op.mnemonic()),
            Op::LockAcq(k) | Op::LockRel(k) => write!(f, "{m} {k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Instr {
    pub label: Option<Label>,
    pub op: Op,
}

impl Instr {
    pub fn new(op: Op) -> Self {
        Instr { label: None, op }
    }

    pub fn labelled(label: Option<Label>, op: Op) -> Self {
        Instr { label, op }
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.label {
            write!(f, "L{l}: ")?;
        }
        write!(f, "{}", self.op)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("label L{0} defined more than once")]
    DuplicateLabel(Label),
    #[error("jump to undefined label L{0}")]
    UndefinedLabel(Label),
}

/// An instruction list with resolved labels. The optional exit label names
/// the position just past the last instruction.
#[derive(Clone, Debug)]
pub struct Program {
    instrs: Vec<Instr>,
    exit_label: Option<Label>,
    index: HashMap<Label, usize>,
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.instrs == other.instrs && self.exit_label == other.exit_label
    }
}

impl Eq for Program {}

impl Hash for Program {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.instrs.hash(state);
        self.exit_label.hash(state);
    }
}

impl Program {
    /// Checks label uniqueness and that every jump resolves.
    pub fn new(instrs: Vec<Instr>, exit_label: Option<Label>) -> Result<Self, LinkError> {
        let mut index = HashMap::new();
        for (i, ins) in instrs.iter().enumerate() {
            if let Some(l) = ins.label {
                if index.insert(l, i).is_some() || exit_label == Some(l) {
                    return Err(LinkError::DuplicateLabel(l));
                }
            }
        }
        let p = Program { instrs, exit_label, index };
        for ins in &p.instrs {
            if let Some(l) = ins.op.jump_target() {
                p.resolve(l)?;
            }
        }
        Ok(p)
    }

    pub fn instrs(&self) -> &[Instr] {
        &self.instrs
    }

    pub fn exit_label(&self) -> Option<Label> {
        self.exit_label
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn get(&self, pc: usize) -> Option<&Instr> {
        self.instrs.get(pc)
    }

    pub fn resolve(&self, l: Label) -> Result<usize, LinkError> {
        if self.exit_label == Some(l) {
            return Ok(self.instrs.len());
        }
        self.index.get(&l).copied().ok_or(LinkError::UndefinedLabel(l))
    }

    pub fn labels(&self) -> BTreeSet<Label> {
        self.index.keys().copied().collect()
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ins in &self.instrs {
            writeln!(f, "{ins}")?;
        }
        Ok(())
    }
}

/// Consecutive fragments may be concatenated without cross-talk: every jump
/// in `p1` stays inside `p1` or lands on the first instruction of `p2`, and
/// no jump in `p2` reaches back into `p1`.
pub fn joinable(p1: &[Instr], p2: &[Instr]) -> bool {
    let labels1: BTreeSet<Label> = p1.iter().filter_map(|i| i.label).collect();
    let first2 = p2.first().and_then(|i| i.label);
    let forward = p1
        .iter()
        .filter_map(|i| i.op.jump_target())
        .all(|l| labels1.contains(&l) || first2 == Some(l));
    let backward = p2
        .iter()
        .filter_map(|i| i.op.jump_target())
        .all(|l| !labels1.contains(&l));
    forward && backward
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RiscConfig {
    pub pc: usize,
    pub prog: Arc<Program>,
    pub regs: Vec<Value>,
    pub mds: ModeState,
    pub mem: Memory,
}

impl RiscConfig {
    pub fn new(prog: Arc<Program>, nregs: usize, mds: ModeState, mem: Memory) -> Self {
        RiscConfig { pc: 0, prog, regs: vec![0; nregs], mds, mem }
    }

    pub fn stops(&self) -> bool {
        self.pc >= self.prog.len()
    }

    pub fn current(&self) -> Option<&Instr> {
        self.prog.get(self.pc)
    }

    fn reg(&self, r: Reg) -> Result<Value, SemanticsError> {
        self.regs.get(r).copied().ok_or(SemanticsError::BadRegister(r))
    }

    fn set_reg(&mut self, r: Reg, v: Value) -> Result<(), SemanticsError> {
        let slot = self.regs.get_mut(r).ok_or(SemanticsError::BadRegister(r))?;
        *slot = v;
        Ok(())
    }

    fn jump(&mut self, l: Label) -> Result<(), SemanticsError> {
        self.pc = self.prog.resolve(l).map_err(|_| SemanticsError::UnknownLabel(l))?;
        Ok(())
    }

    pub fn step(&mut self, policy: &Policy) -> Result<Outcome, SemanticsError> {
        let Some(ins) = self.prog.get(self.pc) else {
            return Ok(Outcome::Stopped);
        };
        match ins.op.clone() {
            Op::Load(r, v) => {
                let x = self.mem.get(&v).ok_or(crate::lang::EvalError::UnknownVar(v))?;
                self.set_reg(r, x)?;
                self.pc += 1;
            }
            Op::Store(v, r) => {
                let x = self.reg(r)?;
                self.mem.set(&v, x)?;
                self.pc += 1;
            }
            Op::Jmp(l) => self.jump(l)?,
            Op::Jz(l, r) => {
                if self.reg(r)? == 0 {
                    self.jump(l)?;
                } else {
                    self.pc += 1;
                }
            }
            Op::Nop => self.pc += 1,
            Op::MoveK(r, n) => {
                self.set_reg(r, n)?;
                self.pc += 1;
            }
            Op::MoveR(a, b) => {
                let x = self.reg(b)?;
                self.set_reg(a, x)?;
                self.pc += 1;
            }
            Op::Arith(op, a, b) => {
                let x = op.apply(self.reg(a)?, self.reg(b)?);
                self.set_reg(a, x)?;
                self.pc += 1;
            }
            Op::LockAcq(k) => {
                if !locking::acquire(policy, &k, &mut self.mds, &mut self.mem)? {
                    return Ok(Outcome::Blocked);
                }
                self.pc += 1;
            }
            Op::LockRel(k) => {
                locking::release(policy, &k, &mut self.mds, &mut self.mem)?;
                self.pc += 1;
            }
        }
        Ok(Outcome::Progressed)
    }
}
