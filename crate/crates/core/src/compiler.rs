//! The While-to-RISC compiler.
//!
//! Besides code, the compiler threads a compilation record through every
//! instruction: which registers hold which expressions, and which access
//! assumptions are in force. Registers are only reused as caches for
//! variables that are stable, i.e. covered (with their control variables) by
//! a held lock, and any read or write of shared state that another thread
//! could race with makes compilation fail.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{AsmRec, Expr, Memory, ModeState, Value, Var};
use crate::policy::Policy;
use crate::risc::{Instr, Label, LinkError, Op, Program, Reg, DEFAULT_REGS};
use crate::while_lang::Cmd;

pub type RegRec = BTreeMap<Reg, Expr>;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct CompRec {
    pub regrec: RegRec,
    pub asmrec: AsmRec,
}

impl CompRec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_asm(asmrec: AsmRec) -> Self {
        CompRec { regrec: RegRec::new(), asmrec }
    }
}

impl fmt::Display for CompRec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let regs: Vec<String> = self.regrec.iter().map(|(r, e)| format!("r{r}={e}")).collect();
        let show = |s: &BTreeSet<Var>| s.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(",");
        write!(
            f,
            "regs[{}] asm({} | {})",
            regs.join(" "),
            show(&self.asmrec.no_write),
            show(&self.asmrec.no_read_write)
        )
    }
}

/// One emitted instruction with the record in force before it runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnInstr {
    pub instr: Instr,
    pub rec: CompRec,
    /// Control-flow stitching (branch and loop tails) that has no
    /// counterpart step in the source program.
    pub epilogue: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum CompileFailure {
    #[error("data race: read of `{0}` without holding the lock that makes it stable")]
    UnstableRead(Var),
    #[error("data race: write to `{0}` without holding its lock")]
    UnstableWrite(Var),
    #[error("assignment to lock variable `{0}`")]
    LockAssigned(Var),
    #[error("undeclared variable `{0}`")]
    UnknownVar(Var),
    #[error("`{0}` is not a declared lock")]
    UnknownLock(Var),
    #[error("release of `{0}`, which is not held here")]
    ReleaseNotHeld(Var),
    #[error("branches of a conditional leave different locks held")]
    BranchModeMismatch,
    #[error("loop body does not restore the locks held on entry")]
    LoopModeMismatch,
    #[error("out of registers")]
    RegistersExhausted,
    #[error("`stop` cannot be compiled")]
    StopInSource,
    #[error("entry label L{0} is not below the next free label")]
    BadEntryLabel(Label),
}

#[derive(Clone, Debug)]
pub struct CompileOutput {
    pub code: Vec<AnnInstr>,
    pub exit_label: Option<Label>,
    pub next_label: Label,
    pub final_rec: CompRec,
    pub failure: Option<CompileFailure>,
}

impl CompileOutput {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn instrs(&self) -> Vec<Instr> {
        self.code.iter().map(|a| a.instr.clone()).collect()
    }

    fn fail(entry_rec: CompRec, nl: Label, why: CompileFailure) -> Self {
        CompileOutput { code: Vec::new(), exit_label: None, next_label: nl, final_rec: entry_rec, failure: Some(why) }
    }
}

#[derive(Clone, Debug)]
pub struct ExprOutput {
    pub code: Vec<AnnInstr>,
    pub reg: Reg,
    pub rec: CompRec,
}

/// A linked, runnable compilation result.
#[derive(Clone, Debug)]
pub struct Compiled {
    pub program: Arc<Program>,
    /// Parallel to the program's instructions.
    pub annots: Vec<AnnInstr>,
    pub final_rec: CompRec,
    pub nregs: usize,
}

impl Compiled {
    /// Record in force at `pc`; the final record once past the end.
    pub fn rec_at(&self, pc: usize) -> &CompRec {
        self.annots.get(pc).map(|a| &a.rec).unwrap_or(&self.final_rec)
    }

    pub fn is_epilogue(&self, pc: usize) -> bool {
        self.annots.get(pc).is_some_and(|a| a.epilogue)
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Failed(#[from] CompileFailure),
    #[error("link error: {0}")]
    Link(#[from] LinkError),
}

pub struct Compiler<'p> {
    pub policy: &'p Policy,
    pub nregs: usize,
}

impl<'p> Compiler<'p> {
    pub fn new(policy: &'p Policy) -> Self {
        Compiler { policy, nregs: DEFAULT_REGS }
    }

    pub fn with_regs(policy: &'p Policy, nregs: usize) -> Self {
        Compiler { policy, nregs }
    }

    /// Lowest register outside `avoid`, preferring ones the record does not
    /// mention.
    pub fn reg_alloc(&self, regrec: &RegRec, avoid: &BTreeSet<Reg>) -> Option<Reg> {
        let free = (0..self.nregs).filter(|r| !avoid.contains(r));
        free.clone().find(|r| !regrec.contains_key(r)).or_else(|| free.min())
    }

    /// Lowest register outside `avoid` recorded as holding exactly `v`.
    pub fn reg_alloc_cached(&self, regrec: &RegRec, avoid: &BTreeSet<Reg>, v: &Var) -> Option<Reg> {
        regrec
            .iter()
            .find(|(r, e)| !avoid.contains(r) && matches!(e, Expr::Var(w) if w == v))
            .map(|(r, _)| *r)
    }

    pub fn compile_expr(
        &self,
        rec: &CompRec,
        avoid: &BTreeSet<Reg>,
        entry: Option<Label>,
        e: &Expr,
    ) -> Result<ExprOutput, CompileFailure> {
        let mut code = Vec::new();
        let mut rec = rec.clone();
        let reg = self.expr_into(&mut code, &mut rec, avoid, e)?;
        if let Some(first) = code.first_mut() {
            first.instr.label = entry;
        }
        Ok(ExprOutput { code, reg, rec })
    }

    fn emit(code: &mut Vec<AnnInstr>, rec: &CompRec, op: Op) {
        code.push(AnnInstr { instr: Instr::new(op), rec: rec.clone(), epilogue: false });
    }

    fn expr_into(
        &self,
        code: &mut Vec<AnnInstr>,
        rec: &mut CompRec,
        avoid: &BTreeSet<Reg>,
        e: &Expr,
    ) -> Result<Reg, CompileFailure> {
        match e {
            Expr::Const(n) => {
                let r = self.reg_alloc(&rec.regrec, avoid).ok_or(CompileFailure::RegistersExhausted)?;
                Self::emit(code, rec, Op::MoveK(r, *n));
                rec.regrec.insert(r, e.clone());
                Ok(r)
            }
            Expr::Var(v) => {
                if !self.policy.var_stable(&rec.asmrec, v) {
                    return Err(CompileFailure::UnstableRead(v.clone()));
                }
                if let Some(r) = self.reg_alloc_cached(&rec.regrec, avoid, v) {
                    return Ok(r);
                }
                // A register the caller is still using may already hold `v`.
                // Reading it is harmless; it is never handed out as a
                // destination.
                if let Some(r) = avoid
                    .iter()
                    .find(|r| matches!(rec.regrec.get(r), Some(Expr::Var(w)) if w == v))
                {
                    return Ok(*r);
                }
                let r = self.reg_alloc(&rec.regrec, avoid).ok_or(CompileFailure::RegistersExhausted)?;
                Self::emit(code, rec, Op::Load(r, v.clone()));
                rec.regrec.insert(r, e.clone());
                Ok(r)
            }
            Expr::BinOp(op, a, b) => {
                let r1 = self.expr_into(code, rec, avoid, a)?;
                let mut avoid2 = avoid.clone();
                avoid2.insert(r1);
                let r2 = self.expr_into(code, rec, &avoid2, b)?;
                let dst = if avoid.contains(&r1) {
                    // r1 belongs to the caller: copy it first. An add onto zero
                    // keeps every expression instruction in the Load/Op/MoveK
                    // family.
                    avoid2.insert(r2);
                    let d = self.reg_alloc(&rec.regrec, &avoid2).ok_or(CompileFailure::RegistersExhausted)?;
                    Self::emit(code, rec, Op::MoveK(d, 0));
                    rec.regrec.insert(d, Expr::Const(0));
                    Self::emit(code, rec, Op::Arith(crate::lang::BinOp::Add, d, r1));
                    rec.regrec.insert(d, (**a).clone());
                    d
                } else {
                    r1
                };
                Self::emit(code, rec, Op::Arith(*op, dst, r2));
                rec.regrec.insert(dst, e.clone());
                Ok(dst)
            }
        }
    }

    fn check_read(&self, asm: &AsmRec, e: &Expr) -> Result<(), CompileFailure> {
        for v in e.vars() {
            if !self.policy.knows(&v) {
                return Err(CompileFailure::UnknownVar(v));
            }
            if !self.policy.var_stable(asm, &v) {
                return Err(CompileFailure::UnstableRead(v));
            }
        }
        Ok(())
    }

    fn check_write(&self, asm: &AsmRec, v: &Var) -> Result<(), CompileFailure> {
        if self.policy.is_lock(v) {
            return Err(CompileFailure::LockAssigned(v.clone()));
        }
        if !self.policy.universe.contains(v) {
            return Err(CompileFailure::UnknownVar(v.clone()));
        }
        if self.policy.is_governed(v) && !self.policy.var_stable(asm, v) {
            return Err(CompileFailure::UnstableWrite(v.clone()));
        }
        Ok(())
    }

    fn acquired(&self, asm: &AsmRec, k: &Var) -> Result<AsmRec, CompileFailure> {
        let li = self.policy.lock_interp(k).ok_or_else(|| CompileFailure::UnknownLock(k.clone()))?;
        let mut out = asm.clone();
        out.no_write.extend(li.no_write.iter().cloned());
        out.no_read_write.extend(li.no_read_write.iter().cloned());
        Ok(out)
    }

    fn released(&self, asm: &AsmRec, k: &Var) -> Result<AsmRec, CompileFailure> {
        let li = self.policy.lock_interp(k).ok_or_else(|| CompileFailure::UnknownLock(k.clone()))?;
        if !li.no_write.is_subset(&asm.no_write) || !li.no_read_write.is_subset(&asm.no_read_write) {
            return Err(CompileFailure::ReleaseNotHeld(k.clone()));
        }
        let mut out = asm.clone();
        out.no_write.retain(|v| !li.no_write.contains(v));
        out.no_read_write.retain(|v| !li.no_read_write.contains(v));
        Ok(out)
    }

    /// Static race and lock-consistency check: simulates the lock effects
    /// on the assumption record and rejects any unstable access.
    pub fn no_unstable_exprs(&self, c: &Cmd, rec: &CompRec) -> bool {
        self.races(c, &rec.asmrec).is_ok()
    }

    /// Returns the assumption record after `c`, or the first problem found.
    pub fn races(&self, c: &Cmd, asm: &AsmRec) -> Result<AsmRec, CompileFailure> {
        match c {
            Cmd::Skip => Ok(asm.clone()),
            Cmd::Stop => Err(CompileFailure::StopInSource),
            Cmd::Assign(v, e) => {
                self.check_read(asm, e)?;
                self.check_write(asm, v)?;
                Ok(asm.clone())
            }
            Cmd::Seq(a, b) => {
                let mid = self.races(a, asm)?;
                self.races(b, &mid)
            }
            Cmd::If(e, a, b) => {
                self.check_read(asm, e)?;
                let l = self.races(a, asm)?;
                let r = self.races(b, asm)?;
                if l != r {
                    return Err(CompileFailure::BranchModeMismatch);
                }
                Ok(l)
            }
            Cmd::While(e, body) => {
                self.check_read(asm, e)?;
                if &self.races(body, asm)? != asm {
                    return Err(CompileFailure::LoopModeMismatch);
                }
                Ok(asm.clone())
            }
            Cmd::LockAcq(k) => self.acquired(asm, k),
            Cmd::LockRel(k) => self.released(asm, k),
        }
    }

    /// Every recorded expression only mentions stable variables.
    pub fn regrec_stable(&self, rec: &CompRec) -> bool {
        rec.regrec
            .values()
            .all(|e| e.vars().iter().all(|v| self.policy.var_stable(&rec.asmrec, v)))
    }

    pub fn input_reqs(&self, rec: &CompRec, entry: Option<Label>, nl: Label, c: &Cmd) -> bool {
        !c.contains_stop()
            && entry.is_none_or(|x| x < nl)
            && self.no_unstable_exprs(c, rec)
            && self.regrec_stable(rec)
    }

    pub fn compile_cmd(&self, rec: &CompRec, entry: Option<Label>, nl: Label, c: &Cmd) -> CompileOutput {
        if let Some(x) = entry.filter(|x| *x >= nl) {
            return CompileOutput::fail(rec.clone(), nl, CompileFailure::BadEntryLabel(x));
        }
        match self.cmd(rec, entry, nl, c) {
            Ok(out) => out,
            Err(why) => CompileOutput::fail(rec.clone(), nl, why),
        }
    }

    fn single(rec: &CompRec, entry: Option<Label>, nl: Label, op: Op, final_rec: CompRec) -> CompileOutput {
        CompileOutput {
            code: vec![AnnInstr { instr: Instr::labelled(entry, op), rec: rec.clone(), epilogue: false }],
            exit_label: None,
            next_label: nl,
            final_rec,
            failure: None,
        }
    }

    fn cmd(&self, rec: &CompRec, entry: Option<Label>, nl: Label, c: &Cmd) -> Result<CompileOutput, CompileFailure> {
        match c {
            Cmd::Stop => Err(CompileFailure::StopInSource),
            Cmd::Skip => Ok(Self::single(rec, entry, nl, Op::Nop, rec.clone())),
            Cmd::Assign(v, e) => {
                self.check_write(&rec.asmrec, v)?;
                self.check_read(&rec.asmrec, e)?;
                let pe = self.compile_expr(rec, &BTreeSet::new(), entry, e)?;
                let label = if pe.code.is_empty() { entry } else { None };
                let mut code = pe.code;
                code.push(AnnInstr {
                    instr: Instr::labelled(label, Op::Store(v.clone(), pe.reg)),
                    rec: pe.rec.clone(),
                    epilogue: false,
                });
                let mut after = pe.rec;
                after.regrec.retain(|_, x| !x.mentions(v));
                if self.policy.var_stable(&after.asmrec, v) {
                    after.regrec.insert(pe.reg, Expr::Var(v.clone()));
                }
                Ok(CompileOutput { code, exit_label: None, next_label: nl, final_rec: after, failure: None })
            }
            Cmd::Seq(a, b) => {
                let o1 = self.cmd(rec, entry, nl, a)?;
                let o2 = self.cmd(&o1.final_rec, o1.exit_label, o1.next_label, b)?;
                let mut code = o1.code;
                code.extend(o2.code);
                Ok(CompileOutput { code, ..o2 })
            }
            Cmd::If(e, c1, c2) => {
                self.check_read(&rec.asmrec, e)?;
                let pe = self.compile_expr(rec, &BTreeSet::new(), entry, e)?;
                let (br, ex) = (nl, nl + 1);
                let p1 = self.cmd(&pe.rec, None, nl + 2, c1)?;
                let p2 = self.cmd(&pe.rec, Some(br), p1.next_label, c2)?;
                if p1.final_rec.asmrec != p2.final_rec.asmrec {
                    return Err(CompileFailure::BranchModeMismatch);
                }
                let jz_label = if pe.code.is_empty() { entry } else { None };
                let mut code = pe.code;
                code.push(AnnInstr { instr: Instr::labelled(jz_label, Op::Jz(br, pe.reg)), rec: pe.rec, epilogue: false });
                code.extend(p1.code);
                code.push(AnnInstr {
                    instr: Instr::labelled(p1.exit_label, Op::Jmp(ex)),
                    rec: p1.final_rec.clone(),
                    epilogue: true,
                });
                code.extend(p2.code);
                code.push(AnnInstr {
                    instr: Instr::labelled(p2.exit_label, Op::Nop),
                    rec: p2.final_rec.clone(),
                    epilogue: true,
                });
                let meet: RegRec = p1
                    .final_rec
                    .regrec
                    .iter()
                    .filter(|(r, x)| p2.final_rec.regrec.get(r) == Some(x))
                    .map(|(r, x)| (*r, x.clone()))
                    .collect();
                Ok(CompileOutput {
                    code,
                    exit_label: Some(ex),
                    next_label: p2.next_label,
                    final_rec: CompRec { regrec: meet, asmrec: p1.final_rec.asmrec },
                    failure: None,
                })
            }
            Cmd::While(e, body) => {
                self.check_read(&rec.asmrec, e)?;
                let mut nl = nl;
                let header = entry.unwrap_or_else(|| {
                    nl += 1;
                    nl - 1
                });
                let ex = nl;
                nl += 1;
                let flushed = CompRec::with_asm(rec.asmrec.clone());
                let pe = self.compile_expr(&flushed, &BTreeSet::new(), Some(header), e)?;
                let pb = self.cmd(&pe.rec, None, nl, body)?;
                if pb.final_rec.asmrec != rec.asmrec {
                    return Err(CompileFailure::LoopModeMismatch);
                }
                let mut code = pe.code;
                code.push(AnnInstr { instr: Instr::new(Op::Jz(ex, pe.reg)), rec: pe.rec.clone(), epilogue: false });
                code.extend(pb.code);
                code.push(AnnInstr {
                    instr: Instr::labelled(pb.exit_label, Op::Jmp(header)),
                    rec: pb.final_rec,
                    epilogue: true,
                });
                Ok(CompileOutput {
                    code,
                    exit_label: Some(ex),
                    next_label: pb.next_label,
                    final_rec: pe.rec,
                    failure: None,
                })
            }
            Cmd::LockAcq(k) => {
                let asm = self.acquired(&rec.asmrec, k)?;
                let after = CompRec { regrec: rec.regrec.clone(), asmrec: asm };
                Ok(Self::single(rec, entry, nl, Op::LockAcq(k.clone()), after))
            }
            Cmd::LockRel(k) => {
                let asm = self.released(&rec.asmrec, k)?;
                let mut before = rec.clone();
                before.regrec.retain(|_, x| x.vars().iter().all(|v| self.policy.var_stable(&asm, v)));
                let after = CompRec { regrec: before.regrec.clone(), asmrec: asm };
                Ok(Self::single(&before, entry, nl, Op::LockRel(k.clone()), after))
            }
        }
    }

    /// Compiles a whole thread from an empty record and links it.
    pub fn compile(&self, c: &Cmd) -> Result<Compiled, CompileError> {
        self.compile_from(&CompRec::new(), c)
    }

    pub fn compile_from(&self, rec: &CompRec, c: &Cmd) -> Result<Compiled, CompileError> {
        let out = self.compile_cmd(rec, None, 0, c);
        if let Some(why) = out.failure {
            return Err(CompileError::Failed(why));
        }
        self.link(out)
    }

    pub fn link(&self, out: CompileOutput) -> Result<Compiled, CompileError> {
        let program = Program::new(out.instrs(), out.exit_label)?;
        Ok(Compiled { program: Arc::new(program), annots: out.code, final_rec: out.final_rec, nregs: self.nregs })
    }
}

/// Registers agree with the recorded expressions and the assumption record
/// matches the thread's Asm modes.
pub fn config_consistent(rec: &CompRec, regs: &[Value], mds: &ModeState, mem: &Memory) -> bool {
    rec.asmrec.matches(mds)
        && rec
            .regrec
            .iter()
            .all(|(r, e)| matches!((regs.get(*r), e.eval(mem)), (Some(x), Ok(y)) if *x == y))
}
