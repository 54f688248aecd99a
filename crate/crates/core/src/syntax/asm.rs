//! Assembly text: one instruction per line, `[Lnn:] OPCODE operands`.
//!
//! ```text
//! L0: LOAD r0 v
//!     JZ L1 r0
//!     STORE x r0
//!     JMP L0
//! .exit L1
//! ```
//!
//! `;` starts a comment. The optional `.exit` directive names the label
//! that resolves to the end of the program.

use super::ParseError;
use crate::lang::{BinOp, Value, Var};
use crate::risc::{Instr, Label, Op, Program, Reg};

pub fn emit_asm(prog: &Program) -> String {
    let mut out = String::new();
    for ins in prog.instrs() {
        match ins.label {
            Some(l) => out.push_str(&format!("L{l}: {}\n", ins.op)),
            None => out.push_str(&format!("    {}\n", ins.op)),
        }
    }
    if let Some(l) = prog.exit_label() {
        out.push_str(&format!(".exit L{l}\n"));
    }
    out
}

fn label(tok: &str) -> Option<Label> {
    tok.strip_prefix('L')?.parse().ok()
}

fn reg(tok: &str) -> Option<Reg> {
    tok.strip_prefix('r')?.parse().ok()
}

fn ident(tok: &str) -> Option<Var> {
    let mut cs = tok.chars();
    let first = cs.next()?;
    let ok = (first.is_ascii_alphabetic() || first == '_') && cs.all(|c| c.is_ascii_alphanumeric() || c == '_');
    ok.then(|| Var::new(tok))
}

fn parse_op(words: &[&str]) -> Result<Op, String> {
    let arity = |n: usize| {
        if words.len() == n + 1 {
            Ok(())
        } else {
            Err(format!("`{}` takes {n} operand(s), found {}", words[0], words.len() - 1))
        }
    };
    let r = |i: usize| reg(words[i]).ok_or_else(|| format!("expected register, found `{}`", words[i]));
    let l = |i: usize| label(words[i]).ok_or_else(|| format!("expected label, found `{}`", words[i]));
    let v = |i: usize| ident(words[i]).ok_or_else(|| format!("expected variable, found `{}`", words[i]));
    Ok(match words[0] {
        "LOAD" => {
            arity(2)?;
            Op::Load(r(1)?, v(2)?)
        }
        "STORE" => {
            arity(2)?;
            Op::Store(v(1)?, r(2)?)
        }
        "JMP" => {
            arity(1)?;
            Op::Jmp(l(1)?)
        }
        "JZ" => {
            arity(2)?;
            Op::Jz(l(1)?, r(2)?)
        }
        "NOP" => {
            arity(0)?;
            Op::Nop
        }
        "MOVK" => {
            arity(2)?;
            let n: Value = words[2].parse().map_err(|_| format!("expected integer, found `{}`", words[2]))?;
            Op::MoveK(r(1)?, n)
        }
        "MOVR" => {
            arity(2)?;
            Op::MoveR(r(1)?, r(2)?)
        }
        "OP" => {
            arity(3)?;
            let op = BinOp::from_mnemonic(words[1]).ok_or_else(|| format!("unknown operator `{}`", words[1]))?;
            Op::Arith(op, r(2)?, r(3)?)
        }
        "LOCKACQ" => {
            arity(1)?;
            Op::LockAcq(v(1)?)
        }
        "LOCKREL" => {
            arity(1)?;
            Op::LockRel(v(1)?)
        }
        other => return Err(format!("unknown opcode `{other}`")),
    })
}

pub fn parse_asm(text: &str) -> Result<Program, ParseError> {
    let mut instrs = Vec::new();
    let mut exit = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split(';').next().unwrap_or("");
        let col = line.len() - line.trim_start().len() + 1;
        let mut rest = line.trim();
        if rest.is_empty() {
            continue;
        }
        let at = |msg: String| ParseError::new(i + 1, col, msg);
        if let Some(d) = rest.strip_prefix(".exit") {
            let l = label(d.trim()).ok_or_else(|| at(format!("bad exit label `{}`", d.trim())))?;
            if exit.replace(l).is_some() {
                return Err(at("duplicate .exit directive".into()));
            }
            continue;
        }
        let mut lbl = None;
        if let Some((head, tail)) = rest.split_once(':') {
            lbl = Some(label(head.trim()).ok_or_else(|| at(format!("bad label `{}`", head.trim())))?);
            rest = tail.trim();
        }
        let words: Vec<&str> = rest.split_whitespace().collect();
        if words.is_empty() {
            return Err(at("label without instruction".into()));
        }
        let op = parse_op(&words).map_err(at)?;
        instrs.push(Instr::labelled(lbl, op));
    }
    Program::new(instrs, exit).map_err(|e| ParseError::new(0, 0, e.to_string()))
}
