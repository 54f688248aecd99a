//! JSON-lines sidecar carrying the compilation record of every instruction.
//!
//! One object per instruction, in program order:
//!
//! ```text
//! {"pc":0,"label":null,"instr":"LOAD r0 v","epilogue":false,"regrec":{},"no_write":["v"],"no_read_write":[]}
//! ```
//!
//! followed by one `{"final":true,...}` object holding the record in force
//! at the end of the program. Register-record expressions use the source
//! expression syntax.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{parse_expr, ParseError};
use crate::compiler::{AnnInstr, CompRec, Compiled, RegRec};
use crate::lang::{AsmRec, Var};
use crate::risc::{Label, Program};

#[derive(Serialize, Deserialize)]
struct Line {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pc: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    r#final: bool,
    #[serde(default)]
    label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instr: Option<String>,
    #[serde(default)]
    epilogue: bool,
    regrec: BTreeMap<usize, String>,
    no_write: Vec<Var>,
    no_read_write: Vec<Var>,
}

fn line_of(rec: &CompRec) -> Line {
    Line {
        pc: None,
        r#final: false,
        label: None,
        instr: None,
        epilogue: false,
        regrec: rec.regrec.iter().map(|(r, e)| (*r, e.to_string())).collect(),
        no_write: rec.asmrec.no_write.iter().cloned().collect(),
        no_read_write: rec.asmrec.no_read_write.iter().cloned().collect(),
    }
}

pub fn write_annotations(c: &Compiled) -> String {
    let mut out = String::new();
    for (pc, a) in c.annots.iter().enumerate() {
        let mut l = line_of(&a.rec);
        l.pc = Some(pc);
        l.label = a.instr.label;
        l.instr = Some(a.instr.op.to_string());
        l.epilogue = a.epilogue;
        out.push_str(&serde_json::to_string(&l).expect("annotation serializes"));
        out.push('\n');
    }
    let mut l = line_of(&c.final_rec);
    l.r#final = true;
    out.push_str(&serde_json::to_string(&l).expect("annotation serializes"));
    out.push('\n');
    out
}

/// Reattaches a sidecar to the program it was written for.
pub fn read_annotations(prog: Program, nregs: usize, text: &str) -> Result<Compiled, ParseError> {
    let mut annots = Vec::new();
    let mut final_rec = None;
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let at = |msg: String| ParseError::new(i + 1, 1, msg);
        let l: Line = serde_json::from_str(raw).map_err(|e| at(e.to_string()))?;
        let mut regrec = RegRec::new();
        for (r, e) in &l.regrec {
            regrec.insert(*r, parse_expr(e).map_err(|e| at(format!("register r{r}: {e}")))?);
        }
        let rec = CompRec {
            regrec,
            asmrec: AsmRec {
                no_write: l.no_write.into_iter().collect(),
                no_read_write: l.no_read_write.into_iter().collect(),
            },
        };
        if l.r#final {
            final_rec = Some(rec);
            continue;
        }
        let pc = annots.len();
        if l.pc.is_some_and(|p| p != pc) {
            return Err(at(format!("expected pc {pc}")));
        }
        let instr = prog.get(pc).cloned().ok_or_else(|| at("more annotations than instructions".into()))?;
        annots.push(AnnInstr { instr, rec, epilogue: l.epilogue });
    }
    if annots.len() != prog.len() {
        return Err(ParseError::new(0, 0, format!("{} annotations for {} instructions", annots.len(), prog.len())));
    }
    let final_rec = final_rec.ok_or_else(|| ParseError::new(0, 0, "missing final record"))?;
    Ok(Compiled { program: std::sync::Arc::new(prog), annots, final_rec, nregs })
}
