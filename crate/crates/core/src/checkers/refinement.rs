//! Paced co-execution of a source program and its compiled code.
//!
//! The target takes one step at a time; the source takes as many steps as
//! the pacing function asks for. At every paired point both sides must
//! agree on memory and modes, and the registers must match the compiler's
//! record for the current instruction. Other threads are modelled by writes
//! to variables the thread currently lets others change, applied to both
//! sides at once.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CheckError, Failure, Pacing, Tail, Verdict, DEFAULT_MAX_STEPS};
use crate::compiler::{config_consistent, Compiled};
use crate::lang::{Memory, ModeState, Value, Var};
use crate::policy::Policy;
use crate::risc::RiscConfig;
use crate::while_lang::{Cmd, Outcome, WhileConfig};

#[derive(Clone, Debug, Default)]
pub enum Interference {
    #[default]
    None,
    /// Writes `(step, var, value)`, applied just before paired step `step`.
    /// A write to a variable the thread does not currently let others
    /// change is rejected.
    Script(Vec<(usize, Var, Value)>),
    /// Before each step, with probability `rate`, one permitted variable
    /// (drawn from `only` when given) gets a value from `lo..=hi`.
    Random { seed: u64, rate: f64, lo: Value, hi: Value, only: Option<Vec<Var>> },
}

impl Interference {
    pub fn random(seed: u64) -> Self {
        Interference::Random { seed, rate: 0.2, lo: -8, hi: 8, only: None }
    }

    /// Parses `step var value` lines; `#` starts a comment.
    pub fn parse_script(text: &str) -> Result<Self, String> {
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let w: Vec<&str> = line.split_whitespace().collect();
            let bad = || format!("line {}: expected `step var value`", i + 1);
            if w.len() != 3 {
                return Err(bad());
            }
            let step = w[0].parse().map_err(|_| bad())?;
            let val = w[2].parse().map_err(|_| bad())?;
            out.push((step, Var::new(w[1]), val));
        }
        Ok(Interference::Script(out))
    }
}

#[derive(Clone, Debug)]
pub struct RefinementOptions {
    pub max_steps: usize,
    pub pacing: Pacing,
    pub env: Interference,
}

impl Default for RefinementOptions {
    fn default() -> Self {
        RefinementOptions { max_steps: DEFAULT_MAX_STEPS, pacing: Pacing::Faithful, env: Interference::None }
    }
}

struct Env {
    script: BTreeMap<usize, Vec<(Var, Value)>>,
    random: Option<(ChaCha8Rng, f64, Value, Value, Option<Vec<Var>>)>,
    seed: u64,
}

impl Env {
    fn new(i: &Interference) -> Self {
        match i {
            Interference::None => Env { script: BTreeMap::new(), random: None, seed: 0 },
            Interference::Script(ws) => {
                let mut script: BTreeMap<usize, Vec<(Var, Value)>> = BTreeMap::new();
                for (s, v, x) in ws {
                    script.entry(*s).or_default().push((v.clone(), *x));
                }
                Env { script, random: None, seed: 0 }
            }
            Interference::Random { seed, rate, lo, hi, only } => Env {
                script: BTreeMap::new(),
                random: Some((ChaCha8Rng::seed_from_u64(*seed), *rate, *lo, *hi, only.clone())),
                seed: *seed,
            },
        }
    }

    /// Writes due before `step`, given the thread's current modes.
    fn due(&mut self, step: usize, policy: &Policy, mds: &ModeState) -> Result<Vec<(Var, Value)>, CheckError> {
        if let Some(ws) = self.script.remove(&step) {
            for (v, _) in &ws {
                if !policy.env_may_write(mds, v) {
                    return Err(CheckError::Precondition(format!(
                        "interference script writes `{v}` at step {step}, which the thread does not let others change"
                    )));
                }
            }
            return Ok(ws);
        }
        let Some((rng, rate, lo, hi, only)) = &mut self.random else {
            return Ok(Vec::new());
        };
        if !rng.gen_bool(*rate) {
            return Ok(Vec::new());
        }
        let cands: Vec<Var> = match only {
            Some(vs) => vs.iter().filter(|v| policy.env_may_write(mds, v)).cloned().collect(),
            None => policy.universe.iter().filter(|v| policy.env_may_write(mds, v)).cloned().collect(),
        };
        let val = rng.gen_range(*lo..=*hi);
        Ok(cands.choose(rng).map(|v| vec![(v.clone(), val)]).unwrap_or_default())
    }
}

fn render(step: usize, abs: &WhileConfig, conc: &RiscConfig) -> String {
    let ins = conc.current().map_or("<end>".to_string(), |i| i.to_string());
    let left = format!("{:?}", abs.cmd.leftmost());
    let left: String = left.chars().take(60).collect();
    format!("step {step}: pc={} [{ins}] regs={:?} src={left} mem={}", conc.pc, conc.regs, conc.mem)
}

/// Co-executes `src` and its compilation from `mem`/`mds` (registers start
/// at `regs`, or all zero).
pub fn check_refinement_run(
    compiled: &Compiled,
    src: &Cmd,
    policy: &Policy,
    mem: &Memory,
    mds: &ModeState,
    regs: Option<Vec<Value>>,
    opts: &RefinementOptions,
) -> Result<Verdict, CheckError> {
    const NAME: &str = "refinement";
    let mut abs = WhileConfig::new(src.clone(), mds.clone(), mem.clone());
    let mut conc = RiscConfig::new(Arc::clone(&compiled.program), compiled.nregs, mds.clone(), mem.clone());
    if let Some(r) = regs {
        conc.regs = r;
    }
    if !config_consistent(compiled.rec_at(0), &conc.regs, &conc.mds, &conc.mem) {
        return Err(CheckError::Precondition(
            "initial configuration is not consistent with the entry compilation record".into(),
        ));
    }
    let mut env = Env::new(&opts.env);
    let seed = env.seed;
    let mut tail = Tail::default();
    let fail = |tail: &mut Tail, step: usize, clause: &str, detail: String| {
        Ok(Verdict::fail(NAME, seed, step, Failure { clause: clause.into(), step, detail, trace: tail.take() }))
    };

    for step in 0..opts.max_steps {
        tail.push(render(step, &abs, &conc));
        if conc.stops() {
            if abs.stops() {
                return Ok(Verdict::pass(NAME, seed, step, false));
            }
            return fail(&mut tail, step, "stopping", "target finished while the source has not".into());
        }

        for (v, x) in env.due(step, policy, &conc.mds)? {
            abs.mem.set(&v, x).map_err(crate::locking::SemanticsError::from)?;
            conc.mem.set(&v, x).map_err(crate::locking::SemanticsError::from)?;
            tail.push(format!("step {step}: environment writes {v} := {x}"));
            if !config_consistent(compiled.rec_at(conc.pc), &conc.regs, &conc.mds, &conc.mem) {
                return fail(
                    &mut tail,
                    step,
                    "closed-others",
                    format!("write to `{v}` invalidates the register record at pc {}", conc.pc),
                );
            }
        }

        let n = opts.pacing.abs_steps(&abs.cmd, compiled, conc.pc);
        match conc.step(policy)? {
            Outcome::Blocked => {
                let mut probe = abs.clone();
                if probe.step(policy)? == Outcome::Blocked {
                    // Nothing else runs here, so a shared block is final.
                    return Ok(Verdict::pass(NAME, seed, step, true));
                }
                return fail(&mut tail, step, "blocking", "target blocked on a lock the source can take".into());
            }
            Outcome::Stopped => unreachable!("checked above"),
            Outcome::Progressed => {}
        }
        for i in 0..n {
            match abs.step(policy)? {
                Outcome::Progressed => {}
                Outcome::Stopped => {
                    return fail(
                        &mut tail,
                        step,
                        "pacing",
                        format!("source finished after {i} of {n} paced steps"),
                    )
                }
                Outcome::Blocked => {
                    return fail(&mut tail, step, "blocking", "source blocked while the target progressed".into())
                }
            }
        }

        if abs.mds != conc.mds || abs.mem != conc.mem {
            let detail = if abs.mds != conc.mds {
                format!("modes differ: source {} / target {}", abs.mds, conc.mds)
            } else {
                format!("memories differ: source {} / target {}", abs.mem, conc.mem)
            };
            tail.push(render(step + 1, &abs, &conc));
            return fail(&mut tail, step + 1, "modes-mem", detail);
        }
        if !config_consistent(compiled.rec_at(conc.pc), &conc.regs, &conc.mds, &conc.mem) {
            tail.push(render(step + 1, &abs, &conc));
            return fail(
                &mut tail,
                step + 1,
                "config-consistent",
                format!("registers or modes disagree with the record at pc {}: {}", conc.pc, compiled.rec_at(conc.pc)),
            );
        }
        if abs.stops() && !conc.stops() && !compiled.is_epilogue(conc.pc) {
            tail.push(render(step + 1, &abs, &conc));
            return fail(&mut tail, step + 1, "stopping", "source finished while the target has work left".into());
        }
    }
    Ok(Verdict::pass(NAME, seed, opts.max_steps, true))
}
