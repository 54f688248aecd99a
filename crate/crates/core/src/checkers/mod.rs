//! Dynamic checks of the refinement and security obligations.
//!
//! Every check runs concrete executions and returns a [`Verdict`]. A failing
//! verdict names the violated clause, the step at which it was observed and
//! the tail of the paired trace leading there. All randomness is seeded, so
//! re-running a check reproduces its verdict exactly.

pub mod bisim;
pub mod cube;
pub mod decomp;
pub mod refinement;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::compiler::Compiled;
use crate::lang::{Memory, ModeState, Value, Var};
use crate::locking::SemanticsError;
use crate::policy::{Level, Policy};
use crate::risc::Op;
use crate::while_lang::Cmd;

pub use bisim::{build_bounded_bisim, BisimOutcome, BoundedRelation};
pub use cube::{build_refinement_relation, check_cube, RefinementRelation};
pub use decomp::{check_decomp_side_conditions, check_no_high_branching, check_timing, Coupling, DecompOptions};
pub use refinement::{check_refinement_run, Interference, RefinementOptions};

pub const DEFAULT_MAX_STEPS: usize = 100_000;

/// Why a check could not be carried out at all. Distinct from a failing
/// verdict.
#[derive(Debug, Error)]
pub enum CheckError {
    #[error("precondition: {0}")]
    Precondition(String),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("state space exceeds the bound of {0} states")]
    Bound(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Failure {
    pub clause: String,
    pub step: usize,
    pub detail: String,
    /// Most recent states first-to-last, one rendered line each.
    pub trace: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub check: String,
    pub seed: u64,
    pub steps: usize,
    /// Passed only because the step budget ran out before the programs
    /// finished.
    pub inconclusive: bool,
    pub failure: Option<Failure>,
}

impl Verdict {
    pub fn pass(check: &str, seed: u64, steps: usize, inconclusive: bool) -> Self {
        Verdict { check: check.into(), seed, steps, inconclusive, failure: None }
    }

    pub fn fail(check: &str, seed: u64, steps: usize, failure: Failure) -> Self {
        Verdict { check: check.into(), seed, steps, inconclusive: false, failure: Some(failure) }
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn clause(&self) -> Option<&str> {
        self.failure.as_ref().map(|f| f.clause.as_str())
    }

    /// `PASS|FAIL check-name seed=N steps=K [clause=<name> at step=J]`
    pub fn report(&self) -> String {
        match &self.failure {
            None => {
                let note = if self.inconclusive { " (inconclusive: step budget exhausted)" } else { "" };
                format!("PASS {} seed={} steps={}{note}", self.check, self.seed, self.steps)
            }
            Some(f) => format!(
                "FAIL {} seed={} steps={} clause={} at step={}",
                self.check, self.seed, self.steps, f.clause, f.step
            ),
        }
    }

    /// The report line followed by the failure detail and trace, if any.
    pub fn dump(&self) -> String {
        let mut out = self.report();
        if let Some(f) = &self.failure {
            out.push_str(&format!("\n  {}", f.detail));
            for line in &f.trace {
                out.push_str(&format!("\n  | {line}"));
            }
        }
        out
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.report())
    }
}

/// Bounded history of rendered states for counterexamples.
#[derive(Debug, Default)]
pub(crate) struct Tail {
    lines: VecDeque<String>,
}

impl Tail {
    const KEEP: usize = 24;

    pub(crate) fn push(&mut self, line: String) {
        if self.lines.len() == Self::KEEP {
            self.lines.pop_front();
        }
        self.lines.push_back(line);
    }

    pub(crate) fn take(&mut self) -> Vec<String> {
        self.lines.drain(..).collect()
    }
}

/// How many source steps correspond to one target step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Pacing {
    #[default]
    Faithful,
    /// Deliberately wrong: epilogue jumps and no-ops are paced like any
    /// other instruction. Used to exercise the checkers.
    EpilogueAsOne,
}

impl Pacing {
    /// Source steps matching the target instruction at `pc`. Past the end of
    /// the program nothing is left to match.
    pub fn abs_steps(self, abs: &Cmd, compiled: &Compiled, pc: usize) -> usize {
        let Some(ins) = compiled.program.get(pc) else {
            return 0;
        };
        match ins.op {
            Op::Load(..) | Op::Arith(..) | Op::MoveK(..) => usize::from(matches!(abs.leftmost(), Cmd::While(..))),
            Op::Jmp(_) | Op::Nop if compiled.is_epilogue(pc) => match self {
                Pacing::Faithful => 0,
                Pacing::EpilogueAsOne => 1,
            },
            _ => 1,
        }
    }
}

/// Whether memory `x` is part of what an observer sees under `mds` and `mem`.
pub(crate) fn observable(policy: &Policy, mds: &ModeState, mem: &Memory, x: &Var) -> bool {
    policy.is_lock(x)
        || policy.control_vars().contains(x)
        || (mds.readable(x) && policy.classify(mem, x).ok() == Some(Level::Low))
}

/// Seeded source of low-equivalent memory pairs.
pub struct MemPairGen<'p> {
    policy: &'p Policy,
    mds: ModeState,
    lo: Value,
    hi: Value,
    pinned: BTreeMap<Var, Value>,
    rng: ChaCha8Rng,
}

impl<'p> MemPairGen<'p> {
    pub fn new(policy: &'p Policy, mds: ModeState, seed: u64) -> Self {
        MemPairGen { policy, mds, lo: -8, hi: 8, pinned: BTreeMap::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn range(mut self, lo: Value, hi: Value) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }

    /// Fixes `v` to `val` in both memories.
    pub fn pin(mut self, v: Var, val: Value) -> Result<Self, CheckError> {
        if !self.policy.universe.contains(&v) {
            return Err(CheckError::Precondition(format!("cannot pin undeclared variable `{v}`")));
        }
        self.pinned.insert(v, val);
        Ok(self)
    }

    pub fn next_pair(&mut self) -> (Memory, Memory) {
        let mut m1 = self.policy.zero_memory();
        for v in &self.policy.universe {
            let val = match self.pinned.get(v) {
                Some(x) => *x,
                None => self.rng.gen_range(self.lo..=self.hi),
            };
            m1.insert(v.clone(), val);
        }
        let mut m2 = m1.clone();
        for v in &self.policy.universe {
            if !self.pinned.contains_key(v) && !observable(self.policy, &self.mds, &m1, v) {
                m2.insert(v.clone(), self.rng.gen_range(self.lo..=self.hi));
            }
        }
        debug_assert!(self.policy.low_mds_eq(&self.mds, &m1, &m2));
        (m1, m2)
    }

    pub fn pairs(&mut self, n: usize) -> Vec<(Memory, Memory)> {
        (0..n).map(|_| self.next_pair()).collect()
    }
}

/// Every memory over `domain` for the program variables, locks free.
pub fn all_memories(policy: &Policy, domain: &[Value]) -> Vec<Memory> {
    let mut out = vec![policy.zero_memory()];
    for v in &policy.universe {
        out = out
            .into_iter()
            .flat_map(|m| {
                domain.iter().map(move |d| {
                    let mut m = m.clone();
                    m.insert(v.clone(), *d);
                    m
                })
            })
            .collect();
    }
    out
}

/// Every low-equivalent pair of memories over `domain`.
pub fn all_low_eq_pairs(policy: &Policy, mds: &ModeState, domain: &[Value]) -> Vec<(Memory, Memory)> {
    let mems = all_memories(policy, domain);
    let mut out = Vec::new();
    for a in &mems {
        for b in &mems {
            if policy.low_mds_eq(mds, a, b) {
                out.push((a.clone(), b.clone()));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy() -> Policy {
        Policy::from_toml_str(
            r#"
            [vars]
            universe = ["source", "domain", "low", "high"]
            [locks.k]
            no_write = ["source", "domain"]
            [classification]
            high = ["high"]
            [[classification.dependent]]
            var = "source"
            control = "domain"
            low_when = 0
            "#,
        )
        .unwrap()
    }

    #[test]
    fn generated_pairs_are_low_equivalent() {
        let p = policy();
        let mds = p.initial_mds();
        let mut g = MemPairGen::new(&p, mds.clone(), 3);
        let mut varied = false;
        for (a, b) in g.pairs(200) {
            assert!(p.low_mds_eq(&mds, &a, &b));
            varied |= a != b;
        }
        assert!(varied);
    }

    #[test]
    fn pinned_values_hold() {
        let p = policy();
        let mut g = MemPairGen::new(&p, p.initial_mds(), 1).pin(Var::new("domain"), 1).unwrap();
        for (a, b) in g.pairs(20) {
            assert_eq!(a.get(&Var::new("domain")), Some(1));
            assert_eq!(b.get(&Var::new("domain")), Some(1));
        }
        assert!(MemPairGen::new(&p, p.initial_mds(), 1).pin(Var::new("nope"), 1).is_err());
    }

    #[test]
    fn exhaustive_pairs_match_filter() {
        let p = policy();
        let mds = p.initial_mds();
        let mems = all_memories(&p, &[0, 1]);
        assert_eq!(mems.len(), 16);
        let pairs = all_low_eq_pairs(&p, &mds, &[0, 1]);
        let brute = mems
            .iter()
            .flat_map(|a| mems.iter().map(move |b| (a, b)))
            .filter(|(a, b)| {
                let s = Var::new("source");
                a.get(&Var::new("domain")) == b.get(&Var::new("domain"))
                    && a.get(&Var::new("low")) == b.get(&Var::new("low"))
                    && (a.get(&Var::new("domain")) != Some(0) || a.get(&s) == b.get(&s))
            })
            .count();
        assert_eq!(pairs.len(), brute);
    }

    #[test]
    fn report_format() {
        let v = Verdict::pass("refinement", 7, 12, false);
        assert_eq!(v.report(), "PASS refinement seed=7 steps=12");
        let f = Failure { clause: "coupling".into(), step: 3, detail: String::new(), trace: vec![] };
        let v = Verdict::fail("timing", 1, 4, f);
        assert_eq!(v.report(), "FAIL timing seed=1 steps=4 clause=coupling at step=3");
    }
}
