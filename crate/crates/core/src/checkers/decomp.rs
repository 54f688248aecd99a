//! Two-run checks over low-equivalent starting memories: equal stopping,
//! equal pacing, a coupling that survives lockstep execution, agreement on
//! branch conditions in the source.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{observable, CheckError, Failure, Pacing, Tail, Verdict, DEFAULT_MAX_STEPS};
use crate::compiler::Compiled;
use crate::lang::{truthy, Memory, ModeState, Value, Var};
use crate::locking::SemanticsError;
use crate::policy::Policy;
use crate::risc::{Program, RiscConfig};
use crate::while_lang::{Cmd, Outcome, WhileConfig};

/// Relation required between the two target configurations after every
/// lockstep step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Coupling {
    /// Same program, same program counter.
    #[default]
    Pc,
    /// Only what an observer can tell apart: stopping status, modes and
    /// low-equivalence. Suits hand-padded code whose branches line up
    /// instruction for instruction without sharing addresses.
    Lockstep,
}

#[derive(Clone, Debug)]
pub struct DecompOptions {
    pub max_steps: usize,
    pub pacing: Pacing,
    /// Chance per step of an environment write applied to both runs.
    pub probe_rate: f64,
    pub seed: u64,
}

impl Default for DecompOptions {
    fn default() -> Self {
        DecompOptions { max_steps: DEFAULT_MAX_STEPS, pacing: Pacing::Faithful, probe_rate: 0.1, seed: 0 }
    }
}

/// A change by another thread that keeps the two memories low-equivalent:
/// the same value where the variable is observable, possibly different
/// values where it is not.
fn probe(
    rng: &mut ChaCha8Rng,
    policy: &Policy,
    mds: &ModeState,
    m1: &Memory,
    m2: &Memory,
) -> Option<(Var, Value, Value)> {
    let cands: Vec<&Var> = policy.universe.iter().filter(|v| policy.env_may_write(mds, v)).collect();
    if cands.is_empty() {
        return None;
    }
    let v = cands[rng.gen_range(0..cands.len())].clone();
    let a: Value = rng.gen_range(-8..=8);
    let b: Value = rng.gen_range(-8..=8);
    for (x, y) in [(a, b), (a, a)] {
        let mut n1 = m1.clone();
        let mut n2 = m2.clone();
        n1.insert(v.clone(), x);
        n2.insert(v.clone(), y);
        if policy.low_mds_eq(mds, &n1, &n2) {
            return Some((v, x, y));
        }
    }
    None
}

fn render2(step: usize, c1: &RiscConfig, c2: &RiscConfig) -> String {
    let show = |c: &RiscConfig| c.current().map_or("<end>".to_string(), |i| i.to_string());
    format!("step {step}: pc {} [{}] | pc {} [{}]", c1.pc, show(c1), c2.pc, show(c2))
}

fn check_pairs(pairs: &[(Memory, Memory)], policy: &Policy, mds: &ModeState) -> Result<(), CheckError> {
    if pairs.is_empty() {
        return Err(CheckError::Precondition("no memory pairs to check".into()));
    }
    for (i, (a, b)) in pairs.iter().enumerate() {
        if !policy.low_mds_eq(mds, a, b) {
            return Err(CheckError::Precondition(format!("memory pair {i} is not low-equivalent")));
        }
    }
    Ok(())
}

/// Runs each pair of compiled configurations in lockstep next to their
/// source programs, checking equal stopping, equal pacing, equal program
/// counters and equal modes after every step.
pub fn check_decomp_side_conditions(
    compiled: &Compiled,
    src: &Cmd,
    policy: &Policy,
    mds: &ModeState,
    pairs: &[(Memory, Memory)],
    opts: &DecompOptions,
) -> Result<Verdict, CheckError> {
    const NAME: &str = "decomp";
    check_pairs(pairs, policy, mds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut total = 0;
    let mut inconclusive = false;
    for (pi, (m1, m2)) in pairs.iter().enumerate() {
        let mut a1 = WhileConfig::new(src.clone(), mds.clone(), m1.clone());
        let mut a2 = WhileConfig::new(src.clone(), mds.clone(), m2.clone());
        let prog = Arc::clone(&compiled.program);
        let mut c1 = RiscConfig::new(Arc::clone(&prog), compiled.nregs, mds.clone(), m1.clone());
        let mut c2 = RiscConfig::new(prog, compiled.nregs, mds.clone(), m2.clone());
        let mut tail = Tail::default();
        let fail = |tail: &mut Tail, step: usize, clause: &str, detail: String| {
            let f = Failure { clause: clause.into(), step, detail: format!("pair {pi}: {detail}"), trace: tail.take() };
            Ok(Verdict::fail(NAME, opts.seed, total + step, f))
        };
        let mut step = 0;
        loop {
            tail.push(render2(step, &c1, &c2));
            if c1.stops() != c2.stops() {
                return fail(&mut tail, step, "stopping", "one run finished, the other did not".into());
            }
            if c1.stops() {
                break;
            }
            if step == opts.max_steps {
                inconclusive = true;
                break;
            }
            if rng.gen_bool(opts.probe_rate) {
                if let Some((v, x, y)) = probe(&mut rng, policy, &c1.mds, &c1.mem, &c2.mem) {
                    for (m, val) in [(&mut c1.mem, x), (&mut a1.mem, x), (&mut c2.mem, y), (&mut a2.mem, y)] {
                        m.insert(v.clone(), val);
                    }
                    tail.push(format!("step {step}: environment writes {v} := {x} | {y}"));
                }
            }
            let n1 = opts.pacing.abs_steps(&a1.cmd, compiled, c1.pc);
            let n2 = opts.pacing.abs_steps(&a2.cmd, compiled, c2.pc);
            if n1 != n2 {
                return fail(&mut tail, step, "pacing", format!("source steps {n1} vs {n2}"));
            }
            let o1 = c1.step(policy)?;
            let o2 = c2.step(policy)?;
            if o1 != o2 {
                return fail(&mut tail, step, "blocking", "only one run blocked".into());
            }
            if o1 == Outcome::Blocked {
                inconclusive = true;
                break;
            }
            for _ in 0..n1 {
                // The source side only paces the pair; refinement itself is
                // checked elsewhere, so a source that cannot move is left be.
                let _ = a1.step(policy)?;
                let _ = a2.step(policy)?;
            }
            step += 1;
            if c1.pc != c2.pc {
                tail.push(render2(step, &c1, &c2));
                return fail(&mut tail, step, "coupling", format!("program counters diverge: {} vs {}", c1.pc, c2.pc));
            }
            if c1.mds != c2.mds {
                return fail(&mut tail, step, "modes", format!("{} vs {}", c1.mds, c2.mds));
            }
        }
        total += step;
    }
    Ok(Verdict::pass(NAME, opts.seed, total, inconclusive))
}

/// Lockstep check of a stand-alone target program.
pub fn check_timing(
    prog: Arc<Program>,
    nregs: usize,
    policy: &Policy,
    mds: &ModeState,
    pairs: &[(Memory, Memory)],
    coupling: Coupling,
    max_steps: usize,
) -> Result<Verdict, CheckError> {
    const NAME: &str = "timing";
    check_pairs(pairs, policy, mds)?;
    let mut total = 0;
    let mut inconclusive = false;
    for (pi, (m1, m2)) in pairs.iter().enumerate() {
        let mut c1 = RiscConfig::new(Arc::clone(&prog), nregs, mds.clone(), m1.clone());
        let mut c2 = RiscConfig::new(Arc::clone(&prog), nregs, mds.clone(), m2.clone());
        let mut tail = Tail::default();
        let fail = |tail: &mut Tail, step: usize, clause: &str, detail: String| {
            let f = Failure { clause: clause.into(), step, detail: format!("pair {pi}: {detail}"), trace: tail.take() };
            Ok(Verdict::fail(NAME, 0, total + step, f))
        };
        let mut step = 0;
        loop {
            tail.push(render2(step, &c1, &c2));
            if c1.stops() != c2.stops() {
                return fail(&mut tail, step, "stopping", "one run finished, the other did not".into());
            }
            if c1.stops() {
                break;
            }
            if step == max_steps {
                inconclusive = true;
                break;
            }
            let o1 = c1.step(policy)?;
            let o2 = c2.step(policy)?;
            if o1 != o2 {
                return fail(&mut tail, step, "blocking", "only one run blocked".into());
            }
            if o1 == Outcome::Blocked {
                inconclusive = true;
                break;
            }
            step += 1;
            match coupling {
                Coupling::Pc if c1.pc != c2.pc => {
                    tail.push(render2(step, &c1, &c2));
                    return fail(
                        &mut tail,
                        step,
                        "coupling",
                        format!("program counters diverge: {} vs {}", c1.pc, c2.pc),
                    );
                }
                Coupling::Lockstep if !policy.low_mds_eq(&c1.mds, &c1.mem, &c2.mem) => {
                    return fail(&mut tail, step, "low-equivalence", format!("{} vs {}", c1.mem, c2.mem));
                }
                _ => {}
            }
            if c1.mds != c2.mds {
                return fail(&mut tail, step, "modes", format!("{} vs {}", c1.mds, c2.mds));
            }
        }
        total += step;
    }
    Ok(Verdict::pass(NAME, 0, total, inconclusive))
}

/// Runs the source program from each pair in lockstep: the commands must
/// stay identical and every conditional must go the same way in both runs.
pub fn check_no_high_branching(
    src: &Cmd,
    policy: &Policy,
    mds: &ModeState,
    pairs: &[(Memory, Memory)],
    max_steps: usize,
) -> Result<Verdict, CheckError> {
    const NAME: &str = "high-branching";
    check_pairs(pairs, policy, mds)?;
    let mut total = 0;
    let mut inconclusive = false;
    for (pi, (m1, m2)) in pairs.iter().enumerate() {
        let mut a1 = WhileConfig::new(src.clone(), mds.clone(), m1.clone());
        let mut a2 = WhileConfig::new(src.clone(), mds.clone(), m2.clone());
        let mut tail = Tail::default();
        let fail = |tail: &mut Tail, step: usize, clause: &str, detail: String| {
            let f = Failure { clause: clause.into(), step, detail: format!("pair {pi}: {detail}"), trace: tail.take() };
            Ok(Verdict::fail(NAME, 0, total + step, f))
        };
        let mut step = 0;
        loop {
            let left = format!("{:?}", a1.cmd.leftmost());
            tail.push(format!("step {step}: {}", left.chars().take(80).collect::<String>()));
            if a1.cmd != a2.cmd {
                return fail(&mut tail, step, "command-equality", "the two runs are at different commands".into());
            }
            if a1.stops() {
                break;
            }
            if step == max_steps {
                inconclusive = true;
                break;
            }
            if let Cmd::If(e, _, _) = a1.cmd.leftmost() {
                let b1 = truthy(e.eval(&a1.mem).map_err(SemanticsError::from)?);
                let b2 = truthy(e.eval(&a2.mem).map_err(SemanticsError::from)?);
                if b1 != b2 {
                    let hidden: Vec<String> = e
                        .vars()
                        .into_iter()
                        .filter(|v| !observable(policy, &a1.mds, &a1.mem, v))
                        .map(|v| v.to_string())
                        .collect();
                    return fail(
                        &mut tail,
                        step,
                        "branch-agreement",
                        format!("condition {e} differs between runs (unobservable inputs: {})", hidden.join(", ")),
                    );
                }
            }
            let o1 = a1.step(policy)?;
            let o2 = a2.step(policy)?;
            if o1 != o2 {
                return fail(&mut tail, step, "blocking", "only one run blocked".into());
            }
            if o1 == Outcome::Blocked {
                inconclusive = true;
                break;
            }
            step += 1;
        }
        total += step;
    }
    Ok(Verdict::pass(NAME, 0, total, inconclusive))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkers::MemPairGen;
    use crate::compiler::Compiler;
    use crate::syntax::{parse_asm, parse_program};

    fn policy() -> Policy {
        Policy::from_toml_str(
            r#"
            [vars]
            universe = ["h", "l", "x"]
            [locks.k]
            no_write = ["h", "l"]
            [classification]
            high = ["h", "x"]
            "#,
        )
        .unwrap()
    }

    fn pairs(p: &Policy, n: usize) -> Vec<(Memory, Memory)> {
        MemPairGen::new(p, p.initial_mds(), 11).pairs(n)
    }

    #[test]
    fn low_branching_program_passes() {
        let p = policy();
        let src = parse_program("acquire k; if l { x := h; } else { skip; } x := (h + 1); release k;").unwrap();
        let compiled = Compiler::new(&p).compile(&src).unwrap();
        let ps = pairs(&p, 50);
        let v = check_no_high_branching(&src, &p, &p.initial_mds(), &ps, 1000).unwrap();
        assert!(v.passed(), "{}", v.dump());
        let v = check_decomp_side_conditions(&compiled, &src, &p, &p.initial_mds(), &ps, &DecompOptions::default())
            .unwrap();
        assert!(v.passed(), "{}", v.dump());
        assert!(!v.inconclusive);
    }

    #[test]
    fn high_branching_is_caught() {
        let p = policy();
        let src = parse_program("acquire k; if (h != 0) { x := 1; } else { x := 2; skip; } release k;").unwrap();
        let ps = pairs(&p, 50);
        let v = check_no_high_branching(&src, &p, &p.initial_mds(), &ps, 1000).unwrap();
        assert_eq!(v.clause(), Some("branch-agreement"));
        let compiled = Compiler::new(&p).compile(&src).unwrap();
        let v = check_decomp_side_conditions(&compiled, &src, &p, &p.initial_mds(), &ps, &DecompOptions::default())
            .unwrap();
        assert!(!v.passed());
    }

    #[test]
    fn identical_memories_pass_trivially() {
        let p = policy();
        let src = parse_program("acquire k; if (h != 0) { x := 1; } else { skip; } release k;").unwrap();
        let m = p.zero_memory();
        let v = check_no_high_branching(&src, &p, &p.initial_mds(), &[(m.clone(), m)], 100).unwrap();
        assert!(v.passed());
    }

    #[test]
    fn raw_timing_couplings() {
        let p = policy();
        let leaky = parse_asm("LOAD r0 h\nJZ L1 r0\nNOP\nL1: NOP\n").unwrap();
        let ps = pairs(&p, 30);
        let v = check_timing(Arc::new(leaky.clone()), 4, &p, &p.initial_mds(), &ps, Coupling::Pc, 100).unwrap();
        assert_eq!(v.clause(), Some("coupling"));
        let v = check_timing(Arc::new(leaky), 4, &p, &p.initial_mds(), &ps, Coupling::Lockstep, 100).unwrap();
        assert_eq!(v.clause(), Some("stopping"));
        let padded = parse_asm("LOAD r0 h\nJZ L1 r0\nNOP\nJMP L2\nL1: NOP\nNOP\n.exit L2\n").unwrap();
        let v = check_timing(Arc::new(padded), 4, &p, &p.initial_mds(), &ps, Coupling::Lockstep, 100).unwrap();
        assert!(v.passed(), "{}", v.dump());
    }

    #[test]
    fn unequal_pairs_are_rejected() {
        let p = policy();
        let a = p.zero_memory();
        let mut b = a.clone();
        b.insert(Var::new("l"), 1);
        let src = parse_program("skip;").unwrap();
        assert!(check_no_high_branching(&src, &p, &p.initial_mds(), &[(a, b)], 10).is_err());
    }
}
