//! Direct check of the two-sided refinement diagram over a tiny domain,
//! for cross-validating the decomposed checks.
//!
//! The refinement relation is taken extensionally: every pair of source and
//! target configurations co-reached by the paced co-execution, from every
//! memory over the domain, under every permitted environment write. The
//! coupling relates target configurations at the same program counter.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use super::bisim::render_config;
use super::{all_memories, BoundedRelation, CheckError, Failure, Pacing, Verdict};
use crate::compiler::Compiled;
use crate::lang::{ModeState, Value};
use crate::policy::Policy;
use crate::risc::RiscConfig;
use crate::while_lang::{Cmd, Outcome, WhileConfig};

/// Co-reached (source, target) configuration pairs.
#[derive(Clone, Debug, Default)]
pub struct RefinementRelation {
    pub pairs: Vec<(WhileConfig, RiscConfig)>,
    set: HashSet<(WhileConfig, RiscConfig)>,
    pub pacing: Pacing,
}

impl RefinementRelation {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: &WhileConfig, c: &RiscConfig) -> bool {
        self.set.contains(&(a.clone(), c.clone()))
    }

    fn insert(&mut self, a: WhileConfig, c: RiscConfig) -> bool {
        if self.set.insert((a.clone(), c.clone())) {
            self.pairs.push((a, c));
            true
        } else {
            false
        }
    }
}

fn step_abs(policy: &Policy, a: &WhileConfig, n: usize) -> Result<Option<WhileConfig>, CheckError> {
    let mut a = a.clone();
    Ok((a.step_n(policy, n)? == n).then_some(a))
}

fn step_conc(policy: &Policy, c: &RiscConfig) -> Result<Option<RiscConfig>, CheckError> {
    let mut c = c.clone();
    Ok((c.step(policy)? == Outcome::Progressed).then_some(c))
}

/// Explores the paced co-execution of `compiled` against `src` from every
/// memory over `domain`, closing under environment writes of domain values
/// to variables others may write.
pub fn build_refinement_relation(
    compiled: &Compiled,
    src: &Cmd,
    policy: &Policy,
    mds: &ModeState,
    domain: &[Value],
    pacing: Pacing,
    bound: usize,
) -> Result<RefinementRelation, CheckError> {
    let mut rel = RefinementRelation { pacing, ..Default::default() };
    let mut queue = VecDeque::new();
    for m in all_memories(policy, domain) {
        let a = WhileConfig::new(src.clone(), mds.clone(), m.clone());
        let c = RiscConfig::new(Arc::clone(&compiled.program), compiled.nregs, mds.clone(), m);
        if rel.insert(a.clone(), c.clone()) {
            queue.push_back((a, c));
        }
    }
    while let Some((a, c)) = queue.pop_front() {
        if rel.len() > bound {
            return Err(CheckError::Bound(bound));
        }
        let mut next = Vec::new();
        if a.mds == c.mds && a.mem == c.mem {
            for x in policy.universe.iter().filter(|x| policy.env_may_write(&c.mds, x)) {
                for d in domain {
                    let (mut a2, mut c2) = (a.clone(), c.clone());
                    a2.mem.insert(x.clone(), *d);
                    c2.mem.insert(x.clone(), *d);
                    next.push((a2, c2));
                }
            }
        }
        if let Some(c2) = step_conc(policy, &c)? {
            let n = pacing.abs_steps(&a.cmd, compiled, c.pc);
            if let Some(a2) = step_abs(policy, &a, n)? {
                next.push((a2, c2));
            }
        }
        for (a2, c2) in next {
            if rel.insert(a2.clone(), c2.clone()) {
                queue.push_back((a2, c2));
            }
        }
    }
    Ok(rel)
}

fn render(a: &WhileConfig, c: &RiscConfig) -> String {
    let ins = c.current().map_or("<end>".to_string(), |i| i.to_string());
    format!("{} ~ pc {} [{}] regs {:?}", render_config(a), c.pc, ins, c.regs)
}

/// Checks that `r` keeps modes and memory equal, then checks the cube
/// clause for every pair in `r` whose target side can step: some number of
/// source steps must re-establish `r` on this side, and for every partner
/// related by `b` on the source side and by the coupling on the target side,
/// the same number of steps must re-establish `r` and the coupling there.
pub fn check_cube(b: &BoundedRelation, r: &RefinementRelation, policy: &Policy) -> Result<Verdict, CheckError> {
    const NAME: &str = "cube";
    const MAX_N: usize = 3;
    for (k, (a, c)) in r.pairs.iter().enumerate() {
        if a.mds != c.mds || a.mem != c.mem {
            let f = Failure {
                clause: "modes-mem".into(),
                step: k,
                detail: format!("source {} {} vs target {} {}", a.mem, a.mds, c.mem, c.mds),
                trace: vec![render(a, c)],
            };
            return Ok(Verdict::fail(NAME, 0, k, f));
        }
    }
    let mut by_pc: HashMap<usize, Vec<usize>> = HashMap::new();
    for (k, (_, c)) in r.pairs.iter().enumerate() {
        by_pc.entry(c.pc).or_default().push(k);
    }
    let mut checked = 0;
    for (a1, c1) in &r.pairs {
        let Some(c1n) = step_conc(policy, c1)? else { continue };
        let partners: Vec<&(WhileConfig, RiscConfig)> = by_pc[&c1.pc]
            .iter()
            .map(|&k| &r.pairs[k])
            .filter(|(a2, c2)| a2.mds == a1.mds && c2.mds == c1.mds && b.contains(a1, a2))
            .collect();
        let mut last_gap = None;
        let mut ok = false;
        for n in 0..=MAX_N {
            let Some(a1n) = step_abs(policy, a1, n)? else { continue };
            if !r.contains(&a1n, &c1n) {
                continue;
            }
            let mut gap = None;
            for (a2, c2) in &partners {
                checked += 1;
                let Some(a2n) = step_abs(policy, a2, n)? else { continue };
                if a2n.mds != a1n.mds {
                    continue;
                }
                let holds = match step_conc(policy, c2)? {
                    Some(c2n) => c2n.mds == c1n.mds && c2n.pc == c1n.pc && r.contains(&a2n, &c2n),
                    None => false,
                };
                if !holds {
                    gap = Some(format!("partner {}", render(a2, c2)));
                    break;
                }
            }
            match gap {
                None => {
                    ok = true;
                    break;
                }
                Some(g) => last_gap = Some((n, g)),
            }
        }
        if !ok {
            let detail = match last_gap {
                Some((n, g)) => format!("with {n} source step(s) the diagram does not close for {g}"),
                None => format!("no number of source steps up to {MAX_N} re-establishes the refinement"),
            };
            let f = Failure { clause: "cube".into(), step: checked, detail, trace: vec![render(a1, c1)] };
            return Ok(Verdict::fail(NAME, 0, checked, f));
        }
    }
    Ok(Verdict::pass(NAME, 0, checked, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkers::build_bounded_bisim;
    use crate::compiler::Compiler;
    use crate::syntax::parse_program;

    fn policy() -> Policy {
        Policy::from_toml_str(
            r#"
            [vars]
            universe = ["x", "y", "h"]
            [locks.k]
            no_write = ["x", "y", "h"]
            [classification]
            high = ["h"]
            "#,
        )
        .unwrap()
    }

    fn run(text: &str, pacing: Pacing) -> Verdict {
        let p = policy();
        let src = parse_program(text).unwrap();
        let compiled = Compiler::new(&p).compile(&src).unwrap();
        let mds = p.initial_mds();
        let b = build_bounded_bisim(&src, &p, &[0, 1], &mds, 1_000_000).unwrap();
        assert!(b.is_secure(), "{}", b.verdict().dump());
        let r = build_refinement_relation(&compiled, &src, &p, &mds, &[0, 1], pacing, 1_000_000).unwrap();
        check_cube(b.relation(), &r, &p).unwrap()
    }

    #[test]
    fn faithful_pacing_closes_the_cube() {
        let v = run("acquire k; if x { y := (x && y); } else { skip; } y := (y || x); release k;", Pacing::Faithful);
        assert!(v.passed(), "{}", v.dump());
    }

    #[test]
    fn epilogue_pacing_breaks_it() {
        let v = run("acquire k; if x { y := (x && y); } else { skip; } y := (y || x); release k;", Pacing::EpilogueAsOne);
        assert!(!v.passed());
    }

    #[test]
    fn loops_close_too() {
        let v = run("acquire k; while x { x := 0; y := 1; } release k;", Pacing::Faithful);
        assert!(v.passed(), "{}", v.dump());
    }
}
