//! Reference implementations the library is checked against. Written
//! directly from the definitions, favouring obviousness over speed.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use wrc_core::lang::{BinOp, Expr, Memory, ModeState, Value, Var};
use wrc_core::policy::{Level, Policy};
use wrc_core::while_lang::{Cmd, Outcome, WhileConfig};

/// Expression value with two's-complement wrap-around and 0/1 booleans.
pub fn oracle_eval(e: &Expr, env: &BTreeMap<Var, Value>) -> Value {
    match e {
        Expr::Const(n) => *n,
        Expr::Var(v) => env[v],
        Expr::BinOp(op, a, b) => {
            let (x, y) = (oracle_eval(a, env), oracle_eval(b, env));
            match op {
                BinOp::Add => x.wrapping_add(y),
                BinOp::Sub => x.wrapping_sub(y),
                BinOp::Mul => x.wrapping_mul(y),
                BinOp::Eq => (x == y) as Value,
                BinOp::Ne => (x != y) as Value,
                BinOp::Lt => (x < y) as Value,
                BinOp::And => (x != 0 && y != 0) as Value,
                BinOp::Or => (x != 0 || y != 0) as Value,
            }
        }
    }
}

/// Every assignment of `domain` values to the program variables, locks 0.
pub fn memories(policy: &Policy, domain: &[Value]) -> Vec<Memory> {
    let vars: Vec<&Var> = policy.universe.iter().collect();
    let total = domain.len().pow(vars.len() as u32);
    (0..total)
        .map(|mut code| {
            let mut m = policy.zero_memory();
            for v in &vars {
                m.insert((*v).clone(), domain[code % domain.len()]);
                code /= domain.len();
            }
            m
        })
        .collect()
}

/// Low-equivalence modulo modes, straight from its definition.
pub fn oracle_low_eq(policy: &Policy, mds: &ModeState, m1: &Memory, m2: &Memory) -> bool {
    let controls: BTreeSet<Var> = policy.classification.dependent.iter().map(|d| d.control.clone()).collect();
    policy.universe.iter().all(|x| {
        let must_match = controls.contains(x) || (mds.readable(x) && policy.classify(m1, x).unwrap() == Level::Low);
        !must_match || m1.get(x) == m2.get(x)
    }) && policy.locks.keys().all(|k| m1.get(k) == m2.get(k))
}

fn step(policy: &Policy, c: &WhileConfig) -> Option<WhileConfig> {
    let mut c = c.clone();
    (c.step(policy).unwrap() == Outcome::Progressed).then_some(c)
}

/// Memories another thread may leave behind: only writable program
/// variables change, and nothing that is not writable changes class.
fn env_changes(policy: &Policy, domain: &[Value], mds: &ModeState, mem: &Memory) -> Vec<Memory> {
    memories(policy, domain)
        .into_iter()
        .map(|cand| {
            let mut m = mem.clone();
            for v in &policy.universe {
                m.insert(v.clone(), cand.get(v).unwrap());
            }
            m
        })
        .filter(|m| {
            policy.universe.iter().all(|x| {
                mds.writable(x)
                    || (m.get(x) == mem.get(x) && policy.classify(m, x).unwrap() == policy.classify(mem, x).unwrap())
            })
        })
        .collect()
}

/// Reachable part of the largest strong low-bisimulation modulo modes over
/// all pairs of reachable configurations, computed by naive iteration over
/// the whole pair space.
pub fn oracle_bisim(
    src: &Cmd,
    policy: &Policy,
    domain: &[Value],
    mds: &ModeState,
) -> (BTreeSet<(WhileConfig, WhileConfig)>, bool) {
    // Reachable configurations.
    let init: Vec<WhileConfig> =
        memories(policy, domain).into_iter().map(|m| WhileConfig::new(src.clone(), mds.clone(), m)).collect();
    let mut states: BTreeSet<WhileConfig> = init.iter().cloned().collect();
    let mut todo: VecDeque<WhileConfig> = init.iter().cloned().collect();
    while let Some(c) = todo.pop_front() {
        let mut next: Vec<WhileConfig> = step(policy, &c).into_iter().collect();
        for m in env_changes(policy, domain, &c.mds, &c.mem) {
            next.push(WhileConfig::new(c.cmd.clone(), c.mds.clone(), m));
        }
        for n in next {
            if states.insert(n.clone()) {
                todo.push_back(n);
            }
        }
    }
    let states: Vec<WhileConfig> = states.into_iter().collect();

    // All pairs, then remove until nothing changes.
    let mut rel: BTreeSet<(WhileConfig, WhileConfig)> = BTreeSet::new();
    for a in &states {
        for b in &states {
            rel.insert((a.clone(), b.clone()));
        }
    }
    loop {
        let bad: Vec<(WhileConfig, WhileConfig)> = rel
            .iter()
            .filter(|(a, b)| {
                if !rel.contains(&(b.clone(), a.clone())) {
                    return true;
                }
                if a.mds != b.mds {
                    return false;
                }
                if !oracle_low_eq(policy, &a.mds, &a.mem, &b.mem) {
                    return true;
                }
                let sa = step(policy, a);
                let sb = step(policy, b);
                let steps_ok = match (&sa, &sb) {
                    (Some(x), Some(y)) => x.mds == y.mds && rel.contains(&(x.clone(), y.clone())),
                    (Some(_), None) | (None, Some(_)) => false,
                    (None, None) => true,
                };
                if !steps_ok {
                    return true;
                }
                for m1 in env_changes(policy, domain, &a.mds, &a.mem) {
                    for m2 in env_changes(policy, domain, &b.mds, &b.mem) {
                        if oracle_low_eq(policy, &a.mds, &m1, &m2) {
                            let x = WhileConfig::new(a.cmd.clone(), a.mds.clone(), m1.clone());
                            let y = WhileConfig::new(b.cmd.clone(), b.mds.clone(), m2);
                            if !rel.contains(&(x, y)) {
                                return true;
                            }
                        }
                    }
                }
                false
            })
            .cloned()
            .collect();
        if bad.is_empty() {
            break;
        }
        for p in bad {
            rel.remove(&p);
        }
    }

    // Keep what the initial low-equivalent pairs reach.
    let mut initial = Vec::new();
    for a in &init {
        for b in &init {
            if oracle_low_eq(policy, mds, &a.mem, &b.mem) {
                initial.push((a.clone(), b.clone()));
            }
        }
    }
    let all_initial_kept = initial.iter().all(|p| rel.contains(p));
    let mut reached: BTreeSet<(WhileConfig, WhileConfig)> = BTreeSet::new();
    let mut todo: VecDeque<(WhileConfig, WhileConfig)> = initial.into_iter().filter(|p| rel.contains(p)).collect();
    while let Some((a, b)) = todo.pop_front() {
        if !reached.insert((a.clone(), b.clone())) {
            continue;
        }
        let mut next = vec![(b.clone(), a.clone())];
        if a.mds == b.mds {
            if let (Some(x), Some(y)) = (step(policy, &a), step(policy, &b)) {
                next.push((x, y));
            }
            for m1 in env_changes(policy, domain, &a.mds, &a.mem) {
                for m2 in env_changes(policy, domain, &b.mds, &b.mem) {
                    if oracle_low_eq(policy, &a.mds, &m1, &m2) {
                        next.push((
                            WhileConfig::new(a.cmd.clone(), a.mds.clone(), m1.clone()),
                            WhileConfig::new(b.cmd.clone(), b.mds.clone(), m2),
                        ));
                    }
                }
            }
        }
        todo.extend(next.into_iter().filter(|p| rel.contains(p) && !reached.contains(p)));
    }
    (reached, all_initial_kept)
}
