//! Explicit-state construction of a strong low-bisimulation modulo modes
//! over a finite value domain.
//!
//! The candidate set is every pair reachable from the low-equivalent initial
//! pairs by stepping both sides, by swapping, and by globally consistent
//! changes to writable variables. Pairs that break a local clause are
//! removed, and removal propagates backwards to every pair that needed the
//! removed one. What is left is the largest bisimulation inside the
//! candidate set.

use std::collections::{BTreeSet, HashMap, VecDeque};

use super::{all_memories, CheckError, Failure, Verdict};
use crate::lang::{Memory, ModeState, Value, Var};
use crate::policy::Policy;
use crate::while_lang::{Cmd, Outcome, WhileConfig};

/// A finite, symmetric relation on source configurations.
#[derive(Clone, Debug, Default)]
pub struct BoundedRelation {
    states: Vec<WhileConfig>,
    pairs: BTreeSet<(usize, usize)>,
    index: HashMap<WhileConfig, usize>,
}

impl BoundedRelation {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: &WhileConfig, b: &WhileConfig) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => self.pairs.contains(&(i, j)),
            _ => false,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&WhileConfig, &WhileConfig)> {
        self.pairs.iter().map(|&(i, j)| (&self.states[i], &self.states[j]))
    }

    /// Every configuration related to `a`.
    pub fn partners<'s>(&'s self, a: &WhileConfig) -> impl Iterator<Item = &'s WhileConfig> + 's {
        let i = self.index.get(a).copied();
        self.pairs
            .range((i.unwrap_or(usize::MAX), 0)..)
            .take_while(move |(x, _)| Some(*x) == i)
            .map(|&(_, j)| &self.states[j])
    }

    pub fn to_set(&self) -> BTreeSet<(WhileConfig, WhileConfig)> {
        self.iter().map(|(a, b)| (a.clone(), b.clone())).collect()
    }
}

#[derive(Clone, Debug)]
pub enum BisimOutcome {
    /// Every initial pair survived.
    Secure(BoundedRelation),
    /// Some initial pair had to be removed. `surviving` is what is left.
    Insecure { witness: (WhileConfig, WhileConfig), failure: Failure, surviving: BoundedRelation },
}

impl BisimOutcome {
    pub fn is_secure(&self) -> bool {
        matches!(self, BisimOutcome::Secure(_))
    }

    pub fn relation(&self) -> &BoundedRelation {
        match self {
            BisimOutcome::Secure(r) => r,
            BisimOutcome::Insecure { surviving, .. } => surviving,
        }
    }

    pub fn verdict(&self) -> Verdict {
        match self {
            BisimOutcome::Secure(r) => Verdict::pass("bisim", 0, r.len(), false),
            BisimOutcome::Insecure { failure, surviving, .. } => {
                Verdict::fail("bisim", 0, surviving.len(), failure.clone())
            }
        }
    }
}

/// One-line rendering of a configuration: leftmost command, memory, modes.
pub(crate) fn render_config(c: &WhileConfig) -> String {
    let cmd: String = c.cmd.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
    let cmd = if cmd.chars().count() > 60 { format!("{}...", cmd.chars().take(57).collect::<String>()) } else { cmd };
    format!("<{cmd}> {} {}", c.mem, c.mds)
}

enum Why {
    Local(&'static str, String),
    Needs(usize, &'static str),
}

struct Builder<'p> {
    policy: &'p Policy,
    domain: Vec<Value>,
    bound: usize,
    states: Vec<WhileConfig>,
    index: HashMap<WhileConfig, usize>,
    succ: Vec<Option<Option<usize>>>,
    pairs: Vec<(usize, usize)>,
    pair_index: HashMap<(usize, usize), usize>,
    queue: VecDeque<usize>,
}

impl<'p> Builder<'p> {
    fn state(&mut self, c: WhileConfig) -> usize {
        if let Some(&i) = self.index.get(&c) {
            return i;
        }
        let i = self.states.len();
        self.index.insert(c.clone(), i);
        self.states.push(c);
        self.succ.push(None);
        i
    }

    fn pair(&mut self, a: usize, b: usize) -> Result<usize, CheckError> {
        if let Some(&p) = self.pair_index.get(&(a, b)) {
            return Ok(p);
        }
        if self.pairs.len() >= self.bound {
            return Err(CheckError::Bound(self.bound));
        }
        let p = self.pairs.len();
        self.pairs.push((a, b));
        self.pair_index.insert((a, b), p);
        self.queue.push_back(p);
        Ok(p)
    }

    fn successor(&mut self, s: usize) -> Result<Option<usize>, CheckError> {
        if let Some(r) = self.succ[s] {
            return Ok(r);
        }
        let mut c = self.states[s].clone();
        let r = match c.step(self.policy)? {
            Outcome::Progressed => Some(self.state(c)),
            Outcome::Blocked | Outcome::Stopped => None,
        };
        self.succ[s] = Some(r);
        Ok(r)
    }

    /// Memories another thread could produce from `mem` under `mds`,
    /// changing only writable variables and no classification of anything
    /// that is not writable.
    fn env_variants(&self, mds: &ModeState, mem: &Memory) -> Vec<Memory> {
        let writable: Vec<&Var> =
            self.policy.universe.iter().filter(|v| mds.writable(v)).collect();
        let fixed: Vec<&Var> = self.policy.universe.iter().filter(|v| !mds.writable(v)).collect();
        let mut out = vec![mem.clone()];
        for v in &writable {
            out = out
                .into_iter()
                .flat_map(|m| {
                    self.domain.iter().map(move |d| {
                        let mut m = m.clone();
                        m.insert((*v).clone(), *d);
                        m
                    })
                })
                .collect();
        }
        out.retain(|m| fixed.iter().all(|x| self.policy.classify(mem, x).ok() == self.policy.classify(m, x).ok()));
        out
    }
}

/// Builds the largest strong low-bisimulation modulo modes reachable from
/// `src` started on every pair of low-equivalent memories over `domain`,
/// with locks free and modes `mds`. Fails with a resource error when more
/// than `bound` pairs would be needed.
pub fn build_bounded_bisim(
    src: &Cmd,
    policy: &Policy,
    domain: &[Value],
    mds: &ModeState,
    bound: usize,
) -> Result<BisimOutcome, CheckError> {
    if domain.is_empty() {
        return Err(CheckError::Precondition("empty value domain".into()));
    }
    let mut b = Builder {
        policy,
        domain: domain.to_vec(),
        bound,
        states: Vec::new(),
        index: HashMap::new(),
        succ: Vec::new(),
        pairs: Vec::new(),
        pair_index: HashMap::new(),
        queue: VecDeque::new(),
    };
    let mems = all_memories(policy, domain);
    let mut initial = Vec::new();
    for m1 in &mems {
        for m2 in &mems {
            if policy.low_mds_eq(mds, m1, m2) {
                let s1 = b.state(WhileConfig::new(src.clone(), mds.clone(), m1.clone()));
                let s2 = b.state(WhileConfig::new(src.clone(), mds.clone(), m2.clone()));
                initial.push(b.pair(s1, s2)?);
            }
        }
    }

    // Exploration: record, for every pair, the pairs it needs and any
    // local defect.
    let mut needs: Vec<Vec<(usize, &'static str)>> = Vec::new();
    let mut defect: Vec<Option<(&'static str, String)>> = Vec::new();
    while let Some(p) = b.queue.pop_front() {
        let (i, j) = b.pairs[p];
        let mut deps = Vec::new();
        let mut bad = None;
        let swapped = b.pair(j, i)?;
        deps.push((swapped, "symmetry"));
        let (c1, c2) = (b.states[i].clone(), b.states[j].clone());
        if c1.mds == c2.mds {
            if !policy.low_mds_eq(&c1.mds, &c1.mem, &c2.mem) {
                bad = Some(("low-equivalence", format!("{} vs {}", c1.mem, c2.mem)));
            }
            for m1 in b.env_variants(&c1.mds, &c1.mem) {
                for m2 in b.env_variants(&c2.mds, &c2.mem) {
                    if (m1 != c1.mem || m2 != c2.mem) && policy.low_mds_eq(&c1.mds, &m1, &m2) {
                        let s1 = b.state(WhileConfig::new(c1.cmd.clone(), c1.mds.clone(), m1.clone()));
                        let s2 = b.state(WhileConfig::new(c2.cmd.clone(), c2.mds.clone(), m2));
                        deps.push((b.pair(s1, s2)?, "environment change"));
                    }
                }
            }
            match (b.successor(i)?, b.successor(j)?) {
                (Some(n1), Some(n2)) => {
                    if b.states[n1].mds != b.states[n2].mds {
                        bad.get_or_insert(("modes", "the two steps leave different modes".into()));
                    } else {
                        deps.push((b.pair(n1, n2)?, "step"));
                    }
                }
                (Some(_), None) => {
                    bad.get_or_insert(("step-matching", "left steps, right cannot".into()));
                }
                (None, Some(_)) => {
                    bad.get_or_insert(("step-matching", "right steps, left cannot".into()));
                }
                (None, None) => {}
            }
        }
        needs.push(deps);
        defect.push(bad);
    }

    // Greatest fixpoint by backward propagation of removals.
    let n = b.pairs.len();
    let mut needed_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (p, deps) in needs.iter().enumerate() {
        for &(q, _) in deps {
            needed_by[q].push(p);
        }
    }
    let mut why: Vec<Option<Why>> = (0..n).map(|_| None).collect();
    let mut work = VecDeque::new();
    for (p, d) in defect.into_iter().enumerate() {
        if let Some((clause, detail)) = d {
            why[p] = Some(Why::Local(clause, detail));
            work.push_back(p);
        }
    }
    while let Some(q) = work.pop_front() {
        for &p in &needed_by[q] {
            if why[p].is_none() {
                let edge = needs[p].iter().find(|(d, _)| *d == q).map_or("step", |(_, e)| *e);
                why[p] = Some(Why::Needs(q, edge));
                work.push_back(p);
            }
        }
    }

    let surviving = BoundedRelation {
        pairs: (0..n).filter(|p| why[*p].is_none()).map(|p| b.pairs[p]).collect(),
        states: b.states,
        index: b.index,
    };
    let Some(&first) = initial.iter().find(|p| why[**p].is_some()) else {
        return Ok(BisimOutcome::Secure(surviving));
    };

    let render = |p: usize| {
        let (i, j) = b.pairs[p];
        format!("{} | {}", render_config(&surviving.states[i]), render_config(&surviving.states[j]))
    };
    let mut trace = vec![render(first)];
    let mut at = first;
    let mut depth = 0;
    let (clause, detail) = loop {
        match why[at].as_ref().expect("evicted pair has a reason") {
            Why::Local(c, d) => break (c.to_string(), d.clone()),
            Why::Needs(q, edge) => {
                depth += 1;
                trace.push(format!("--{edge}--> {}", render(*q)));
                at = *q;
            }
        }
    };
    let (i, j) = b.pairs[first];
    let witness = (surviving.states[i].clone(), surviving.states[j].clone());
    let failure = Failure { clause, step: depth, detail, trace };
    Ok(BisimOutcome::Insecure { witness, failure, surviving })
}
