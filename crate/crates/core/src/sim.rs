//! Interleaved execution of several threads over one shared memory.
//!
//! Scheduling is round-robin with a seeded random quantum of one to four
//! steps. A thread that blocks or has finished hands over to the next one
//! immediately. Nothing runs in parallel; interleavings are simulated.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkers::{CheckError, Failure, Verdict};
use crate::lang::{Memory, ModeState, Value, Var};
use crate::locking::SemanticsError;
use crate::policy::{Level, Policy};
use crate::risc::{Op, Program, RiscConfig};
use crate::while_lang::{Cmd, Outcome, WhileConfig};

#[derive(Clone, Debug)]
pub enum ThreadCode {
    While(Cmd),
    Risc(Arc<Program>, usize),
}

#[derive(Clone, Debug)]
enum Local {
    While(WhileConfig),
    Risc(RiscConfig),
}

impl Local {
    fn stops(&self) -> bool {
        match self {
            Local::While(c) => c.stops(),
            Local::Risc(c) => c.stops(),
        }
    }

    fn mds(&self) -> &ModeState {
        match self {
            Local::While(c) => &c.mds,
            Local::Risc(c) => &c.mds,
        }
    }

    fn mem_mut(&mut self) -> &mut Memory {
        match self {
            Local::While(c) => &mut c.mem,
            Local::Risc(c) => &mut c.mem,
        }
    }

    /// Description of the next action and the variables it reads and
    /// writes, judged before the step.
    fn next_action(&self) -> (String, Vec<Var>, Vec<Var>) {
        match self {
            Local::While(c) => match c.cmd.leftmost() {
                Cmd::Assign(v, e) => (format!("{v} := {e}"), e.vars().into_iter().collect(), vec![v.clone()]),
                Cmd::If(e, _, _) => (format!("if {e}"), e.vars().into_iter().collect(), vec![]),
                Cmd::While(e, _) => (format!("while {e}"), vec![], vec![]),
                Cmd::LockAcq(k) => (format!("acquire {k}"), vec![k.clone()], vec![k.clone()]),
                Cmd::LockRel(k) => (format!("release {k}"), vec![k.clone()], vec![k.clone()]),
                other => (format!("{other:?}").to_lowercase(), vec![], vec![]),
            },
            Local::Risc(c) => match c.current() {
                None => ("end".into(), vec![], vec![]),
                Some(i) => {
                    let (r, w) = match &i.op {
                        Op::Load(_, v) => (vec![v.clone()], vec![]),
                        Op::Store(v, _) => (vec![], vec![v.clone()]),
                        Op::LockAcq(k) | Op::LockRel(k) => (vec![k.clone()], vec![k.clone()]),
                        _ => (vec![], vec![]),
                    };
                    (format!("pc {} {}", c.pc, i.op), r, w)
                }
            },
        }
    }

    fn step(&mut self, policy: &Policy) -> Result<Outcome, SemanticsError> {
        match self {
            Local::While(c) => c.step(policy),
            Local::Risc(c) => c.step(policy),
        }
    }
}

/// Threads plus the memory they share.
#[derive(Clone, Debug)]
pub struct SystemConfig {
    threads: Vec<Local>,
    pub mem: Memory,
}

impl SystemConfig {
    /// Every thread starts holding no lock.
    pub fn new(policy: &Policy, code: &[ThreadCode], mem: Memory) -> Self {
        let mds = policy.initial_mds();
        let threads = code
            .iter()
            .map(|t| match t {
                ThreadCode::While(c) => Local::While(WhileConfig::new(c.clone(), mds.clone(), Memory::new())),
                ThreadCode::Risc(p, n) => Local::Risc(RiscConfig::new(Arc::clone(p), *n, mds.clone(), Memory::new())),
            })
            .collect();
        SystemConfig { threads, mem }
    }

    pub fn len(&self) -> usize {
        self.threads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.threads.is_empty()
    }

    pub fn mds(&self, t: usize) -> &ModeState {
        self.threads[t].mds()
    }

    pub fn stopped(&self, t: usize) -> bool {
        self.threads[t].stops()
    }

    fn step_thread(&mut self, t: usize, policy: &Policy) -> Result<(Outcome, Local), SemanticsError> {
        let before = self.threads[t].clone();
        let th = &mut self.threads[t];
        *th.mem_mut() = std::mem::take(&mut self.mem);
        let out = th.step(policy);
        self.mem = std::mem::take(th.mem_mut());
        out.map(|o| (o, before))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub step: usize,
    pub thread: usize,
    pub action: String,
    pub reads: Vec<Var>,
    pub writes: Vec<(Var, Value)>,
    /// Modes after the step, when the step changed them.
    pub mds: Option<ModeState>,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.step, self.thread, self.action)?;
        for (v, x) in &self.writes {
            write!(f, " {v}={x}")?;
        }
        if let Some(m) = &self.mds {
            write!(f, " mds={m}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub initial_mds: Vec<ModeState>,
    pub events: Vec<Event>,
    /// Every unfinished thread was blocked.
    pub deadlock: bool,
}

impl Trace {
    /// `(step, value)` writes to `v`, in order.
    pub fn writes_to(&self, v: &Var) -> Vec<(usize, Value)> {
        self.events
            .iter()
            .flat_map(|e| e.writes.iter().filter(|(w, _)| w == v).map(move |(_, x)| (e.step, *x)))
            .collect()
    }

    /// The memory writes of one thread, in order.
    pub fn thread_writes(&self, t: usize) -> Vec<(Var, Value)> {
        self.events.iter().filter(|e| e.thread == t).flat_map(|e| e.writes.iter().cloned()).collect()
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.events {
            writeln!(f, "{e}")?;
        }
        if self.deadlock {
            writeln!(f, "deadlock")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub trace: Trace,
    pub last: SystemConfig,
    /// Every thread ran to completion.
    pub finished: bool,
}

/// Runs `sys` for at most `max_steps` thread steps under the schedule drawn
/// from `seed`.
pub fn sim_run(mut sys: SystemConfig, policy: &Policy, seed: u64, max_steps: usize) -> Result<SimResult, SemanticsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sys.len();
    let mut trace = Trace { initial_mds: (0..n).map(|t| sys.mds(t).clone()).collect(), ..Default::default() };
    if n == 0 {
        return Ok(SimResult { trace, last: sys, finished: true });
    }
    let mut t = 0;
    let mut idle = 0;
    let mut step = 0;
    while step < max_steps {
        if idle >= n {
            trace.deadlock = (0..n).any(|i| !sys.stopped(i));
            break;
        }
        let quantum = rng.gen_range(1..=4);
        let mut progressed = false;
        for _ in 0..quantum {
            if step == max_steps {
                break;
            }
            let (action, reads, written) = sys.threads[t].next_action();
            let (out, before) = sys.step_thread(t, policy)?;
            if out != Outcome::Progressed {
                break;
            }
            progressed = true;
            let writes = written.iter().map(|v| (v.clone(), sys.mem.get(v).unwrap_or_default())).collect();
            let mds = (before.mds() != sys.mds(t)).then(|| sys.mds(t).clone());
            trace.events.push(Event { step, thread: t, action, reads, writes, mds });
            step += 1;
        }
        idle = if progressed { 0 } else { idle + 1 };
        t = (t + 1) % n;
    }
    let finished = (0..n).all(|i| sys.stopped(i));
    Ok(SimResult { trace, last: sys, finished })
}

/// Replays the modes recorded in `trace` and reports the first access
/// that another thread's assumptions forbid.
pub fn check_mode_compatibility(trace: &Trace, policy: &Policy) -> Verdict {
    const NAME: &str = "mode-compatibility";
    let mut mds = trace.initial_mds.clone();
    for (k, e) in trace.events.iter().enumerate() {
        for (o, m) in mds.iter().enumerate() {
            if o == e.thread {
                continue;
            }
            let bad_write = e.writes.iter().map(|(v, _)| v).find(|v| !policy.is_lock(v) && !m.writable(v));
            let bad_read = e.reads.iter().find(|v| !policy.is_lock(v) && !m.readable(v));
            let hit = match (bad_write, bad_read) {
                (Some(v), _) => Some(("write", v)),
                (None, Some(v)) => Some(("read", v)),
                _ => None,
            };
            if let Some((what, v)) = hit {
                let from = k.saturating_sub(8);
                let f = Failure {
                    clause: format!("assumption-{what}"),
                    step: e.step,
                    detail: format!("thread {} {what}s {v} while thread {o} assumes exclusivity", e.thread),
                    trace: trace.events[from..=k].iter().map(|e| e.to_string()).collect(),
                };
                return Verdict::fail(NAME, 0, e.step, f);
            }
        }
        if let Some(m) = &e.mds {
            mds[e.thread] = m.clone();
        }
    }
    Verdict::pass(NAME, 0, trace.events.len(), false)
}

/// Permanently Low, unsynchronised variables: what an attacker reads.
pub fn sink_vars(policy: &Policy) -> BTreeSet<Var> {
    policy
        .universe
        .iter()
        .filter(|v| policy.always_low(v) && !policy.is_governed(v) && !policy.control_vars().contains(*v))
        .cloned()
        .collect()
}

/// Runs `sys` and a copy with `mutation` applied to its memory under the
/// same schedule, for every seed, and compares the writes to sink
/// variables.
pub fn two_run_noninterference(
    sys: &SystemConfig,
    policy: &Policy,
    mutation: &[(Var, Value)],
    max_steps: usize,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<Verdict, CheckError> {
    const NAME: &str = "two-run";
    for (v, _) in mutation {
        if policy.classify(&sys.mem, v).ok() != Some(Level::High) {
            return Err(CheckError::Precondition(format!("mutated variable `{v}` is not High in the initial memory")));
        }
    }
    let mut mutated = sys.clone();
    for (v, x) in mutation {
        mutated.mem.insert(v.clone(), *x);
    }
    let sinks = sink_vars(policy);
    let mut total = 0;
    for seed in seeds {
        let a = sim_run(sys.clone(), policy, seed, max_steps)?;
        let b = sim_run(mutated.clone(), policy, seed, max_steps)?;
        total += a.trace.events.len();
        for s in &sinks {
            let (wa, wb) = (a.trace.writes_to(s), b.trace.writes_to(s));
            if wa != wb {
                let at = wa.iter().zip(&wb).position(|(x, y)| x != y).unwrap_or(wa.len().min(wb.len()));
                let show = |w: &[(usize, Value)]| {
                    w.iter().skip(at).take(4).map(|(st, x)| format!("{st}:{x}")).collect::<Vec<_>>().join(" ")
                };
                let f = Failure {
                    clause: "low-sink-trace".into(),
                    step: wa.get(at).or(wb.get(at)).map_or(0, |w| w.0),
                    detail: format!("writes to {s} differ from write #{at}: [{}] vs [{}]", show(&wa), show(&wb)),
                    trace: vec![],
                };
                return Ok(Verdict::fail(NAME, seed, total, f));
            }
        }
    }
    Ok(Verdict::pass(NAME, 0, total, false))
}
