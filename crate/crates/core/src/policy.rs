//! Security policies: value-dependent classification, control variables and
//! lock interpretations, plus the observational-equivalence predicates the
//! checkers are built on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Deserialize;
use thiserror::Error;

use crate::lang::{AsmRec, Memory, Mode, ModeState, Value, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Low,
    High,
}

/// `var` is Low exactly when `control` holds `low_when`, High otherwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dependent {
    pub var: Var,
    pub control: Var,
    pub low_when: Value,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassificationSpec {
    pub high: BTreeSet<Var>,
    pub dependent: Vec<Dependent>,
}

/// Access a lock grants to its holder.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LockInterp {
    pub no_write: BTreeSet<Var>,
    pub no_read_write: BTreeSet<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    NoWrite,
    NoReadWrite,
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Access::NoWrite => f.write_str("no_write"),
            Access::NoReadWrite => f.write_str("no_read_write"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("variable universe is empty")]
    EmptyUniverse,
    #[error("lock `{0}` is also declared as a program variable")]
    LockInUniverse(Var),
    #[error("{context} mentions undeclared variable `{var}`")]
    UnknownVar { context: String, var: Var },
    #[error("`{0}` is classified more than once")]
    DuplicateClassification(Var),
    #[error("lock `{0}` must be classified Low")]
    LockClassified(Var),
    #[error("lock `{0}` cannot be a control variable")]
    LockIsControl(Var),
    #[error("control variable `{0}` must be Low under every memory")]
    ControlNotLow(Var),
    #[error("lock `{lock}` lists `{var}` under both no_write and no_read_write")]
    OverlappingInterp { lock: Var, var: Var },
    #[error("lock `{lock}` governs lock variable `{var}`")]
    LockGovernsLock { lock: Var, var: Var },
    #[error("`{var}` is governed by both `{first}` and `{second}`")]
    DoublyGoverned { var: Var, first: Var, second: Var },
    #[error("lock `{lock}` governs `{var}` ({access}) but not its control variable `{control}` the same way")]
    ControlGovernance { lock: Var, var: Var, control: Var, access: Access },
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy syntax: {0}")]
    Parse(String),
    #[error("invalid policy:\n{}", list(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown variable `{0}`")]
    UnknownVar(Var),
}

fn list(vs: &[Violation]) -> String {
    vs.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n")
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Policy {
    pub universe: BTreeSet<Var>,
    pub locks: BTreeMap<Var, LockInterp>,
    pub classification: ClassificationSpec,
}

impl Policy {
    /// Assembles and validates a policy.
    pub fn new(
        universe: BTreeSet<Var>,
        locks: BTreeMap<Var, LockInterp>,
        classification: ClassificationSpec,
    ) -> Result<Self, PolicyError> {
        let p = Policy { universe, locks, classification };
        p.validate().map_err(PolicyError::Invalid)?;
        Ok(p)
    }

    pub fn is_lock(&self, v: &Var) -> bool {
        self.locks.contains_key(v)
    }

    pub fn lock_interp(&self, k: &Var) -> Option<&LockInterp> {
        self.locks.get(k)
    }

    /// Program variables followed by lock variables.
    pub fn all_vars(&self) -> impl Iterator<Item = &Var> {
        self.universe.iter().chain(self.locks.keys())
    }

    pub fn knows(&self, v: &Var) -> bool {
        self.universe.contains(v) || self.is_lock(v)
    }

    /// A memory with every variable and lock set to zero.
    pub fn zero_memory(&self) -> Memory {
        Memory::zeroed(self.all_vars())
    }

    pub fn classify(&self, mem: &Memory, x: &Var) -> Result<Level, PolicyError> {
        if self.is_lock(x) {
            return Ok(Level::Low);
        }
        if !self.universe.contains(x) {
            return Err(PolicyError::UnknownVar(x.clone()));
        }
        if self.classification.high.contains(x) {
            return Ok(Level::High);
        }
        match self.classification.dependent.iter().find(|d| &d.var == x) {
            Some(d) => {
                let c = mem.get(&d.control).ok_or_else(|| PolicyError::UnknownVar(d.control.clone()))?;
                Ok(if c == d.low_when { Level::Low } else { Level::High })
            }
            None => Ok(Level::Low),
        }
    }

    pub fn cvars(&self, x: &Var) -> BTreeSet<Var> {
        self.classification
            .dependent
            .iter()
            .filter(|d| &d.var == x)
            .map(|d| d.control.clone())
            .collect()
    }

    /// Every variable that controls the classification of some other.
    pub fn control_vars(&self) -> BTreeSet<Var> {
        self.classification.dependent.iter().map(|d| d.control.clone()).collect()
    }

    /// Variables whose classification `c` controls.
    pub fn controlled_by(&self, c: &Var) -> BTreeSet<Var> {
        self.classification
            .dependent
            .iter()
            .filter(|d| &d.control == c)
            .map(|d| d.var.clone())
            .collect()
    }

    /// Variables that are High under every memory.
    pub fn always_high(&self, x: &Var) -> bool {
        self.classification.high.contains(x)
    }

    /// Variables that are Low under every memory.
    pub fn always_low(&self, x: &Var) -> bool {
        self.is_lock(x)
            || (self.universe.contains(x)
                && !self.classification.high.contains(x)
                && !self.classification.dependent.iter().any(|d| &d.var == x))
    }

    /// The lock governing `v`, if any, and the access it grants.
    pub fn governing_lock(&self, v: &Var) -> Option<(&Var, Access)> {
        self.locks.iter().find_map(|(k, li)| {
            if li.no_write.contains(v) {
                Some((k, Access::NoWrite))
            } else if li.no_read_write.contains(v) {
                Some((k, Access::NoReadWrite))
            } else {
                None
            }
        })
    }

    pub fn is_governed(&self, v: &Var) -> bool {
        self.governing_lock(v).is_some()
    }

    /// `v` and all of its control variables are covered by `asm`.
    pub fn var_stable(&self, asm: &AsmRec, v: &Var) -> bool {
        asm.covers(v) && self.cvars(v).iter().all(|c| asm.covers(c))
    }

    /// Low-equivalence modulo modes: equality on control variables and on
    /// every readable Low variable (classified under `mem1`). Lock variables
    /// count as readable.
    pub fn low_mds_eq(&self, mds: &ModeState, mem1: &Memory, mem2: &Memory) -> bool {
        let controls = self.control_vars();
        self.all_vars().all(|x| {
            let observed = controls.contains(x)
                || self.is_lock(x)
                || (mds.readable(x) && self.classify(mem1, x).ok() == Some(Level::Low));
            !observed || mem1.get(x) == mem2.get(x)
        })
    }

    /// Whether another thread may change `x` under `mds`: `x` must be
    /// writable, and so must everything whose classification it controls.
    /// Lock variables are never changed by the environment.
    pub fn env_may_write(&self, mds: &ModeState, x: &Var) -> bool {
        !self.is_lock(x)
            && self.universe.contains(x)
            && mds.writable(x)
            && self.controlled_by(x).iter().all(|y| mds.writable(y))
    }

    /// Mode state of a thread holding no lock: it guarantees not to touch
    /// anything a lock governs.
    pub fn initial_mds(&self) -> ModeState {
        let mut mds = ModeState::new();
        for li in self.locks.values() {
            mds.get_mut(Mode::GuarNoW).extend(li.no_write.iter().cloned());
            mds.get_mut(Mode::GuarNoRW).extend(li.no_read_write.iter().cloned());
        }
        mds
    }

    /// Checks every well-formedness and cleanliness condition, returning
    /// all violations found.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        if self.universe.is_empty() {
            out.push(Violation::EmptyUniverse);
        }
        for k in self.locks.keys() {
            if self.universe.contains(k) {
                out.push(Violation::LockInUniverse(k.clone()));
            }
        }
        let check_known = |ctx: &str, v: &Var, out: &mut Vec<Violation>| {
            if !self.knows(v) {
                out.push(Violation::UnknownVar { context: ctx.to_string(), var: v.clone() });
            }
        };

        let mut seen = BTreeSet::new();
        for h in &self.classification.high {
            check_known("classification.high", h, &mut out);
            seen.insert(h.clone());
            if self.is_lock(h) {
                out.push(Violation::LockClassified(h.clone()));
            }
        }
        for d in &self.classification.dependent {
            check_known("classification.dependent", &d.var, &mut out);
            check_known("classification.dependent", &d.control, &mut out);
            if !seen.insert(d.var.clone()) {
                out.push(Violation::DuplicateClassification(d.var.clone()));
            }
            if self.is_lock(&d.var) {
                out.push(Violation::LockClassified(d.var.clone()));
            }
        }
        let controls = self.control_vars();
        for c in &controls {
            if self.is_lock(c) {
                out.push(Violation::LockIsControl(c.clone()));
            } else if self.universe.contains(c) && !self.always_low(c) {
                out.push(Violation::ControlNotLow(c.clone()));
            }
        }

        let mut governor: BTreeMap<&Var, &Var> = BTreeMap::new();
        for (k, li) in &self.locks {
            for v in li.no_write.iter().chain(&li.no_read_write) {
                check_known(&format!("locks.{k}"), v, &mut out);
                if self.is_lock(v) {
                    out.push(Violation::LockGovernsLock { lock: k.clone(), var: v.clone() });
                }
                match governor.get(v) {
                    Some(first) if *first != k => out.push(Violation::DoublyGoverned {
                        var: v.clone(),
                        first: (*first).clone(),
                        second: k.clone(),
                    }),
                    Some(_) => {}
                    None => {
                        governor.insert(v, k);
                    }
                }
            }
            for v in li.no_write.intersection(&li.no_read_write) {
                out.push(Violation::OverlappingInterp { lock: k.clone(), var: v.clone() });
            }
            for (set, access) in [(&li.no_write, Access::NoWrite), (&li.no_read_write, Access::NoReadWrite)] {
                for v in set {
                    for c in self.cvars(v) {
                        if !set.contains(&c) {
                            out.push(Violation::ControlGovernance {
                                lock: k.clone(),
                                var: v.clone(),
                                control: c,
                                access,
                            });
                        }
                    }
                }
            }
        }

        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Parses the TOML policy format and validates the result.
    pub fn from_toml_str(text: &str) -> Result<Self, PolicyError> {
        let raw: RawPolicy = toml::from_str(text).map_err(|e| PolicyError::Parse(e.to_string()))?;
        let universe = raw.vars.universe.iter().map(|s| Var::new(s)).collect();
        let locks = raw
            .locks
            .into_iter()
            .map(|(k, l)| {
                let li = LockInterp {
                    no_write: l.no_write.iter().map(|s| Var::new(s)).collect(),
                    no_read_write: l.no_read_write.iter().map(|s| Var::new(s)).collect(),
                };
                (Var::new(&k), li)
            })
            .collect();
        let classification = ClassificationSpec {
            high: raw.classification.high.iter().map(|s| Var::new(s)).collect(),
            dependent: raw
                .classification
                .dependent
                .into_iter()
                .map(|d| Dependent {
                    var: Var::new(&d.var),
                    control: Var::new(&d.control),
                    low_when: d.low_when,
                })
                .collect(),
        };
        Policy::new(universe, locks, classification)
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    #[serde(default)]
    vars: RawVars,
    #[serde(default)]
    locks: BTreeMap<String, RawLock>,
    #[serde(default)]
    classification: RawClassification,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawVars {
    #[serde(default)]
    universe: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLock {
    #[serde(default)]
    no_write: Vec<String>,
    #[serde(default)]
    no_read_write: Vec<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawClassification {
    #[serde(default)]
    high: Vec<String>,
    #[serde(default)]
    dependent: Vec<RawDependent>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDependent {
    var: String,
    control: String,
    low_when: Value,
}
