//! `wrc`: compile, run, check and simulate programs against a lock policy.
//!
//! Exit status is 0 on success, 1 when a compilation fails or a check
//! reports FAIL, and 2 on usage or I/O errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use wrc_core::checkers::{
    all_low_eq_pairs, build_bounded_bisim, build_refinement_relation, check_cube, check_decomp_side_conditions,
    check_no_high_branching, check_refinement_run, check_timing, BisimOutcome, Coupling, DecompOptions, Interference,
    MemPairGen, Pacing, RefinementOptions, Verdict, DEFAULT_MAX_STEPS,
};
use wrc_core::compiler::{Compiled, Compiler};
use wrc_core::lang::{Memory, Value, Var};
use wrc_core::policy::Policy;
use wrc_core::risc::{RiscConfig, DEFAULT_REGS};
use wrc_core::sim::{check_mode_compatibility, sim_run, two_run_noninterference, SystemConfig, ThreadCode};
use wrc_core::syntax::{emit_asm, parse_asm, parse_program, write_annotations};
use wrc_core::while_lang::{Cmd, Outcome, WhileConfig};

#[derive(Parser)]
#[command(name = "wrc", version, about = "Lock-aware While-to-RISC compiler and security checkers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Policy file (TOML).
    #[arg(long)]
    policy: PathBuf,
    /// Initial value of a variable, `var=value`; repeatable. Others start at 0.
    #[arg(long = "set", value_parser = parse_binding)]
    set: Vec<(Var, Value)>,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a source program to assembly.
    Compile {
        src: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Write assembly here instead of stdout.
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
        /// Write the per-instruction compilation records as JSON lines.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Interpret a source (`.w`) or assembly (`.s`) program.
    Run {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run one of the checkers.
    Check {
        kind: CheckKind,
        file: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of low-equivalent memory pairs to try.
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        /// Interference script, one `step var value` per line.
        #[arg(long)]
        env_script: Option<PathBuf>,
        /// How two assembly runs are compared by the timing check.
        #[arg(long, value_enum, default_value_t = CouplingArg::Pc)]
        coupling: CouplingArg,
        /// Value domain for the exhaustive checks, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0,1")]
        domain: Vec<Value>,
        /// Bound on explored states for the exhaustive checks.
        #[arg(long, default_value_t = 1_000_000)]
        bound: usize,
    },
    /// Run several threads together under a seeded random schedule.
    Simulate {
        /// Source program of one thread; repeatable.
        #[arg(long = "thread", required = true)]
        threads: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run the compiled code instead of the source.
        #[arg(long)]
        compiled: bool,
        /// Compare sink writes against a run with `--mutate` applied.
        #[arg(long, requires = "mutate")]
        two_run: bool,
        #[arg(long, value_parser = parse_binding)]
        mutate: Vec<(Var, Value)>,
        /// Number of schedules tried by `--two-run`.
        #[arg(long, default_value_t = 20)]
        runs: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckKind {
    Refinement,
    Timing,
    HighBranching,
    Bisim,
    Cube,
}

#[derive(Clone, Copy, ValueEnum)]
enum CouplingArg {
    Pc,
    Lockstep,
}

fn parse_binding(s: &str) -> Result<(Var, Value), String> {
    let (v, x) = s.split_once('=').ok_or_else(|| format!("expected var=value, got `{s}`"))?;
    let x = x.trim().parse::<Value>().map_err(|e| format!("`{x}`: {e}"))?;
    Ok((Var::new(v.trim()), x))
}

/// Usage and I/O problems; everything maps to exit status 2.
struct Usage(String);

impl<E: std::fmt::Display> From<E> for Usage {
    fn from(e: E) -> Self {
        Usage(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Usage> {
    fs::read_to_string(path).map_err(|e| Usage(format!("{}: {e}", path.display())))
}

fn load_policy(path: &Path) -> Result<Policy, Usage> {
    Policy::from_toml_str(&read(path)?).map_err(|e| Usage(format!("{}: {e}", path.display())))
}

fn load_source(path: &Path) -> Result<Cmd, Usage> {
    parse_program(&read(path)?).map_err(|e| Usage(format!("{}:{e}", path.display())))
}

fn is_asm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "s")
}

fn initial_memory(policy: &Policy, set: &[(Var, Value)]) -> Result<Memory, Usage> {
    let mut mem = policy.zero_memory();
    for (v, x) in set {
        if !policy.universe.contains(v) {
            return Err(Usage(format!("`{v}` is not a program variable of the policy")));
        }
        mem.insert(v.clone(), *x);
    }
    Ok(mem)
}

/// Compiles or reports the failure; `None` means exit status 1.
fn compile(policy: &Policy, src: &Cmd, path: &Path) -> Option<Compiled> {
    match Compiler::new(policy).compile(src) {
        Ok(c) => Some(c),
        Err(e) => {
            eprintln!("{}: error: {e}", path.display());
            None
        }
    }
}

fn verdict(v: Verdict) -> ExitCode {
    println!("{}", v.dump());
    if v.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode, Usage> {
    match cmd {
        Command::Compile { src, policy, output, annotations } => {
            let p = load_policy(&policy)?;
            let c = load_source(&src)?;
            let Some(compiled) = compile(&p, &c, &src) else {
                return Ok(ExitCode::from(1));
            };
            let asm = emit_asm(&compiled.program);
            match output {
                Some(o) => fs::write(&o, asm).map_err(|e| Usage(format!("{}: {e}", o.display())))?,
                None => print!("{asm}"),
            }
            if let Some(a) = annotations {
                fs::write(&a, write_annotations(&compiled)).map_err(|e| Usage(format!("{}: {e}", a.display())))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { file, common } => {
            let p = load_policy(&common.policy)?;
            let mem = initial_memory(&p, &common.set)?;
            let (steps, outcome, mem, mds) = if is_asm(&file) {
                let prog = parse_asm(&read(&file)?).map_err(|e| Usage(format!("{}:{e}", file.display())))?;
                let mut c = RiscConfig::new(Arc::new(prog), DEFAULT_REGS, p.initial_mds(), mem);
                let (n, o) = drive(common.max_steps, || c.step(&p))?;
                (n, o, c.mem, c.mds)
            } else {
                let mut c = WhileConfig::new(load_source(&file)?, p.initial_mds(), mem);
                let (n, o) = drive(common.max_steps, || c.step(&p))?;
                (n, o, c.mem, c.mds)
            };
            let status = match outcome {
                Some(Outcome::Stopped) => "stopped",
                Some(Outcome::Blocked) => "blocked",
                _ => "step budget exhausted",
            };
            println!("{status} after {steps} steps");
            println!("memory: {mem}");
            println!("modes: {mds}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { kind, file, common, seed, pairs, env_script, coupling, domain, bound } => {
            let p = load_policy(&common.policy)?;
            let mds = p.initial_mds();
            let coupling = match coupling {
                CouplingArg::Pc => Coupling::Pc,
                CouplingArg::Lockstep => Coupling::Lockstep,
            };
            let memory_pairs = |n: usize| -> Result<Vec<(Memory, Memory)>, Usage> {
                let mut g = MemPairGen::new(&p, mds.clone(), seed);
                for (v, x) in &common.set {
                    g = g.pin(v.clone(), *x)?;
                }
                Ok(g.pairs(n))
            };
            if is_asm(&file) {
                if !matches!(kind, CheckKind::Timing) {
                    return Err(Usage("only `check timing` accepts assembly input".into()));
                }
                let prog = parse_asm(&read(&file)?).map_err(|e| Usage(format!("{}:{e}", file.display())))?;
                let pairs = if common.set.is_empty() { all_low_eq_pairs(&p, &mds, &domain) } else { memory_pairs(pairs)? };
                let v = check_timing(Arc::new(prog), DEFAULT_REGS, &p, &mds, &pairs, coupling, common.max_steps)?;
                return Ok(verdict(v));
            }
            let src = load_source(&file)?;
            if let CheckKind::HighBranching = kind {
                return Ok(verdict(check_no_high_branching(&src, &p, &mds, &memory_pairs(pairs)?, common.max_steps)?));
            }
            if let CheckKind::Bisim = kind {
                return Ok(match build_bounded_bisim(&src, &p, &domain, &mds, bound)? {
                    BisimOutcome::Secure(rel) => {
                        println!("PASS bisim relation of {} pairs", rel.len());
                        ExitCode::SUCCESS
                    }
                    out => verdict(out.verdict()),
                });
            }
            let Some(compiled) = compile(&p, &src, &file) else {
                return Ok(ExitCode::from(1));
            };
            let v = match kind {
                CheckKind::Refinement => {
                    let env = match env_script {
                        Some(f) => Interference::parse_script(&read(&f)?)?,
                        None => Interference::random(seed),
                    };
                    let mem = initial_memory(&p, &common.set)?;
                    let opts = RefinementOptions { max_steps: common.max_steps, pacing: Pacing::Faithful, env };
                    check_refinement_run(&compiled, &src, &p, &mem, &mds, None, &opts)?
                }
                CheckKind::Timing => {
                    let opts = DecompOptions { max_steps: common.max_steps, seed, ..Default::default() };
                    check_decomp_side_conditions(&compiled, &src, &p, &mds, &memory_pairs(pairs)?, &opts)?
                }
                CheckKind::Cube => {
                    let b = build_bounded_bisim(&src, &p, &domain, &mds, bound)?;
                    let BisimOutcome::Secure(rel) = &b else {
                        println!("source program is not secure; no relation to check against");
                        return Ok(verdict(b.verdict()));
                    };
                    let r = build_refinement_relation(&compiled, &src, &p, &mds, &domain, Pacing::Faithful, bound)?;
                    check_cube(rel, &r, &p)?
                }
                CheckKind::HighBranching | CheckKind::Bisim => unreachable!("handled above"),
            };
            Ok(verdict(v))
        }
        Command::Simulate { threads, common, seed, compiled, two_run, mutate, runs } => {
            let p = load_policy(&common.policy)?;
            let mut code = Vec::new();
            for t in &threads {
                let src = load_source(t)?;
                if compiled {
                    let Some(c) = compile(&p, &src, t) else {
                        return Ok(ExitCode::from(1));
                    };
                    code.push(ThreadCode::Risc(c.program, c.nregs));
                } else {
                    code.push(ThreadCode::While(src));
                }
            }
            let sys = SystemConfig::new(&p, &code, initial_memory(&p, &common.set)?);
            if two_run {
                return Ok(verdict(two_run_noninterference(&sys, &p, &mutate, common.max_steps, seed..seed + runs)?));
            }
            let r = sim_run(sys, &p, seed, common.max_steps)?;
            for e in &r.trace.events {
                println!("{e}");
            }
            if r.trace.deadlock {
                println!("deadlock after {} steps", r.trace.events.len());
            }
            println!("memory: {}", r.last.mem);
            Ok(verdict(check_mode_compatibility(&r.trace, &p)))
        }
    }
}

fn drive<E: std::fmt::Display>(
    max: usize,
    mut step: impl FnMut() -> Result<Outcome, E>,
) -> Result<(usize, Option<Outcome>), Usage> {
    for n in 0..max {
        match step()? {
            Outcome::Progressed => {}
            o => return Ok((n, Some(o))),
        }
    }
    Ok((max, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bindings() {
        assert_eq!(parse_binding("x=3").unwrap(), (Var::new("x"), 3));
        assert_eq!(parse_binding(" y = -2").unwrap(), (Var::new("y"), -2));
        assert!(parse_binding("x").is_err());
        assert!(parse_binding("x=a").is_err());
    }

    #[test]
    fn arguments_are_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
