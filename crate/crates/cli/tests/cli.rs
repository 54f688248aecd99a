use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn wrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wrc")).args(args).output().expect("wrc runs")
}

fn wrc_in(args: &[String]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wrc")).args(args).output().expect("wrc runs")
}

fn f(name: &str) -> String {
    fixture(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn compile_writes_assembly_and_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let asm = dir.path().join("worker.s");
    let ann = dir.path().join("worker.jsonl");
    let o = wrc_in(&[
        "compile".into(),
        f("worker.w"),
        "--policy".into(),
        f("worker.toml"),
        "-o".into(),
        asm.display().to_string(),
        "--annotations".into(),
        ann.display().to_string(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&asm).unwrap();
    assert!(text.contains("LOCKACQ workspace_lock"));
    let instrs = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with(".exit")).count();
    // One record per instruction plus the final one.
    assert_eq!(fs::read_to_string(&ann).unwrap().lines().count(), instrs + 1);

    // The emitted assembly runs.
    let o = wrc_in(&["run".into(), asm.display().to_string(), "--policy".into(), f("worker.toml"), "--max-steps".into(), "50".into()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("step budget exhausted"));
}

#[test]
fn racy_program_fails_to_compile() {
    let o = wrc(&["compile", &f("racy_write.w"), "--policy", &f("worker.toml")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("data race"));
}

#[test]
fn leaky_assembly_fails_timing_with_pc_divergence() {
    let o = wrc(&["check", "timing", &f("leaky.s"), "--policy", &f("secret_branch.toml")]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.starts_with("FAIL timing"), "{out}");
    assert!(out.contains("clause=coupling"));
    assert!(out.contains("program counters diverge"));
}

#[test]
fn padding_matters_under_lockstep() {
    let args = |file: &str| {
        wrc(&["check", "timing", &f(file), "--policy", &f("secret_branch.toml"), "--coupling", "lockstep"])
    };
    assert_eq!(args("secret_branch_padded.s").status.code(), Some(0));
    assert_eq!(args("secret_branch_unpadded.s").status.code(), Some(1));
}

#[test]
fn refinement_with_a_script() {
    let o = wrc(&[
        "check",
        "refinement",
        &f("worker.w"),
        "--policy",
        &f("worker.toml"),
        "--env-script",
        &f("worker.env"),
        "--max-steps",
        "3000",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("PASS refinement"));
}

#[test]
fn bisim_and_cube_on_the_kernels() {
    let kp = f("kernel.toml");
    let o = wrc(&["check", "bisim", &f("kernel.w"), "--policy", &kp]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("relation of"));
    let o = wrc(&["check", "bisim", &f("leaky_kernel.w"), "--policy", &kp]);
    assert_eq!(o.status.code(), Some(1));
    let o = wrc(&["check", "cube", &f("kernel.w"), "--policy", &kp]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn high_branching_is_reported() {
    let o = wrc(&["check", "high-branching", &f("secret_branch_abs.w"), "--policy", &f("secret_branch.toml")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("branch-agreement"));
}

#[test]
fn two_run_simulation_separates_worker_from_leaky_worker() {
    let run = |worker: &str| {
        wrc(&[
            "simulate",
            "--thread",
            &f(worker),
            "--thread",
            &f("toggler.w"),
            "--thread",
            &f("typist.w"),
            "--policy",
            &f("worker.toml"),
            "--set",
            "domain=1",
            "--two-run",
            "--mutate",
            "source=99",
            "--max-steps",
            "2000",
            "--compiled",
        ])
    };
    assert_eq!(run("worker.w").status.code(), Some(0));
    let o = run("leaky_worker.w");
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("low-sink-trace"));
}

#[test]
fn usage_and_io_errors_exit_2() {
    assert_eq!(wrc(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(wrc(&["compile", "nowhere.w", "--policy", &f("worker.toml")]).status.code(), Some(2));
    assert_eq!(wrc(&["run", &f("kernel.w"), "--policy", &f("kernel.toml"), "--set", "nope=1"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.w");
    fs::write(&bad, "x := ;").unwrap();
    let o = wrc_in(&["compile".into(), bad.display().to_string(), "--policy".into(), f("kernel.toml")]);
    assert_eq!(o.status.code(), Some(2));
}
