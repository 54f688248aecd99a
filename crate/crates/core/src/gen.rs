//! Random program and expression generators for property tests and the
//! bundled experiments. All generators take a caller-owned RNG so results
//! are reproducible from a seed.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::lang::{BinOp, Expr, Value, Var};
use crate::policy::Policy;
use crate::while_lang::Cmd;

/// Random expression of depth at most `depth` over `vars`, with constants
/// in `[-8, 8]`.
pub fn random_expr<R: Rng>(rng: &mut R, vars: &[Var], depth: usize) -> Expr {
    if depth <= 1 || rng.gen_bool(0.3) {
        if !vars.is_empty() && rng.gen_bool(0.6) {
            return Expr::Var(vars.choose(rng).expect("nonempty").clone());
        }
        return Expr::Const(rng.gen_range(-8..=8));
    }
    let op = *BinOp::ALL.choose(rng).expect("operators");
    Expr::bin(op, random_expr(rng, vars, depth - 1), random_expr(rng, vars, depth - 1))
}

fn vars(names: &[&str]) -> Vec<Var> {
    names.iter().map(|n| Var::new(n)).collect()
}

/// Policy the race-free generator writes against.
///
/// `a`, `b`, `s`, `h` and the loop counters `i`, `j` are write-guarded by
/// `k`; `d` is read-write-guarded by `m`. `s` is Low exactly when `a` is 0,
/// `h` and `hout` are always High, `out` is an unguarded Low sink.
pub fn gen_policy() -> Policy {
    Policy::from_toml_str(
        r#"
        [vars]
        universe = ["a", "b", "s", "h", "i", "j", "d", "out", "hout"]
        [locks.k]
        no_write = ["a", "b", "s", "h", "i", "j"]
        [locks.m]
        no_read_write = ["d"]
        [classification]
        high = ["h", "hout"]
        [[classification.dependent]]
        var = "s"
        control = "a"
        low_when = 0
        "#,
    )
    .expect("generator policy is well formed")
}

/// Generator of race-free programs over [`gen_policy`].
pub struct ProgramGen<'r, R: Rng> {
    rng: &'r mut R,
    /// Restrict branch conditions and everything flowing into them to
    /// variables that are Low in every memory.
    pub low_branching: bool,
    pub max_stmts: usize,
}

impl<'r, R: Rng> ProgramGen<'r, R> {
    pub fn new(rng: &'r mut R, low_branching: bool) -> Self {
        ProgramGen { rng, low_branching, max_stmts: 4 }
    }

    fn expr(&mut self, from: &[Var]) -> Expr {
        let d = self.rng.gen_range(1..=3);
        random_expr(self.rng, from, d)
    }

    fn stmts(&mut self, held_k: bool, held_m: bool, loop_depth: usize, budget: usize) -> Cmd {
        let n = self.rng.gen_range(1..=budget.max(1));
        let mut out = Vec::new();
        for _ in 0..n {
            out.push(self.stmt(held_k, held_m, loop_depth));
        }
        Cmd::seq_all(out).expect("at least one statement")
    }

    fn stmt(&mut self, held_k: bool, held_m: bool, loop_depth: usize) -> Cmd {
        let mut low = Vec::new();
        let mut any = Vec::new();
        if held_k {
            low.extend(vars(&["a", "b", "i", "j"]));
            any.extend(vars(&["a", "b", "i", "j", "s", "h"]));
        }
        if held_m {
            any.push(Var::new("d"));
        }
        let (cond_vars, low_src) = if self.low_branching { (low.clone(), low.clone()) } else { (any.clone(), any.clone()) };
        let mut low_dst = vec![Var::new("out")];
        let mut high_dst = vec![Var::new("hout")];
        if held_k {
            low_dst.extend(vars(&["a", "b"]));
            high_dst.extend(vars(&["s", "h"]));
        }
        if held_m {
            high_dst.push(Var::new("d"));
        }
        let roll = self.rng.gen_range(0..10);
        match roll {
            0 => Cmd::Skip,
            1..=5 => {
                if self.rng.gen_bool(0.5) {
                    let v = low_dst.choose(self.rng).expect("out").clone();
                    let e = self.expr(&low_src);
                    Cmd::Assign(v, e)
                } else {
                    let v = high_dst.choose(self.rng).expect("hout").clone();
                    let e = self.expr(&any);
                    Cmd::Assign(v, e)
                }
            }
            6..=7 if loop_depth < 3 => {
                let c = self.expr(&cond_vars);
                let a = self.stmts(held_k, held_m, loop_depth + 1, 2);
                let b = self.stmts(held_k, held_m, loop_depth + 1, 2);
                Cmd::if_(c, a, b)
            }
            _ if held_k && loop_depth < 2 => {
                let ctr = if loop_depth == 0 { "i" } else { "j" };
                let bound = self.rng.gen_range(1..=3);
                let body = self.stmts(held_k, held_m, loop_depth + 1, 2);
                let bump = Cmd::assign(ctr, Expr::bin(BinOp::Add, Expr::var(ctr), Expr::Const(1)));
                Cmd::seq(
                    Cmd::assign(ctr, Expr::Const(0)),
                    Cmd::while_(Expr::bin(BinOp::Lt, Expr::var(ctr), Expr::Const(bound)), Cmd::seq(body, bump)),
                )
            }
            _ => {
                let v = low_dst.choose(self.rng).expect("out").clone();
                Cmd::Assign(v, Expr::Const(self.rng.gen_range(-8..=8)))
            }
        }
    }

    /// A sequence of blocks, each either an unguarded sink write or a
    /// critical section.
    pub fn program(&mut self) -> Cmd {
        let blocks = self.rng.gen_range(1..=4);
        let mut out = Vec::new();
        for _ in 0..blocks {
            let budget = self.max_stmts;
            let block = match self.rng.gen_range(0..5) {
                0 => {
                    let v = if self.rng.gen_bool(0.5) { "out" } else { "hout" };
                    Cmd::assign(v, Expr::Const(self.rng.gen_range(-8..=8)))
                }
                1 | 2 => Cmd::seq_all([Cmd::acquire("k"), self.stmts(true, false, 0, budget), Cmd::release("k")])
                    .expect("nonempty"),
                3 => Cmd::seq_all([Cmd::acquire("m"), self.stmts(false, true, 0, budget), Cmd::release("m")])
                    .expect("nonempty"),
                _ => Cmd::seq_all([
                    Cmd::acquire("k"),
                    Cmd::acquire("m"),
                    self.stmts(true, true, 0, budget),
                    Cmd::release("m"),
                    Cmd::release("k"),
                ])
                .expect("nonempty"),
            };
            out.push(block);
        }
        Cmd::seq_all(out).expect("at least one block")
    }
}

/// Policy for the tiny cross-validation instances: `x`, `y` Low, `h` High,
/// all write-guarded by `k`.
pub fn tiny_policy() -> Policy {
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
    .expect("tiny policy is well formed")
}

pub const TINY_DOMAIN: [Value; 2] = [0, 1];

fn bool_expr<R: Rng>(rng: &mut R, from: &[Var], depth: usize) -> Expr {
    const OPS: [BinOp; 5] = [BinOp::Eq, BinOp::Ne, BinOp::Lt, BinOp::And, BinOp::Or];
    if depth <= 1 || rng.gen_bool(0.4) {
        return if rng.gen_bool(0.75) {
            Expr::Var(from.choose(rng).expect("nonempty").clone())
        } else {
            Expr::Const(rng.gen_range(0..=1))
        };
    }
    let op = *OPS.choose(rng).expect("operators");
    Expr::bin(op, bool_expr(rng, from, depth - 1), bool_expr(rng, from, depth - 1))
}

fn tiny_stmt<R: Rng>(rng: &mut R, writable_low: &[&str]) -> Cmd {
    let low = vars(&["x", "y"]);
    let all = vars(&["x", "y", "h"]);
    match rng.gen_range(0..5) {
        0 => Cmd::Skip,
        1 | 2 => {
            let v = writable_low.choose(rng).expect("target");
            Cmd::assign(v, bool_expr(rng, &low, 2))
        }
        _ => Cmd::assign("h", bool_expr(rng, &all, 2)),
    }
}

/// Secure-by-construction program over [`tiny_policy`] whose values stay in
/// `{0, 1}`. It always contains a conditional followed by more work, and
/// sometimes a loop, so both kinds of epilogue are exercised.
pub fn tiny_program<R: Rng>(rng: &mut R) -> Cmd {
    let low = vars(&["x", "y"]);
    let mut body = vec![Cmd::acquire("k")];
    for _ in 0..rng.gen_range(0..=1) {
        body.push(tiny_stmt(rng, &["x", "y"]));
    }
    let cond = bool_expr(rng, &low, 2);
    let a = tiny_stmt(rng, &["x", "y"]);
    let b = if rng.gen_bool(0.5) { Cmd::Skip } else { tiny_stmt(rng, &["x", "y"]) };
    body.push(Cmd::if_(cond, a, b));
    body.push(Cmd::assign(["x", "y"].choose(rng).expect("target"), bool_expr(rng, &low, 2)));
    if rng.gen_bool(0.4) {
        // Runs at most once: the body clears the condition first.
        let inner = Cmd::seq(Cmd::assign("x", Expr::Const(0)), tiny_stmt(rng, &["y"]));
        body.push(Cmd::while_(Expr::var("x"), inner));
    }
    body.push(Cmd::release("k"));
    Cmd::seq_all(body).expect("nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::Compiler;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn expressions_respect_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vs = vars(&["a", "b", "c", "d"]);
        for _ in 0..500 {
            let e = random_expr(&mut rng, &vs, 5);
            assert!(e.depth() <= 5);
            assert!(e.vars().iter().all(|v| vs.contains(v)));
        }
    }

    #[test]
    fn generated_programs_compile() {
        let p = gen_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for low in [false, true] {
            for _ in 0..200 {
                let c = ProgramGen::new(&mut rng, low).program();
                if let Err(e) = Compiler::new(&p).compile(&c) {
                    panic!("{e}\n{c}");
                }
            }
        }
    }

    #[test]
    fn tiny_programs_compile() {
        let p = tiny_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let c = tiny_program(&mut rng);
            assert!(Compiler::new(&p).compile(&c).is_ok(), "{c}");
        }
    }
}
