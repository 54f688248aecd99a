mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{oracle_eval, oracle_low_eq};
use wrc_core::compiler::Compiler;
use wrc_core::gen::{gen_policy, random_expr, ProgramGen};
use wrc_core::lang::{AsmRec, Memory, Mode, ModeState, Value, Var};
use wrc_core::policy::Policy;
use wrc_core::risc::RiscConfig;
use wrc_core::syntax::{emit_asm, parse_asm, parse_expr, parse_program, read_annotations, write_annotations};
use wrc_core::while_lang::{Cmd, Outcome, WhileConfig};

fn vars(p: &Policy) -> Vec<Var> {
    p.universe.iter().cloned().collect()
}

fn memory(p: &Policy, rng: &mut ChaCha8Rng, lo: Value, hi: Value) -> Memory {
    let mut m = p.zero_memory();
    for v in &p.universe {
        m.insert(v.clone(), rng.gen_range(lo..=hi));
    }
    m
}

fn env_of(m: &Memory) -> BTreeMap<Var, Value> {
    m.iter().map(|(v, x)| (v.clone(), x)).collect()
}

fn modes(p: &Policy, rng: &mut ChaCha8Rng) -> ModeState {
    let mut mds = ModeState::new();
    for v in &p.universe {
        for m in Mode::ALL {
            if rng.gen_bool(0.2) {
                mds.get_mut(m).insert(v.clone());
            }
        }
    }
    mds
}

fn right_nested(c: &Cmd) -> Cmd {
    fn flat(c: &Cmd, out: &mut Vec<Cmd>) {
        match c {
            Cmd::Seq(a, b) => {
                flat(a, out);
                flat(b, out);
            }
            Cmd::If(e, a, b) => out.push(Cmd::if_(e.clone(), right_nested(a), right_nested(b))),
            Cmd::While(e, b) => out.push(Cmd::while_(e.clone(), right_nested(b))),
            c => out.push(c.clone()),
        }
    }
    let mut out = Vec::new();
    flat(c, &mut out);
    Cmd::seq_all(out).expect("nonempty")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn eval_agrees_with_oracle(seed in any::<u64>()) {
        let p = gen_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_expr(&mut rng, &vars(&p), 6);
        let m = memory(&p, &mut rng, Value::MIN, Value::MAX);
        prop_assert_eq!(e.eval(&m).unwrap(), oracle_eval(&e, &env_of(&m)));
    }

    #[test]
    fn eval_only_depends_on_mentioned_vars(seed in any::<u64>(), bump in any::<Value>()) {
        let p = gen_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vs = vars(&p);
        let e = random_expr(&mut rng, &vs[..4], 5);
        let m = memory(&p, &mut rng, -50, 50);
        let mut m2 = m.clone();
        for v in &vs[4..] {
            m2.insert(v.clone(), bump);
        }
        prop_assert_eq!(e.eval(&m).unwrap(), e.eval(&m2).unwrap());
    }

    #[test]
    fn expressions_print_and_parse_back(seed in any::<u64>()) {
        let p = gen_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_expr(&mut rng, &vars(&p), 6);
        prop_assert_eq!(parse_expr(&e.to_string()).unwrap(), e);
    }

    // Sequencing has no concrete syntax for its grouping, so the round trip
    // holds up to reassociation.
    #[test]
    fn programs_print_and_parse_back(seed in any::<u64>(), low in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = ProgramGen::new(&mut rng, low).program();
        let back = parse_program(&c.to_string()).unwrap();
        prop_assert_eq!(back.to_string(), c.to_string());
        prop_assert_eq!(right_nested(&back), right_nested(&c));
    }

    #[test]
    fn assembly_and_annotations_round_trip(seed in any::<u64>()) {
        let p = gen_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = ProgramGen::new(&mut rng, false).program();
        let compiled = Compiler::new(&p).compile(&c).unwrap();
        let text = emit_asm(&compiled.program);
        let prog = parse_asm(&text).unwrap();
        prop_assert_eq!(&prog, compiled.program.as_ref());
        let back = read_annotations(prog, compiled.nregs, &write_annotations(&compiled)).unwrap();
        prop_assert_eq!(back.annots, compiled.annots);
        prop_assert_eq!(back.final_rec, compiled.final_rec);
    }

    #[test]
    fn compilation_is_deterministic_with_fresh_labels(seed in any::<u64>()) {
        let p = gen_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = ProgramGen::new(&mut rng, false).program();
        let a = Compiler::new(&p).compile(&c).unwrap();
        let b = Compiler::new(&p).compile(&c).unwrap();
        prop_assert_eq!(&a.program, &b.program);
        let labels: Vec<_> = a.program.instrs().iter().filter_map(|i| i.label).collect();
        let distinct: BTreeSet<_> = labels.iter().collect();
        prop_assert_eq!(labels.len(), distinct.len());
    }

    #[test]
    fn compiled_code_ends_where_the_source_does(seed in any::<u64>()) {
        let p = gen_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = ProgramGen::new(&mut rng, false).program();
        let compiled = Compiler::new(&p).compile(&c).unwrap();
        let m = memory(&p, &mut rng, -8, 8);
        let mut src = WhileConfig::new(c.clone(), p.initial_mds(), m.clone());
        while src.step(&p).unwrap() == Outcome::Progressed {}
        let mut tgt = RiscConfig::new(Arc::clone(&compiled.program), compiled.nregs, p.initial_mds(), m);
        while tgt.step(&p).unwrap() == Outcome::Progressed {}
        prop_assert_eq!(&src.mem, &tgt.mem);
        prop_assert_eq!(&src.mds, &tgt.mds);
    }

    #[test]
    fn low_equivalence_agrees_with_oracle(seed in any::<u64>()) {
        let p = gen_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mds = modes(&p, &mut rng);
        let m1 = memory(&p, &mut rng, 0, 1);
        let m2 = memory(&p, &mut rng, 0, 1);
        prop_assert_eq!(p.low_mds_eq(&mds, &m1, &m2), oracle_low_eq(&p, &mds, &m1, &m2));
        prop_assert!(p.low_mds_eq(&mds, &m1, &m1));
    }

    #[test]
    fn stability_grows_with_assumptions(seed in any::<u64>()) {
        let p = gen_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vs = vars(&p);
        let mut small = AsmRec::new();
        let mut big = AsmRec::new();
        for v in &vs {
            match rng.gen_range(0..4) {
                0 => { small.no_write.insert(v.clone()); big.no_write.insert(v.clone()); }
                1 => { big.no_read_write.insert(v.clone()); }
                2 => { big.no_write.insert(v.clone()); }
                _ => {}
            }
        }
        for v in &vs {
            prop_assert!(!p.var_stable(&small, v) || p.var_stable(&big, v));
        }
    }

    #[test]
    fn stepping_is_deterministic(seed in any::<u64>()) {
        let p = gen_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = ProgramGen::new(&mut rng, false).program();
        let m = memory(&p, &mut rng, -8, 8);
        let mut a = WhileConfig::new(c.clone(), p.initial_mds(), m.clone());
        let mut b = WhileConfig::new(c, p.initial_mds(), m);
        for _ in 0..200 {
            let (x, y) = (a.step(&p).unwrap(), b.step(&p).unwrap());
            prop_assert_eq!(x, y);
            prop_assert_eq!(&a, &b);
            if x != Outcome::Progressed {
                break;
            }
        }
    }
}
