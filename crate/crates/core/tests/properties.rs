mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::random_shape;
use shapelib::dream::{check, check_prims, sample_dream, DreamConfig, BASE_FUNCTIONS};
use shapelib::dsl::{execute, fold_constants, inline, parse_expr, parse_expr_in_body, Abstraction, Library, Primitive, Scene, Sort};
use shapelib::egraph::{Conditional, RefactorConfig, Refactorer};
use shapelib::objective::hungarian::assign;
use shapelib::objective::{complexity, match_primitives, program_cost, MatchMode};

fn shape(seed: u64, depth: usize) -> shapelib::Expr {
    random_shape(&mut ChaCha8Rng::seed_from_u64(seed), depth)
}

fn mirror_lib() -> Library {
    let mut lib = Library::default();
    let params = vec![Sort::Float, Sort::Float];
    let body = parse_expr_in_body("SymRef(Move(Rect(P0,P1),Add(P0,P1),Sub(P1,P0)),AX)", &lib, &params).unwrap();
    lib.add(Abstraction { name: "Abs_0".into(), params, body, omega: 0.25 }).unwrap();
    lib
}

fn brute(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut [bool]) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[row][j] + go(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost[0].len()])
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 0usize..3).prop_flat_map(|(n, extra)| prop::collection::vec(prop::collection::vec(0.0f64..1.0, n + extra), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn print_parse_roundtrip(seed in any::<u64>(), depth in 0usize..4) {
        let lib = Library::default();
        let e = shape(seed, depth);
        prop_assert_eq!(parse_expr(&e.to_string(), &lib).unwrap(), e);
    }

    #[test]
    fn assignment_is_optimal(cost in matrix()) {
        let a = assign(&cost);
        prop_assert_eq!(a.len(), cost.len());
        let mut seen = a.clone();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), a.len());
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        prop_assert!((total - brute(&cost)).abs() < 1e-9);
    }

    #[test]
    fn matching_ignores_order(seed in any::<u64>(), depth in 0usize..4, rot in 0usize..16) {
        let lib = Library::default();
        let out = execute(&shape(seed, depth), &lib).unwrap();
        let mut target = out.clone();
        let k = rot % target.len();
        target.rotate_left(k);
        let m = match_primitives(&out, &target, lib.config.max_prim_error, MatchMode::Program).unwrap().unwrap();
        prop_assert!(m.error < 1e-12);
        for (i, &j) in m.assignment.iter().enumerate() {
            prop_assert!(out[i].distance(&target[j]) < 1e-12);
        }
    }

    #[test]
    fn own_output_costs_only_tokens(seed in any::<u64>(), depth in 0usize..4) {
        let lib = Library::default();
        let e = shape(seed, depth);
        let scene = Scene { id: "s".into(), prims: execute(&e, &lib).unwrap() };
        prop_assert!((program_cost(&e, &scene, &lib).unwrap() - complexity(&e, &lib)).abs() < 1e-9);
    }

    #[test]
    fn inlining_preserves_output(a in 0.05f64..0.4, b in 0.05f64..0.4, seed in any::<u64>()) {
        let lib = mirror_lib();
        let call = parse_expr(&format!("Union(Abs_0({a},{b}),{})", shape(seed, 1)), &lib).unwrap();
        let flat = inline(&call, &lib).unwrap();
        prop_assert!(flat.called().is_empty());
        prop_assert_eq!(execute(&flat, &lib).unwrap(), execute(&call, &lib).unwrap());
        // folding rounds to 1e-9
        let folded = execute(&fold_constants(&flat), &lib).unwrap();
        let direct = execute(&call, &lib).unwrap();
        prop_assert_eq!(folded.len(), direct.len());
        prop_assert!(folded.iter().zip(&direct).all(|(p, q)| p.distance(q) < 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn refactoring_never_costs_more_and_keeps_the_scene(seed in any::<u64>(), depth in 1usize..4) {
        let lib = mirror_lib();
        let e = shape(seed, depth);
        let before = execute(&e, &lib).unwrap();
        let r = Refactorer::new(&lib, &Conditional, &RefactorConfig::default());
        let out = r.refactor(&e).unwrap();
        prop_assert!(!out.unsound);
        prop_assert!(out.output_cost <= out.input_cost + 1e-9);
        prop_assert!((complexity(&out.program, &lib) - out.output_cost).abs() < 1e-9);
        let after = execute(&out.program, &lib).unwrap();
        prop_assert!(match_primitives(&after, &before, lib.config.max_prim_error, MatchMode::Program).unwrap().is_some());
    }

    #[test]
    fn dreams_pass_the_rejection_rules(seed in any::<u64>(), f in 0usize..6) {
        let lib = mirror_lib();
        let cfg = DreamConfig::default();
        let name = BASE_FUNCTIONS.get(f).copied().unwrap_or("Abs_0");
        let d = sample_dream(name, &lib, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&d.source, name);
        prop_assert_eq!(check(&d.expr, &lib, &cfg).unwrap(), d.prims.clone());
        prop_assert!(check_prims(&d.prims, &cfg).is_ok());
        prop_assert!(d.prims.iter().all(Primitive::is_finite));
    }
}
