use shapelib::dsl::{execute, split_union, Scene};
use shapelib::objective::program_cost;
use shapelib::wake::{
    naive_program, wake_solve, Proposer, Request, SearchProposer, StepBudget, SubprocessProposer, WakeConfig,
};
use shapelib::{Library, Primitive};

fn budget() -> StepBudget {
    StepBudget::from(&WakeConfig::default())
}

fn scene(prims: &[[f64; 4]]) -> Scene {
    Scene { id: "t".into(), prims: prims.iter().map(|&a| a.into()).collect() }
}

#[test]
fn subprocess_expressions_are_parsed_and_bad_ones_dropped() {
    let p = SubprocessProposer::spawn(
        r#"while read -r line; do echo '{"expressions":["SymRef(Move(Rect(0.2,0.3),0.4,0.1),AX)","Rect(((","Bogus(1)"]}'; done"#,
    )
    .unwrap();
    let lib = Library::default();
    let d = scene(&[[0.2, 0.3, 0.4, 0.1], [0.2, 0.3, -0.4, 0.1]]);
    let got = p.propose(&d.prims, &lib, &budget()).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(p.dropped(), 2);
    let r = wake_solve(&d, &lib, &p, &budget()).unwrap();
    assert_eq!(r.program.to_string(), "SymRef(Move(Rect(0.2,0.3),0.4,0.1),AX)");
}

#[test]
fn subprocess_receives_request_fields() {
    // Echo the request back inside an error so the test can inspect it.
    let p = SubprocessProposer::spawn(
        r#"while read -r line; do printf '{"error":%s}\n' "$(printf '%s' "$line" | sed 's/"/\\"/g; s/^/"/; s/$/"/')"; done"#,
    )
    .unwrap();
    let lib = Library::default();
    let prims = vec![Primitive::new(0.1, 0.2, 0.3, 0.4)];
    let err = p.propose(&prims, &lib, &budget()).unwrap_err().to_string();
    let json = err.trim_start_matches("proposer reported: ");
    let req: Request = serde_json::from_str(json).unwrap();
    assert_eq!(req.prims, prims);
    assert_eq!(req.batch, 256);
    assert_eq!(req.time_budget, 1.0);
}

#[test]
fn failing_subprocess_falls_back_to_naive() {
    let p = SubprocessProposer::spawn("exit 0").unwrap();
    let lib = Library::default();
    let d = scene(&[[0.2, 0.3, 0.4, 0.1], [0.1, 0.1, 0.0, 0.0]]);
    let r = wake_solve(&d, &lib, &p, &budget()).unwrap();
    assert!(r.proposer_errors > 0);
    assert!(program_cost(&r.program, &d, &lib).is_some());
}

#[test]
fn search_wake_is_sound_and_no_worse_than_naive() {
    use rand::{Rng, SeedableRng};
    let lib = Library::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let r2 = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| (rng.random_range(lo..hi) * 100.0f64).round() / 100.0;
    for _ in 0..30 {
        let mut prims = Vec::new();
        while prims.len() < 8 {
            let (w, h, x, y) = (r2(&mut rng, 0.05, 0.3), r2(&mut rng, 0.05, 0.3), r2(&mut rng, 0.0, 0.6), r2(&mut rng, -0.6, 0.6));
            prims.push([w, h, x, y]);
            if rng.random_bool(0.5) {
                prims.push([w, h, -x, y]);
            }
        }
        let d = scene(&prims);
        let r = wake_solve(&d, &lib, &SearchProposer::default(), &budget()).unwrap();
        let c = program_cost(&r.program, &d, &lib).expect("wake program explains its scene");
        let naive = program_cost(&naive_program(&d).unwrap(), &d, &lib).unwrap();
        assert!(c <= naive + 1e-9, "{c} > {naive}");
        assert_eq!(execute(&r.program, &lib).unwrap().len(), d.prims.len());
        assert_eq!(split_union(&r.program).len(), r.steps.len());
    }
}
