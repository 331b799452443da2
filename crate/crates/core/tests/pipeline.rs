use std::fs;
use std::path::Path;

use shapelib::dream::{gen_synthetic_corpus, DreamRecord};
use shapelib::dsl::{parse_expr, write_corpus, Library, Scene};
use shapelib::pipeline::{phi, read_trace, recompute_f, run, run_on, wake_all, PipelineError, RunConfig};

fn small_cfg(out: &Path) -> RunConfig {
    RunConfig { out_dir: out.to_path_buf(), rounds: 2, n_d: 20, proposal_iters: 300, n_a: 8, ..RunConfig::default() }
}

fn corpus(n: usize) -> Vec<Scene> {
    gen_synthetic_corpus(n, 4).0
}

#[test]
fn zero_rounds_emit_naive_programs_only() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = corpus(10);
    let cfg = RunConfig { rounds: 0, ..small_cfg(dir.path()) };
    let out = run_on(&cfg, &scenes).unwrap();
    assert_eq!(out.trace.len(), 1);
    assert_eq!(out.trace[0].phase, "naive");
    assert_eq!(out.summary.final_f, out.summary.naive_f);
    assert!(dir.path().join("programs_r0.jsonl").exists());
    assert!(!dir.path().join("library_r1.json").exists());
    let f = recompute_f(&dir.path().join("library_r0.json"), &dir.path().join("programs_r0.jsonl"), &scenes).unwrap();
    assert!((f - out.summary.naive_f).abs() < 1e-9);
}

#[test]
fn artifacts_reload_and_trace_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = corpus(40);
    let cfg = small_cfg(dir.path());
    let out = run_on(&cfg, &scenes).unwrap();
    let trace = read_trace(&dir.path().join("f_trace.csv")).unwrap();
    assert_eq!(trace, out.trace);
    for w in trace.windows(2) {
        assert!(w[1].f <= w[0].f + 1e-9, "{:?} -> {:?}", w[0], w[1]);
    }
    assert!(out.summary.final_f < out.summary.naive_f);
    for r in 0..=cfg.rounds {
        let lib = dir.path().join(format!("library_r{r}.json"));
        let progs = dir.path().join(format!("programs_r{r}.jsonl"));
        let f = recompute_f(&lib, &progs, &scenes).unwrap();
        let last = trace.iter().rfind(|t| t.round == r).unwrap();
        assert!((f - last.f).abs() < 1e-6, "round {r}: {f} vs {}", last.f);
    }
    assert_eq!(out.summary.soundness.violations, 0);
    assert!(out.summary.soundness.max_drift <= 1e-6);
}

#[test]
fn same_seed_same_library() {
    let scenes = corpus(30);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_on(&small_cfg(a.path()), &scenes).unwrap();
    run_on(&small_cfg(b.path()), &scenes).unwrap();
    for r in 0..=2 {
        let name = format!("library_r{r}.json");
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
        let name = format!("programs_r{r}.jsonl");
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
    }
}

#[test]
fn dream_export_lines_parse() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = corpus(20);
    let cfg = RunConfig { rounds: 1, ..small_cfg(dir.path()) };
    run_on(&cfg, &scenes).unwrap();
    let lib = Library::default();
    let text = fs::read_to_string(dir.path().join("dreams_r1.jsonl")).unwrap();
    let mut sources = std::collections::BTreeSet::new();
    for line in text.lines() {
        let r: DreamRecord = serde_json::from_str(line).unwrap();
        let e = parse_expr(&r.target, &lib).unwrap();
        assert_eq!(e.tokens(), r.target_tokens);
        assert!(!r.scene.is_empty() && r.scene.len() <= 16);
        sources.insert(r.source);
    }
    for f in ["Rect", "Move", "SymRef", "SymTrans", "Union"] {
        assert!(sources.contains(f), "no dreams for {f}");
    }
}

#[test]
fn phi_with_base_library_matches_wake() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = corpus(15);
    let cfg = small_cfg(dir.path());
    let lib = Library::default();
    let woken = wake_all(&lib, &scenes, &cfg).unwrap();
    let p = phi(&lib, &scenes, &cfg).unwrap();
    assert!((p.f - woken.f()).abs() < 1e-9, "{} vs {}", p.f, woken.f());
    assert_eq!(p.mean_calls, 0.0);
}

#[test]
fn corpus_errors_surface() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    fs::write(&path, "{\"id\": \"a\", \"prims\": [[0.1, 0.1, 0, 0]]}\nnot json\n").unwrap();
    let cfg = RunConfig { corpus: path, ..small_cfg(dir.path()) };
    assert!(matches!(run(&cfg), Err(PipelineError::Corpus(_))));

    let path = dir.path().join("ok.jsonl");
    write_corpus(&path, &corpus(3)).unwrap();
    let cfg = RunConfig { corpus: path, rounds: 0, ..small_cfg(dir.path()) };
    assert!(run(&cfg).is_ok());
}
