use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn shapelib(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapelib")).args(args).env_remove("SHAPELIB_CONFIG").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = shapelib(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const MIRROR_LIB: &str = r#"{"abstractions": [{"name": "Abs_0", "params": ["FLOAT", "FLOAT"],
  "body": "SymRef(Move(Rect(P0,P1),Add(P0,P1),Sub(P1,P0)),AX)", "omega": 0.25}]}"#;

#[test]
fn gen_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("scenes.jsonl");
    let out = dir.path().join("run");
    ok(&["gen-data", "--n", "12", "--seed", "3", "--out", p(&corpus)]);
    assert_eq!(fs::read_to_string(&corpus).unwrap().lines().count(), 12);
    let text = ok(&["run", "--corpus", p(&corpus), "--out", p(&out), "--rounds", "0"]);
    assert!(text.contains("0 abstractions accepted"), "{text}");
    assert!(out.join("programs_r0.jsonl").exists());
    let text = ok(&["report", "--dir", p(&out)]);
    assert!(text.contains("scenes 12"), "{text}");
    assert!(text.contains("r0 naive"), "{text}");
}

#[test]
fn render_scene_and_expr() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("scenes.jsonl");
    ok(&["gen-data", "--n", "2", "--out", p(&corpus)]);
    let svg = dir.path().join("a.svg");
    ok(&["render", "--corpus", p(&corpus), "--index", "1", "--out", p(&svg)]);
    assert!(fs::read_to_string(&svg).unwrap().contains("<rect"));
    ok(&["render", "--expr", "SymRef(Move(Rect(0.1,0.2),0.3,0.1),AX)", "--out", p(&svg)]);
    assert_eq!(fs::read_to_string(&svg).unwrap().matches("<rect").count(), 2);
}

#[test]
fn refactor_uses_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("lib.json");
    fs::write(&lib, MIRROR_LIB).unwrap();
    let text = ok(&["refactor", "--lib", p(&lib), "SymRef(Move(Rect(0.1,0.2),0.3,0.1),AX)"]);
    assert_eq!(text.trim(), "Abs_0(0.1,0.2)");
    let text = ok(&["--set", "scheme=naive", "refactor", "--lib", p(&lib), "SymRef(Move(Rect(0.1,0.2),0.3,0.1),AX)"]);
    assert_eq!(text.trim(), "Abs_0(0.1,0.2)");
}

#[test]
fn bench_small() {
    let text = ok(&["bench-rewrites", "--params", "4,8", "--timeout", "20"]);
    assert_eq!(text.lines().count(), 3, "{text}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = shapelib(&["--set", "no_such_key=1", "render", "--expr", "Rect(0.1,0.1)", "--out", "x.svg"]);
    assert_eq!(out.status.code(), Some(3));
    let out = shapelib(&["--set", "scheme=bogus", "refactor", "--lib", "missing.json", "Rect(0.1,0.1)"]);
    assert_eq!(out.status.code(), Some(4));

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "not json\n").unwrap();
    let out = shapelib(&["run", "--corpus", p(&bad), "--out", p(&dir.path().join("o")), "--rounds", "0"]);
    assert_eq!(out.status.code(), Some(4));
    let lib = dir.path().join("lib.json");
    fs::write(&lib, MIRROR_LIB).unwrap();
    let out = shapelib(&["--set", "scheme=bogus", "refactor", "--lib", p(&lib), "Rect(0.1,0.1)"]);
    assert_eq!(out.status.code(), Some(3));
    let out = shapelib(&["refactor", "--lib", p(&lib), "Rect(0.1"]);
    assert_eq!(out.status.code(), Some(4));
    let out = shapelib(&["bench-rewrites", "--params", "6"]);
    assert_eq!(out.status.code(), Some(3));
    let out = shapelib(&["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("scenes.jsonl");
    ok(&["gen-data", "--n", "5", "--out", p(&corpus)]);
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("from_env");
    fs::write(&cfg, format!("corpus = {:?}\nout_dir = {:?}\nrounds = 0\n", p(&corpus), p(&out))).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_shapelib")).arg("run").env("SHAPELIB_CONFIG", &cfg).output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(out.join("summary.json").exists());

    fs::write(&cfg, "rounds = \"three\"\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_shapelib")).arg("run").env("SHAPELIB_CONFIG", &cfg).output().unwrap();
    assert_eq!(status.status.code(), Some(3));
}
