//! Conditional vs naive abstraction rewriting on a synthetic family of
//! programs whose size is controlled by the number of float parameters.

use std::time::Duration;

use serde::Serialize;

use super::{saturate, Budget, EGraph, RewriteScheme, StopReason};
use crate::dsl::{parse_expr_in_body, Abstraction, Axis, Expr, Library, Sort};

pub const BENCH_ABSTRACTION: &str = "SymRef(Move(Rect(P0,P1),Add(P0,P1),Add(Sub(P1,P0),P1)),AX)";

/// Library holding only the benchmark abstraction, with semantic rewrites
/// disabled so the measurement isolates abstraction matching.
pub fn bench_library() -> Library {
    let mut lib = Library::default();
    lib.semantic_rewrites.clear();
    let params = vec![Sort::Float, Sort::Float];
    let body = parse_expr_in_body(BENCH_ABSTRACTION, &lib, &params).expect("bench body parses");
    lib.add(Abstraction { name: "Abs_B".into(), params, body, omega: 0.25 }).expect("valid abstraction");
    lib
}

/// `n / 4` reflected blocks `SymRef(Move(Rect(a,b), a+b, 2b-a), AX)`,
/// union-chained. Each block carries four float parameters. Values are off
/// any decimal grid so sums and differences of unrelated slots rarely
/// coincide.
pub fn bench_program(n_params: usize) -> Expr {
    assert!(n_params >= 4 && n_params.is_multiple_of(4));
    let blocks: Vec<Expr> = (0..n_params / 4)
        .map(|i| {
            let a = 0.03 + 0.01137 * i as f64;
            let b = 0.10 + 0.01913 * i as f64;
            let c = a + b;
            let d = 2.0 * b - a;
            Expr::symref(Expr::placed(a, b, c, d), Axis::X)
        })
        .collect();
    crate::dsl::fold_union(blocks).unwrap()
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchCell {
    pub params: usize,
    pub scheme: String,
    pub seconds: f64,
    pub saturated: bool,
    pub stop: StopReason,
    pub nodes: usize,
    pub calls_found: usize,
}

impl BenchCell {
    pub fn display(&self) -> String {
        if self.saturated {
            format!("{:.3}", self.seconds)
        } else {
            "X".into()
        }
    }
}

pub fn bench_cell(n_params: usize, scheme: &dyn RewriteScheme, timeout: Duration, max_nodes: usize) -> BenchCell {
    let lib = bench_library();
    let rules = scheme.rules(&lib);
    let p = bench_program(n_params);
    let mut g = EGraph::from_expr(&p, &lib, 0.005);
    let budget = Budget { rounds: usize::MAX, max_nodes, time: timeout };
    let report = saturate(&mut g, &rules, &budget, 0.005);
    let calls_found = g.count_nodes(|op| matches!(op, super::ENodeOp::Call(_)));
    BenchCell {
        params: n_params,
        scheme: scheme.name().to_string(),
        seconds: report.elapsed.as_secs_f64(),
        saturated: report.stop == StopReason::Saturated,
        stop: report.stop,
        nodes: report.nodes,
        calls_found,
    }
}
