//! Wake: infer a program for each scene by repeatedly choosing the cheapest
//! proposed expression per explained primitive, then merging with earlier
//! rounds.

mod combine;
mod search;
mod subprocess;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use combine::{combine, CacheEntry, CombineError, Combined, ExprCache, Variant};
pub use search::SearchProposer;
pub use subprocess::{SubprocessProposer, Request, Response};

use crate::dsl::{execute, fold_union, Expr, Library, Primitive, Scene};
use crate::objective::{match_primitives, program_complexity, MatchMode};
use crate::registry::Registry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WakeConfig {
    pub proposer: String,
    /// Candidate batch size requested from sampling proposers.
    pub batch: usize,
    pub max_candidates: usize,
    #[serde(with = "crate::egraph::runner::secs")]
    pub step_time: Duration,
    /// Command line for the subprocess proposer.
    pub command: Option<String>,
}

impl Default for WakeConfig {
    fn default() -> Self {
        WakeConfig {
            proposer: "search".into(),
            batch: 256,
            max_candidates: 20_000,
            step_time: Duration::from_secs(1),
            command: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepBudget {
    pub batch: usize,
    pub max_candidates: usize,
    pub time: Duration,
}

impl From<&WakeConfig> for StepBudget {
    fn from(c: &WakeConfig) -> Self {
        StepBudget { batch: c.batch, max_candidates: c.max_candidates, time: c.step_time }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProposerError {
    #[error("proposer process: {0}")]
    Io(#[from] std::io::Error),
    #[error("proposer protocol: {0}")]
    Protocol(String),
    #[error("proposer reported: {0}")]
    Remote(String),
}

/// Source of candidate SHAPE expressions for the remaining canvas. Callers
/// always add the naive per-primitive expressions themselves.
pub trait Proposer: Send + Sync {
    fn name(&self) -> &str;
    fn propose(&self, canvas: &[Primitive], lib: &Library, budget: &StepBudget) -> Result<Vec<Expr>, ProposerError>;
}

/// Proposes nothing; wake then falls back to naive expressions only.
pub struct NaiveProposer;

impl Proposer for NaiveProposer {
    fn name(&self) -> &str {
        "naive"
    }

    fn propose(&self, _: &[Primitive], _: &Library, _: &StepBudget) -> Result<Vec<Expr>, ProposerError> {
        Ok(Vec::new())
    }
}

/// Built-in proposers. The subprocess proposer needs a command line and is
/// registered only when one is configured.
pub fn proposer_registry(cfg: &WakeConfig) -> Result<Registry<dyn Proposer>, ProposerError> {
    let mut r: Registry<dyn Proposer> = Registry::new("proposer");
    r.register("naive", Arc::new(NaiveProposer));
    r.register("search", Arc::new(SearchProposer::default()));
    if let Some(cmd) = &cfg.command {
        r.register("subprocess", Arc::new(SubprocessProposer::spawn(cmd)?));
    }
    Ok(r)
}

/// `Move(Rect(w,h),x,y)`, or `Rect(w,h)` at the origin.
pub fn naive_expr(p: &Primitive) -> Expr {
    if p.x == 0.0 && p.y == 0.0 {
        Expr::rect(p.w, p.h)
    } else {
        Expr::placed(p.w, p.h, p.x, p.y)
    }
}

/// Union of per-primitive expressions; `None` for an empty scene.
pub fn naive_program(d: &Scene) -> Option<Expr> {
    fold_union(d.prims.iter().map(naive_expr).collect())
}

/// One selected expression and the scene primitives it explains.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub expr: Expr,
    /// Indices into the scene, ascending.
    pub covered: Vec<usize>,
    /// Complexity plus weighted geometric error.
    pub cost: f64,
}

#[derive(Clone, Debug)]
pub struct WakeResult {
    pub program: Expr,
    pub steps: Vec<Step>,
    /// Proposer failures that forced a naive-only step.
    pub proposer_errors: usize,
}

/// Scores `e` against the remaining canvas. Returns the step with covered
/// indices mapped back through `remaining`, or `None` when invalid.
pub fn score(e: &Expr, canvas: &[Primitive], remaining: &[usize], lib: &Library) -> Option<Step> {
    let out = execute(e, lib).ok()?;
    if out.is_empty() {
        return None;
    }
    let m = match_primitives(&out, canvas, lib.config.max_prim_error, MatchMode::Partial).ok()??;
    let c = program_complexity(e, &lib.config.token_weights).ok()?;
    let mut covered: Vec<usize> = m.assignment.iter().map(|&j| remaining[j]).collect();
    covered.sort_unstable();
    Some(Step { expr: e.clone(), covered, cost: c + lib.config.error_weight * m.error })
}

struct Ranked {
    step: Step,
    per_prim: f64,
    tokens: usize,
    text: String,
}

fn better(a: &Ranked, b: &Ranked) -> bool {
    if (a.per_prim - b.per_prim).abs() > 1e-9 {
        return a.per_prim < b.per_prim;
    }
    if a.step.covered.len() != b.step.covered.len() {
        return a.step.covered.len() > b.step.covered.len();
    }
    if a.tokens != b.tokens {
        return a.tokens < b.tokens;
    }
    a.text < b.text
}

/// Picks the best-scoring candidate for the canvas.
pub fn select(candidates: &[Expr], canvas: &[Primitive], remaining: &[usize], lib: &Library) -> Option<Step> {
    let mut best: Option<Ranked> = None;
    for e in candidates {
        let Some(step) = score(e, canvas, remaining, lib) else { continue };
        let r = Ranked {
            per_prim: step.cost / step.covered.len() as f64,
            tokens: e.size(),
            text: e.to_string(),
            step,
        };
        if best.as_ref().is_none_or(|b| better(&r, b)) {
            best = Some(r);
        }
    }
    best.map(|r| r.step)
}

/// Step loop until the canvas is empty. Naive expressions are always among
/// the candidates, so every step covers at least one primitive.
pub fn wake_solve(d: &Scene, lib: &Library, proposer: &dyn Proposer, budget: &StepBudget) -> Option<WakeResult> {
    if d.prims.is_empty() {
        return None;
    }
    let mut remaining: Vec<usize> = (0..d.prims.len()).collect();
    let mut steps = Vec::new();
    let mut proposer_errors = 0;
    while !remaining.is_empty() {
        let canvas: Vec<Primitive> = remaining.iter().map(|&i| d.prims[i]).collect();
        let mut candidates = match proposer.propose(&canvas, lib, budget) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("scene {}: {} proposer failed: {e}", d.id, proposer.name());
                proposer_errors += 1;
                Vec::new()
            }
        };
        candidates.extend(canvas.iter().map(naive_expr));
        let step = select(&candidates, &canvas, &remaining, lib).expect("naive candidates always match");
        remaining.retain(|i| step.covered.binary_search(i).is_err());
        steps.push(step);
    }
    let program = fold_union(steps.iter().map(|s| s.expr.clone()).collect()).unwrap();
    Some(WakeResult { program, steps, proposer_errors })
}
