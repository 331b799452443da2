//! Equality saturation over programs. Abstraction rewrites bind parameters
//! structurally and check parametric relations against an e-class value
//! map, so saturation never has to enumerate arithmetic.

pub mod abstraction;
pub mod bench;
pub mod extract;
pub mod graph;
pub mod pattern;
pub mod runner;
pub mod semantic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use extract::{extract, Extractor};
pub use graph::{EClass, EGraph, ENode, ENodeOp, Id};
pub use pattern::{Cond, Pat, PatternRewrite, Rewrite, RewriteKind, Rhs, ValExpr};
pub use runner::{saturate, Budget, SaturationReport, StopReason};

use crate::dsl::{execute, Expr, Library};
use crate::objective::{complexity, match_primitives, MatchMode};
use crate::registry::Registry;

/// How abstraction rewrites are compiled.
pub trait RewriteScheme: Send + Sync {
    fn name(&self) -> &str;
    /// Full rule set (semantic + abstraction + scheme extras) for a library.
    fn rules(&self, lib: &Library) -> Vec<Arc<dyn Rewrite>>;
}

fn semantic_rules(lib: &Library) -> Vec<Arc<dyn Rewrite>> {
    let reg = semantic::registry();
    lib.semantic_rewrites.iter().filter_map(|n| reg.get(n).ok()).collect()
}

/// Value-conditioned abstraction rewrites.
pub struct Conditional;

impl RewriteScheme for Conditional {
    fn name(&self) -> &str {
        "conditional"
    }

    fn rules(&self, lib: &Library) -> Vec<Arc<dyn Rewrite>> {
        let mut rules = semantic_rules(lib);
        for a in lib.abstractions() {
            rules.push(Arc::new(abstraction::conditional_rewrite(a, lib)));
        }
        rules
    }
}

/// Structural abstraction rewrites plus bulk enumeration of arithmetic over
/// float classes.
pub struct Naive {
    pub ops: Vec<ENodeOp>,
}

impl Default for Naive {
    fn default() -> Self {
        Naive { ops: vec![ENodeOp::Add, ENodeOp::Sub, ENodeOp::Mul, ENodeOp::Div] }
    }
}

impl RewriteScheme for Naive {
    fn name(&self) -> &str {
        "naive"
    }

    fn rules(&self, lib: &Library) -> Vec<Arc<dyn Rewrite>> {
        let mut rules = semantic_rules(lib);
        let mut depth = 0;
        let mut constants = Vec::new();
        for a in lib.abstractions() {
            rules.push(Arc::new(abstraction::naive_rewrite(a, lib)));
            let (d, c) = abstraction::body_arith(&a.body);
            depth = depth.max(d);
            constants.extend(c);
        }
        if depth > 0 || !constants.is_empty() {
            rules.push(Arc::new(abstraction::ArithClosure { ops: self.ops.clone(), max_depth: depth, constants }));
        }
        rules
    }
}

pub fn scheme_registry() -> Registry<dyn RewriteScheme> {
    let mut r: Registry<dyn RewriteScheme> = Registry::new("rewrite scheme");
    r.register("conditional", Arc::new(Conditional));
    r.register("naive", Arc::new(Naive::default()));
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefactorConfig {
    pub budget: Budget,
    pub eps_cond: f64,
    pub eps_val: f64,
}

impl Default for RefactorConfig {
    fn default() -> Self {
        RefactorConfig { budget: Budget::default(), eps_cond: 0.005, eps_val: 0.005 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RefactorError {
    #[error("program does not execute under the library: {0}")]
    Exec(#[from] crate::dsl::ExecError),
}

#[derive(Clone, Debug)]
pub struct RefactorOutcome {
    pub program: Expr,
    pub input_cost: f64,
    pub output_cost: f64,
    pub report: SaturationReport,
    /// The extracted term failed the execution check; the input was kept.
    pub unsound: bool,
}

/// Rule set compiled once per library and shared across workers.
pub struct Refactorer {
    lib: Library,
    rules: Vec<Arc<dyn Rewrite>>,
    cfg: RefactorConfig,
}

impl Refactorer {
    pub fn new(lib: &Library, scheme: &dyn RewriteScheme, cfg: &RefactorConfig) -> Self {
        Refactorer { lib: lib.clone(), rules: scheme.rules(lib), cfg: cfg.clone() }
    }

    pub fn library(&self) -> &Library {
        &self.lib
    }

    pub fn graph(&self, p: &Expr) -> (EGraph, SaturationReport) {
        let mut g = EGraph::from_expr(p, &self.lib, self.cfg.eps_val);
        let report = saturate(&mut g, &self.rules, &self.cfg.budget, self.cfg.eps_cond);
        (g, report)
    }

    /// Build, saturate, extract. The result never costs more than the input
    /// and is checked to execute to the same primitives.
    pub fn refactor(&self, p: &Expr) -> Result<RefactorOutcome, RefactorError> {
        let before = execute(p, &self.lib)?;
        let input_cost = complexity(p, &self.lib);
        let (g, report) = self.graph(p);
        let (out, cost) = extract(&g, &self.lib);
        let keep = |unsound| RefactorOutcome {
            program: p.clone(),
            input_cost,
            output_cost: input_cost,
            report: report.clone(),
            unsound,
        };
        if cost > input_cost - 1e-9 {
            return Ok(keep(false));
        }
        let sound = match execute(&out, &self.lib) {
            Ok(after) if !after.is_empty() => {
                matches!(
                    match_primitives(&after, &before, self.lib.config.max_prim_error, MatchMode::Program),
                    Ok(Some(_))
                )
            }
            _ => false,
        };
        if !sound {
            log::warn!("unsound extraction for {p}; keeping input");
            return Ok(keep(true));
        }
        Ok(RefactorOutcome { program: out, input_cost, output_cost: cost, report, unsound: false })
    }
}
