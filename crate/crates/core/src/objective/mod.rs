//! Program complexity, geometric error, abstraction weights and the global
//! objective.

pub mod hungarian;

use serde::{Deserialize, Serialize};

use crate::dsl::{execute, Expr, Library, Op, Primitive, Scene, Sort};
use crate::dsl::Abstraction;

/// Price of a pair whose distance exceeds the threshold.
pub const OVER_THRESHOLD: f64 = 10_000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenWeights {
    pub float: f64,
    pub shape_fn: f64,
    pub float_fn: f64,
    pub categorical: f64,
}

impl Default for TokenWeights {
    fn default() -> Self {
        TokenWeights { float: 2.0, shape_fn: 1.0, float_fn: 0.1, categorical: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OmegaPolicy {
    pub base: f64,
    pub min: f64,
    pub max: f64,
    pub per_expression: f64,
    pub doubleton: f64,
    pub singleton: f64,
    pub per_extra_slot: f64,
    pub free_slots: usize,
    pub max_float_slots: usize,
    pub min_usage: f64,
}

impl Default for OmegaPolicy {
    fn default() -> Self {
        OmegaPolicy {
            base: 0.25,
            min: 0.125,
            max: 0.5,
            per_expression: -0.05,
            doubleton: -0.0625,
            singleton: 0.0625,
            per_extra_slot: 0.05,
            free_slots: 6,
            max_float_slots: 10,
            min_usage: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub token_weights: TokenWeights,
    pub error_weight: f64,
    pub max_prim_error: f64,
    pub omega: OmegaPolicy,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            token_weights: TokenWeights::default(),
            error_weight: 10.0,
            max_prim_error: 0.05,
            omega: OmegaPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("unknown token type {0} in a program")]
    UnknownToken(String),
    #[error("empty output set")]
    EmptyOutput,
}

/// Weighted token count. Calls count the call token plus their arguments.
pub fn program_complexity(p: &Expr, w: &TokenWeights) -> Result<f64, ObjectiveError> {
    let mut total = 0.0;
    let mut bad = None;
    p.walk(&mut |e| {
        total += match &e.op {
            Op::Union | Op::SymRef | Op::SymTrans | Op::Move | Op::Rect | Op::Call(_) => w.shape_fn,
            Op::Add | Op::Sub | Op::Mul | Op::Div => w.float_fn,
            Op::Float(_) => w.float,
            Op::Axis(_) | Op::Int(_) => w.categorical,
            Op::Param(k) => {
                bad.get_or_insert(format!("P{k}"));
                0.0
            }
        }
    });
    match bad {
        Some(t) => Err(ObjectiveError::UnknownToken(t)),
        None => Ok(total),
    }
}

/// Complexity for programs known to be closed.
pub fn complexity(p: &Expr, lib: &Library) -> f64 {
    program_complexity(p, &lib.config.token_weights).expect("closed program")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchMode {
    /// Injective match of a partial output into the target.
    Partial,
    /// Bijective match; output and target sizes must agree.
    Program,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Match {
    /// `assignment[i]` is the target index matched to output primitive `i`.
    pub assignment: Vec<usize>,
    pub error: f64,
}

/// Optimal assignment of `out` into `target`; `Ok(None)` when invalid.
pub fn match_primitives(
    out: &[Primitive],
    target: &[Primitive],
    threshold: f64,
    mode: MatchMode,
) -> Result<Option<Match>, ObjectiveError> {
    if out.is_empty() {
        return Err(ObjectiveError::EmptyOutput);
    }
    if out.len() > target.len() || (mode == MatchMode::Program && out.len() != target.len()) {
        return Ok(None);
    }
    let mut cost = Vec::with_capacity(out.len());
    for o in out {
        let mut row = Vec::with_capacity(target.len());
        let mut any = false;
        for t in target {
            let d = o.distance(t);
            if d <= threshold {
                any = true;
                row.push(d);
            } else {
                row.push(OVER_THRESHOLD);
            }
        }
        if !any {
            return Ok(None);
        }
        cost.push(row);
    }
    let assignment = hungarian::assign(&cost);
    let mut error = 0.0;
    for (i, &j) in assignment.iter().enumerate() {
        if cost[i][j] >= OVER_THRESHOLD {
            return Ok(None);
        }
        error += cost[i][j];
    }
    Ok(Some(Match { assignment, error }))
}

/// Token cost plus weighted error of a program on its scene; `None` when the
/// program fails to execute or does not match.
pub fn program_cost(p: &Expr, scene: &Scene, lib: &Library) -> Option<f64> {
    let out = execute(p, lib).ok()?;
    if out.is_empty() {
        return None;
    }
    let m = match_primitives(&out, &scene.prims, lib.config.max_prim_error, MatchMode::Program).ok()??;
    let c = program_complexity(p, &lib.config.token_weights).ok()?;
    Some(c + lib.config.error_weight * m.error)
}

/// Mean program cost plus the summed abstraction weights; infinite if any
/// program is invalid.
pub fn objective(lib: &Library, scenes: &[Scene], programs: &[Expr]) -> f64 {
    assert_eq!(scenes.len(), programs.len());
    if programs.is_empty() {
        return lib.omega_sum();
    }
    let mut sum = 0.0;
    for (s, p) in scenes.iter().zip(programs) {
        match program_cost(p, s, lib) {
            Some(c) => sum += c,
            None => return f64::INFINITY,
        }
    }
    sum / programs.len() as f64 + lib.omega_sum()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Omega {
    Weight(f64),
    Reject(String),
}

/// Number of distinct maximal arithmetic subtrees in a body.
pub fn parametric_expressions(body: &Expr) -> usize {
    let mut seen = std::collections::HashSet::new();
    fn walk(e: &Expr, seen: &mut std::collections::HashSet<String>) {
        if e.op.is_float_fn() {
            seen.insert(e.to_string());
            return;
        }
        for a in &e.args {
            walk(a, seen);
        }
    }
    walk(body, &mut seen);
    seen.len()
}

/// Weight of an abstraction under the policy.
pub fn omega(params: &[Sort], body: &Expr, policy: &OmegaPolicy) -> Omega {
    let floats = params.iter().filter(|s| **s == Sort::Float).count();
    if floats > policy.max_float_slots {
        return Omega::Reject(format!("{floats} FLOAT slots (limit {})", policy.max_float_slots));
    }
    let mut w = policy.base;
    w += policy.per_expression * parametric_expressions(body) as f64;
    w += if matches!(body.op, Op::Union) { policy.doubleton } else { policy.singleton };
    if params.len() > policy.free_slots {
        w += policy.per_extra_slot * (params.len() - policy.free_slots) as f64;
    }
    Omega::Weight(w.clamp(policy.min, policy.max))
}

pub fn omega_of(a: &Abstraction, policy: &OmegaPolicy) -> Omega {
    omega(&a.params, &a.body, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_expr, parse_expr_in_body};

    #[test]
    fn complexity_examples() {
        let lib = Library::default();
        let w = &lib.config.token_weights;
        let c = |s: &str| program_complexity(&parse_expr(s, &lib).unwrap(), w).unwrap();
        assert_eq!(c("Move(Rect(0.4,0.2),0.1,0.3)"), 10.0);
        assert_eq!(c("Union(Move(Rect(0.1,0.2),0.3,0.4),Move(Rect(0.5,0.6),0.7,0.8))"), 21.0);
        assert_eq!(program_complexity(&Expr::call("Abs_N", vec![Expr::float(0.1), Expr::float(0.2)]), w).unwrap(), 5.0);
        assert!(program_complexity(&Expr::param(0), w).is_err());
    }

    #[test]
    fn matching_examples() {
        let t = [Primitive::new(0.4, 0.2, 0.1, 0.08)];
        let m = match_primitives(&[Primitive::new(0.4, 0.2, 0.1, 0.0)], &t, 0.05, MatchMode::Partial).unwrap().unwrap();
        assert!((m.error - 0.02).abs() < 1e-12);
        let t = [Primitive::new(0.4, 0.2, 0.1, 0.0)];
        assert_eq!(match_primitives(&[Primitive::new(0.4, 0.2, 0.1, 0.5)], &t, 0.05, MatchMode::Partial).unwrap(), None);
        assert!(matches!(match_primitives(&[], &t, 0.05, MatchMode::Partial), Err(ObjectiveError::EmptyOutput)));
        let two = [t[0], t[0]];
        assert_eq!(match_primitives(&t, &two, 0.05, MatchMode::Program).unwrap(), None);
        assert!(match_primitives(&t, &two, 0.05, MatchMode::Partial).unwrap().is_some());
    }

    #[test]
    fn objective_examples() {
        let mut lib = Library::default();
        let scene = Scene {
            id: "s".into(),
            prims: vec![Primitive::new(0.1, 0.2, 0.3, 0.4), Primitive::new(0.5, 0.6, 0.7, 0.8)],
        };
        let p = parse_expr("Union(Move(Rect(0.1,0.2),0.3,0.4),Move(Rect(0.5,0.6),0.7,0.8))", &lib).unwrap();
        assert_eq!(objective(&lib, std::slice::from_ref(&scene), std::slice::from_ref(&p)), 21.0);
        let body = parse_expr_in_body("Rect(P0,P0)", &lib, &[Sort::Float]).unwrap();
        lib.add(Abstraction { name: "Abs_0".into(), params: vec![Sort::Float], body, omega: 0.25 }).unwrap();
        assert_eq!(objective(&lib, std::slice::from_ref(&scene), &[p]), 21.25);
        let bad = parse_expr("Move(Rect(0.1,0.2),0.3,0.4)", &lib).unwrap();
        assert_eq!(objective(&lib, &[scene], &[bad]), f64::INFINITY);
    }

    #[test]
    fn omega_rules() {
        let lib = Library::default();
        let pol = OmegaPolicy::default();
        let p4 = [Sort::Float; 4];
        let body = parse_expr_in_body(
            "Union(Move(Rect(P0,P1),Add(P2,P3),P2),Move(Rect(P0,P1),Sub(P2,P3),P3))",
            &lib,
            &p4,
        )
        .unwrap();
        let Omega::Weight(w) = omega(&p4, &body, &pol) else { panic!() };
        assert!((0.125..0.25).contains(&w));
        let p11 = [Sort::Float; 11];
        assert!(matches!(omega(&p11, &body, &pol), Omega::Reject(_)));
        let p7 = [Sort::Float; 7];
        let single = parse_expr_in_body("Move(Rect(P0,P1),P2,P3)", &lib, &p7).unwrap();
        let Omega::Weight(w) = omega(&p7, &single, &pol) else { panic!() };
        assert!(w > 0.25 && w <= 0.5);
    }
}
