//! Merging a new wake program with the previous round's program and the
//! per-scene cache of expressions seen so far.

use std::collections::HashSet;
use std::sync::Arc;

use super::{naive_expr, Step};
use crate::dsl::{execute, fold_union, split_union, Expr, Library, Scene};
use crate::objective::{match_primitives, program_complexity, program_cost, MatchMode};

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub expr: Expr,
    /// Scene indices, ascending.
    pub covered: Vec<usize>,
    pub cost: f64,
    pub calls: Vec<Arc<str>>,
}

/// Expressions accepted for one scene in any round, with their covers.
#[derive(Clone, Debug, Default)]
pub struct ExprCache {
    entries: Vec<CacheEntry>,
    seen: HashSet<(String, Vec<usize>)>,
}

impl ExprCache {
    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, step: &Step) {
        if self.seen.insert((step.expr.to_string(), step.covered.clone())) {
            let mut calls = step.expr.called();
            calls.sort();
            calls.dedup();
            self.entries.push(CacheEntry {
                expr: step.expr.clone(),
                covered: step.covered.clone(),
                cost: step.cost,
                calls,
            });
        }
    }

    /// Adds the top-level expressions of a program that explains `d`.
    pub fn absorb(&mut self, p: &Expr, d: &Scene, lib: &Library) -> bool {
        match parts(p, d, lib) {
            Some(steps) => {
                for s in &steps {
                    self.insert(s);
                }
                true
            }
            None => false,
        }
    }

    /// Entries whose called functions are all in `lib`.
    pub fn active<'a>(&'a self, lib: &'a Library) -> impl Iterator<Item = &'a CacheEntry> + 'a {
        self.entries.iter().filter(move |e| e.calls.iter().all(|c| lib.get(c).is_some()))
    }
}

/// Splits a program into its top-level expressions and assigns each the
/// scene primitives it explains under the optimal whole-program match.
pub fn parts(p: &Expr, d: &Scene, lib: &Library) -> Option<Vec<Step>> {
    let exprs = split_union(p);
    let mut outs = Vec::with_capacity(exprs.len());
    for e in &exprs {
        outs.push(execute(e, lib).ok()?);
    }
    let all: Vec<_> = outs.iter().flatten().copied().collect();
    if all.is_empty() {
        return None;
    }
    let m = match_primitives(&all, &d.prims, lib.config.max_prim_error, MatchMode::Program).ok()??;
    let mut start = 0;
    let mut steps = Vec::with_capacity(exprs.len());
    for (e, out) in exprs.into_iter().zip(&outs) {
        let idx = &m.assignment[start..start + out.len()];
        let err: f64 = idx.iter().zip(out).map(|(&j, o)| o.distance(&d.prims[j])).sum();
        let mut covered = idx.to_vec();
        covered.sort_unstable();
        let cost = program_complexity(&e, &lib.config.token_weights).ok()? + lib.config.error_weight * err;
        steps.push(Step { expr: e, covered, cost });
        start += out.len();
    }
    Some(steps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Variant {
    Previous,
    New,
    Merged,
    Rebuilt,
}

#[derive(Clone, Debug)]
pub struct Combined {
    pub program: Expr,
    pub variant: Variant,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CombineError {
    #[error("cache inconsistent with scene {scene}: entry covers primitive {index} of {len}")]
    CacheInconsistent { scene: String, index: usize, len: usize },
    #[error("new program does not explain scene {0}")]
    InvalidNew(String),
}

/// Best of: the previous program, the new one, the new program's
/// expressions spliced into the previous one, and a greedy rebuild from the
/// cache. Without a previous program the new one is returned.
pub fn combine(
    prev: Option<&Expr>,
    new: &Expr,
    cache: &ExprCache,
    d: &Scene,
    lib: &Library,
) -> Result<Combined, CombineError> {
    for e in &cache.entries {
        if let Some(&index) = e.covered.iter().find(|&&i| i >= d.prims.len()) {
            return Err(CombineError::CacheInconsistent { scene: d.id.clone(), index, len: d.prims.len() });
        }
    }
    let new_cost = program_cost(new, d, lib).ok_or_else(|| CombineError::InvalidNew(d.id.clone()))?;
    let Some(prev) = prev else {
        return Ok(Combined { program: new.clone(), variant: Variant::New, cost: new_cost });
    };
    let mut options: Vec<(Variant, Expr)> = vec![(Variant::Previous, prev.clone()), (Variant::New, new.clone())];
    if let Some(m) = merge(prev, new, d, lib) {
        options.push((Variant::Merged, m));
    }
    options.push((Variant::Rebuilt, rebuild(cache, d, lib)));
    let mut best: Option<Combined> = None;
    for (variant, program) in options {
        let cost = if variant == Variant::New { Some(new_cost) } else { program_cost(&program, d, lib) };
        let Some(cost) = cost else { continue };
        if best.as_ref().is_none_or(|b| cost < b.cost - 1e-9) {
            best = Some(Combined { program, variant, cost });
        }
    }
    Ok(best.expect("new program is valid"))
}

/// Replaces groups of previous expressions by a new expression covering
/// exactly the same primitives at lower cost.
fn merge(prev: &Expr, new: &Expr, d: &Scene, lib: &Library) -> Option<Expr> {
    let mut cur = parts(prev, d, lib)?;
    let mut incoming = parts(new, d, lib)?;
    incoming.sort_by(|a, b| (a.cost / a.covered.len() as f64).total_cmp(&(b.cost / b.covered.len() as f64)));
    let mut changed = false;
    for n in incoming {
        let hit: Vec<usize> =
            (0..cur.len()).filter(|&i| cur[i].covered.iter().any(|c| n.covered.binary_search(c).is_ok())).collect();
        if hit.is_empty() {
            continue;
        }
        let mut union: Vec<usize> = hit.iter().flat_map(|&i| cur[i].covered.iter().copied()).collect();
        union.sort_unstable();
        let old: f64 = hit.iter().map(|&i| cur[i].cost).sum();
        if union != n.covered || n.cost >= old - 1e-9 {
            continue;
        }
        let at = hit[0];
        for &i in hit.iter().rev() {
            cur.remove(i);
        }
        cur.insert(at, n);
        changed = true;
    }
    if !changed {
        return None;
    }
    fold_union(cur.into_iter().map(|s| s.expr).collect())
}

/// Greedy cover from cached expressions, cheapest per primitive first;
/// leftovers get naive expressions.
fn rebuild(cache: &ExprCache, d: &Scene, lib: &Library) -> Expr {
    let mut entries: Vec<&CacheEntry> = cache.active(lib).collect();
    entries.sort_by(|a, b| {
        let pa = a.cost / a.covered.len() as f64;
        let pb = b.cost / b.covered.len() as f64;
        pa.total_cmp(&pb)
            .then(b.covered.len().cmp(&a.covered.len()))
            .then_with(|| a.expr.to_string().cmp(&b.expr.to_string()))
    });
    let mut taken = vec![false; d.prims.len()];
    let mut chosen = Vec::new();
    for e in entries {
        if e.covered.iter().any(|&i| taken[i]) {
            continue;
        }
        for &i in &e.covered {
            taken[i] = true;
        }
        chosen.push(e.expr.clone());
    }
    for (i, p) in d.prims.iter().enumerate() {
        if !taken[i] {
            chosen.push(naive_expr(p));
        }
    }
    fold_union(chosen).expect("non-empty scene")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_expr, Axis};

    fn scene() -> Scene {
        Scene {
            id: "s".into(),
            prims: vec![
                [0.2, 0.3, 0.4, 0.1].into(),
                [0.2, 0.3, -0.4, 0.1].into(),
                [0.1, 0.1, 0.0, 0.5].into(),
            ],
        }
    }

    #[test]
    fn round_zero_keeps_new() {
        let lib = Library::default();
        let d = scene();
        let new = crate::wake::naive_program(&d).unwrap();
        let c = combine(None, &new, &ExprCache::default(), &d, &lib).unwrap();
        assert_eq!(c.variant, Variant::New);
        assert_eq!(c.program, new);
    }

    #[test]
    fn merge_splices_cheaper_expression() {
        let lib = Library::default();
        let d = scene();
        let prev = crate::wake::naive_program(&d).unwrap();
        // New program: the mirrored pair as one SymRef, but the third
        // primitive expressed wastefully.
        let new = parse_expr(
            "Union(SymRef(Move(Rect(0.2,0.3),0.4,0.1),AX),Move(Move(Rect(0.1,0.1),0,0.25),0,0.25))",
            &lib,
        )
        .unwrap();
        let c = combine(Some(&prev), &new, &ExprCache::default(), &d, &lib).unwrap();
        assert_eq!(c.variant, Variant::Merged);
        assert!(c.cost < program_cost(&prev, &d, &lib).unwrap());
        assert!(c.cost < program_cost(&new, &d, &lib).unwrap());
        let want = Expr::union(Expr::symref(Expr::placed(0.2, 0.3, 0.4, 0.1), Axis::X), Expr::placed(0.1, 0.1, 0.0, 0.5));
        assert_eq!(c.program, want);
    }

    #[test]
    fn rebuild_uses_cheap_cached_call() {
        let mut lib = Library::default();
        let params = vec![];
        let body = crate::dsl::parse_expr_in_body(
            "Union(SymRef(Move(Rect(0.2,0.3),0.4,0.1),AX),Move(Rect(0.1,0.1),0,0.5))",
            &lib,
            &params,
        )
        .unwrap();
        lib.add(crate::dsl::Abstraction { name: "Abs_0".into(), params, body, omega: 0.25 }).unwrap();
        let d = scene();
        let prev = crate::wake::naive_program(&d).unwrap();
        let new = parse_expr("Union(SymRef(Move(Rect(0.2,0.3),0.4,0.1),AX),Move(Rect(0.1,0.1),0,0.5))", &lib).unwrap();
        let mut cache = ExprCache::default();
        assert!(cache.absorb(&parse_expr("Abs_0()", &lib).unwrap(), &d, &lib));
        let c = combine(Some(&prev), &new, &cache, &d, &lib).unwrap();
        assert_eq!(c.variant, Variant::Rebuilt);
        assert_eq!(c.program.to_string(), "Abs_0()");
    }

    #[test]
    fn masked_entries_are_skipped() {
        let mut lib = Library::default();
        let params = vec![];
        let body = crate::dsl::parse_expr_in_body("Move(Rect(0.1,0.1),0,0.5)", &lib, &params).unwrap();
        lib.add(crate::dsl::Abstraction { name: "Abs_0".into(), params, body, omega: 0.25 }).unwrap();
        let d = scene();
        let mut cache = ExprCache::default();
        assert!(cache.absorb(
            &parse_expr("Union(Union(Move(Rect(0.2,0.3),0.4,0.1),Move(Rect(0.2,0.3),-0.4,0.1)),Abs_0())", &lib).unwrap(),
            &d,
            &lib
        ));
        let mut smaller = lib.clone();
        smaller.remove("Abs_0").unwrap();
        assert_eq!(cache.active(&lib).count(), 3);
        assert_eq!(cache.active(&smaller).count(), 2);
        let p = rebuild(&cache, &d, &smaller);
        assert!(program_cost(&p, &d, &smaller).is_some());
    }

    #[test]
    fn inconsistent_cache_is_an_error() {
        let lib = Library::default();
        let d = scene();
        let mut cache = ExprCache::default();
        cache.insert(&Step { expr: Expr::rect(0.1, 0.1), covered: vec![7], cost: 5.0 });
        let new = crate::wake::naive_program(&d).unwrap();
        assert!(matches!(
            combine(None, &new, &cache, &d, &lib),
            Err(CombineError::CacheInconsistent { index: 7, .. })
        ));
    }
}
