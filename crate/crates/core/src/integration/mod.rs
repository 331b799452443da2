//! Integration: trial candidate abstractions as library variants, refactor
//! the programs under each, and keep a variant only when the objective
//! improves.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::{execute, fold_constants, inline, inline_call, Expr, Library, Scene};
use crate::egraph::{RefactorConfig, Refactorer, RewriteScheme};
use crate::objective::{match_primitives, omega_of, program_cost, MatchMode, Omega};
use crate::proposal::CandidateAbstraction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegrationConfig {
    /// Candidates trialled per phase.
    pub n_a: usize,
    /// Fraction of affected programs refactored before a full evaluation.
    pub subsample: f64,
    /// The subsample must project at least this fraction of the new
    /// abstraction's weight in savings.
    pub gate_ratio: f64,
    /// Relative usage drop that puts a function into the decreased set.
    pub dec_drop: f64,
    pub refactor: RefactorConfig,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig { n_a: 20, subsample: 0.25, gate_ratio: 0.5, dec_drop: 0.5, refactor: RefactorConfig::default() }
    }
}

/// Library, programs and per-program costs.
#[derive(Clone, Debug)]
pub struct State {
    pub lib: Library,
    pub programs: Vec<Expr>,
    pub costs: Vec<f64>,
}

impl State {
    pub fn new(lib: Library, programs: Vec<Expr>, scenes: &[Scene]) -> Option<State> {
        let costs =
            programs.iter().zip(scenes).map(|(p, s)| program_cost(p, s, &lib)).collect::<Option<Vec<f64>>>()?;
        Some(State { lib, programs, costs })
    }

    pub fn f(&self) -> f64 {
        if self.costs.is_empty() {
            return self.lib.omega_sum();
        }
        self.costs.iter().sum::<f64>() / self.costs.len() as f64 + self.lib.omega_sum()
    }

    /// Number of programs calling each function.
    pub fn usage(&self) -> BTreeMap<String, usize> {
        let mut u: BTreeMap<String, usize> = self.lib.abstractions().iter().map(|a| (a.name.clone(), 0)).collect();
        for p in &self.programs {
            let called: BTreeSet<_> = p.called().into_iter().collect();
            for c in called {
                *u.entry(c.to_string()).or_default() += 1;
            }
        }
        u
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct VariantStats {
    pub refactored: usize,
    pub improved: usize,
    pub unsound: usize,
    pub failures: usize,
    /// Refactors refused because their primitives moved. Conditional
    /// rewrites tolerate small value differences, so an extraction can match
    /// the scene yet not reproduce the input exactly.
    pub drifted: usize,
    /// Largest summed primitive distance over adopted refactors.
    pub max_drift: f64,
    pub seconds: f64,
}

const DRIFT_TOL: f64 = 1e-6;

/// Summed distance between the primitives of two programs, infinite when
/// they do not match one to one.
fn drift(before: &Expr, after: &Expr, lib: &Library) -> f64 {
    let (Ok(a), Ok(b)) = (execute(before, lib), execute(after, lib)) else { return f64::INFINITY };
    match match_primitives(&b, &a, lib.config.max_prim_error, MatchMode::Program) {
        Ok(Some(m)) => m.error,
        _ => f64::INFINITY,
    }
}

/// Refactors `targets` (all programs when `None`) under `lib` starting from
/// `base`, returning the new state. Programs whose refactor fails are kept.
pub fn evaluate_variant(
    lib: &Library,
    base: &State,
    scenes: &[Scene],
    scheme: &dyn RewriteScheme,
    cfg: &RefactorConfig,
    targets: Option<&[usize]>,
) -> (State, VariantStats) {
    let start = Instant::now();
    let refactorer = Refactorer::new(lib, scheme, cfg);
    let all: Vec<usize> = (0..base.programs.len()).collect();
    let targets = targets.unwrap_or(&all);
    // (index, (program, cost, drift), unsound)
    type Refactored = (usize, Option<(Expr, f64, f64)>, bool);
    let results: Vec<Refactored> = targets
        .par_iter()
        .map(|&i| {
            // calls are opaque to the e-graph, so start from the expanded form
            let flat = match inline(&base.programs[i], &base.lib) {
                Ok(p) => fold_constants(&p),
                Err(e) => {
                    log::warn!("inlining program {i} failed: {e}");
                    return (i, None, false);
                }
            };
            match refactorer.refactor(&flat) {
                Ok(o) => {
                    let cost = program_cost(&o.program, &scenes[i], lib);
                    let d = drift(&flat, &o.program, lib);
                    (i, cost.map(|c| (o.program, c, d)), o.unsound)
                }
                Err(e) => {
                    log::warn!("refactor of program {i} failed: {e}");
                    (i, None, false)
                }
            }
        })
        .collect();
    let mut next = State { lib: lib.clone(), programs: base.programs.clone(), costs: base.costs.clone() };
    let mut stats = VariantStats { refactored: targets.len(), ..Default::default() };
    for (i, r, unsound) in results {
        stats.unsound += unsound as usize;
        match r {
            Some((_, c, _)) if c > next.costs[i] + 1e-9 => {}
            Some((p, c, d)) if d <= DRIFT_TOL => {
                if c < next.costs[i] - 1e-9 {
                    stats.improved += 1;
                }
                stats.max_drift = stats.max_drift.max(d);
                next.programs[i] = p;
                next.costs[i] = c;
            }
            Some((p, _, d)) => {
                log::debug!("refactor of program {i} moved primitives by {d:.4}: {p}");
                stats.drifted += 1;
                if let Some(c) = program_cost(&base.programs[i], &scenes[i], lib) {
                    next.costs[i] = c;
                }
            }
            None => {
                stats.failures += 1;
                // keep the old program; its cost under the variant may differ
                if let Some(c) = program_cost(&base.programs[i], &scenes[i], lib) {
                    next.costs[i] = c;
                }
            }
        }
    }
    stats.seconds = start.elapsed().as_secs_f64();
    (next, stats)
}

/// Removes `names` from a copy of `lib`. Bodies that had a removed call
/// inlined get their weight recomputed.
pub fn without(lib: &Library, names: &[String]) -> Option<Library> {
    let mut out = lib.clone();
    for n in names {
        out.remove(n).ok()?;
    }
    let changed: Vec<String> = out
        .abstractions()
        .iter()
        .filter(|a| lib.get(&a.name).is_some_and(|old| old.body != a.body))
        .map(|a| a.name.clone())
        .collect();
    for n in changed {
        let a = out.get(&n)?.clone();
        if let Omega::Weight(w) = omega_of(&a, &out.config.omega) {
            out.set_omega(&n, w);
        }
    }
    Some(out)
}

/// Inlines `names` in every program that calls them and re-prices those
/// programs under `lib` (which no longer has them). Returns the touched
/// program indices.
fn strip(state: &State, old: &Library, lib: &Library, names: &[String], scenes: &[Scene]) -> Option<(State, Vec<usize>)> {
    let mut next = State { lib: lib.clone(), programs: state.programs.clone(), costs: state.costs.clone() };
    let mut touched = Vec::new();
    for (i, p) in state.programs.iter().enumerate() {
        let called = p.called();
        if !names.iter().any(|n| called.iter().any(|c| &**c == n)) {
            continue;
        }
        let mut q = p.clone();
        // inline in dependency order: the old library still knows every name
        let mut scratch = old.clone();
        for n in names {
            q = inline_call(&q, &scratch, n)?;
            scratch.remove(n).ok()?;
        }
        next.costs[i] = program_cost(&q, &scenes[i], lib)?;
        next.programs[i] = q;
        touched.push(i);
    }
    Some((next, touched))
}

#[derive(Clone, Debug, Serialize)]
pub struct LogEntry {
    pub kind: String,
    pub name: String,
    pub body: String,
    pub score: f64,
    pub f_before: f64,
    pub f_after: Option<f64>,
    pub decision: String,
    pub f_dec: Vec<String>,
    pub usage: usize,
    pub stats: VariantStats,
}

#[derive(Clone, Debug)]
pub struct IntegrationResult {
    pub state: State,
    pub f_start: f64,
    pub log: Vec<LogEntry>,
    /// F after every accepted variant, starting with `f_start`.
    pub trace: Vec<f64>,
    /// Library size alongside each trace value.
    pub sizes: Vec<usize>,
    pub unsound: usize,
    /// Refactor checks over adopted variants.
    pub refactored: usize,
    pub drifted: usize,
    pub max_drift: f64,
}

/// Greedy integration over the top candidates, then a removal sweep.
pub fn integrate(
    state: State,
    scenes: &[Scene],
    candidates: &[CandidateAbstraction],
    scheme: &dyn RewriteScheme,
    cfg: &IntegrationConfig,
) -> IntegrationResult {
    let mut st = state;
    let f_start = st.f();
    let mut f = f_start;
    let mut log = Vec::new();
    let mut trace = vec![f];
    let mut sizes = vec![st.lib.len()];
    let mut adopted: Vec<VariantStats> = Vec::new();
    let mut unsound = 0;
    let n = st.programs.len().max(1);
    let min_usage = (st.lib.config.omega.min_usage * n as f64).ceil().max(1.0) as usize;
    let mut pool: Vec<CandidateAbstraction> = candidates.to_vec();
    let mut trials = 0;
    while trials < cfg.n_a {
        pool.retain(|c| c.frequency > 0.0);
        pool.sort_by(|a, b| {
            b.score.total_cmp(&a.score).then_with(|| a.abstraction.body.to_string().cmp(&b.abstraction.body.to_string()))
        });
        if pool.is_empty() {
            break;
        }
        let cand = pool.remove(0);
        trials += 1;
        let name = st.lib.fresh_name();
        let mut a = cand.abstraction.clone();
        a.name = name.clone();
        let body = a.body.to_string();
        let omega = a.omega;
        let mut entry = LogEntry {
            kind: "add".into(),
            name: name.clone(),
            body,
            score: cand.score,
            f_before: f,
            f_after: None,
            decision: String::new(),
            f_dec: Vec::new(),
            usage: 0,
            stats: VariantStats::default(),
        };
        let mut lib2 = st.lib.clone();
        if let Err(e) = lib2.add(a) {
            entry.decision = format!("invalid: {e}");
            log.push(entry);
            continue;
        }
        let targets: Vec<usize> = cand.coverage.iter().copied().filter(|&i| i < st.programs.len()).collect();
        // subsample gate
        let step = (1.0 / cfg.subsample.clamp(1e-3, 1.0)).round().max(1.0) as usize;
        if step > 1 && targets.len() >= 2 * step {
            let sub: Vec<usize> = targets.iter().copied().step_by(step).collect();
            let (probe, _) = evaluate_variant(&lib2, &st, scenes, scheme, &cfg.refactor, Some(&sub));
            let saved: f64 = sub.iter().map(|&i| st.costs[i] - probe.costs[i]).sum();
            let projected = saved * targets.len() as f64 / sub.len() as f64 / n as f64;
            if projected < cfg.gate_ratio * omega {
                entry.decision = format!("gate: projected saving {projected:.4} < {:.4}", cfg.gate_ratio * omega);
                log.push(entry);
                continue;
            }
        }
        let (next, stats) = evaluate_variant(&lib2, &st, scenes, scheme, &cfg.refactor, Some(&targets));
        unsound += stats.unsound;
        entry.stats = stats;
        let f2 = next.f();
        entry.f_after = Some(f2);
        let usage_after = next.usage();
        entry.usage = usage_after.get(&name).copied().unwrap_or(0);
        if f2 < f - 1e-9 && entry.usage >= min_usage {
            entry.decision = "accepted".into();
            adopted.push(entry.stats.clone());
            log.push(entry);
            let users: BTreeSet<usize> =
                (0..next.programs.len()).filter(|&i| next.programs[i].called().iter().any(|c| **c == *name)).collect();
            for c in &mut pool {
                let before = c.coverage.len();
                c.coverage.retain(|i| !users.contains(i) && !cand.coverage.contains(i));
                if c.coverage.len() != before {
                    c.frequency = c.coverage.len() as f64 / n as f64;
                    c.score = c.frequency * c.gain;
                }
            }
            st = next;
            f = f2;
            trace.push(f);
            sizes.push(st.lib.len());
            continue;
        }
        entry.decision = if entry.usage < min_usage { "rejected: usage".into() } else { "rejected".into() };
        // functions the new abstraction displaced
        let usage_before = st.usage();
        let f_dec: Vec<String> = usage_before
            .iter()
            .filter(|(g, &u)| u > 0 && (usage_after.get(*g).copied().unwrap_or(0) as f64) <= (1.0 - cfg.dec_drop) * u as f64)
            .map(|(g, _)| g.clone())
            .collect();
        entry.f_dec = f_dec.clone();
        log.push(entry);
        if f_dec.is_empty() || entry_usage(&usage_after, &name) == 0 {
            continue;
        }
        let Some(lib3) = without(&lib2, &f_dec) else { continue };
        let mut dec = LogEntry {
            kind: "dec".into(),
            name: name.clone(),
            body: lib3.get(&name).map(|a| a.body.to_string()).unwrap_or_default(),
            score: cand.score,
            f_before: f,
            f_after: None,
            decision: String::new(),
            f_dec: f_dec.clone(),
            usage: 0,
            stats: VariantStats::default(),
        };
        let Some((stripped, touched)) = strip(&next, &lib2, &lib3, &f_dec, scenes) else {
            dec.decision = "rejected: inline failed".into();
            log.push(dec);
            continue;
        };
        let (next3, stats) = evaluate_variant(&lib3, &stripped, scenes, scheme, &cfg.refactor, Some(&touched));
        unsound += stats.unsound;
        dec.stats = stats;
        let f3 = next3.f();
        dec.f_after = Some(f3);
        dec.usage = entry_usage(&next3.usage(), &name);
        if f3 < f - 1e-9 && dec.usage >= min_usage {
            dec.decision = "accepted".into();
            adopted.push(dec.stats.clone());
            st = next3;
            f = f3;
            trace.push(f);
            sizes.push(st.lib.len());
        } else {
            dec.decision = "rejected".into();
        }
        log.push(dec);
    }
    let (st, f) = removal_sweep(st, f, scenes, scheme, cfg, &mut log, &mut trace, &mut sizes, &mut adopted, &mut unsound);
    debug_assert!((st.f() - f).abs() < 1e-6);
    IntegrationResult {
        state: st,
        f_start,
        log,
        trace,
        sizes,
        unsound,
        refactored: adopted.iter().map(|s| s.refactored).sum(),
        drifted: adopted.iter().map(|s| s.drifted).sum(),
        max_drift: adopted.iter().map(|s| s.max_drift).fold(0.0, f64::max),
    }
}

fn entry_usage(u: &BTreeMap<String, usize>, name: &str) -> usize {
    u.get(name).copied().unwrap_or(0)
}

#[allow(clippy::too_many_arguments)]
fn removal_sweep(
    mut st: State,
    mut f: f64,
    scenes: &[Scene],
    scheme: &dyn RewriteScheme,
    cfg: &IntegrationConfig,
    log: &mut Vec<LogEntry>,
    trace: &mut Vec<f64>,
    sizes: &mut Vec<usize>,
    adopted: &mut Vec<VariantStats>,
    unsound: &mut usize,
) -> (State, f64) {
    let names: Vec<String> = st.lib.abstractions().iter().map(|a| a.name.clone()).collect();
    for name in names {
        let Some(a) = st.lib.get(&name).cloned() else { continue };
        let Some(lib2) = without(&st.lib, std::slice::from_ref(&name)) else { continue };
        let mut entry = LogEntry {
            kind: "remove".into(),
            name: name.clone(),
            body: a.body.to_string(),
            score: 0.0,
            f_before: f,
            f_after: None,
            decision: String::new(),
            f_dec: Vec::new(),
            usage: entry_usage(&st.usage(), &name),
            stats: VariantStats::default(),
        };
        let Some((stripped, touched)) = strip(&st, &st.lib, &lib2, std::slice::from_ref(&name), scenes) else {
            entry.decision = "rejected: inline failed".into();
            log.push(entry);
            continue;
        };
        let (next, stats) = evaluate_variant(&lib2, &stripped, scenes, scheme, &cfg.refactor, Some(&touched));
        *unsound += stats.unsound;
        entry.stats = stats;
        let f2 = next.f();
        entry.f_after = Some(f2);
        if f2 < f - 1e-9 {
            entry.decision = "accepted".into();
            adopted.push(entry.stats.clone());
            st = next;
            f = f2;
            trace.push(f);
            sizes.push(st.lib.len());
        } else {
            entry.decision = "rejected".into();
        }
        log.push(entry);
    }
    (st, f)
}
