//! Dreams: random instantiations of library functions, filtered by simple
//! geometric rejection rules and combined into composite training scenes.

pub mod corpus;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsl::{execute, inline, Axis, Expr, Library, Op, Primitive, Scene, Sort, MAX_PRIMS};

pub use corpus::{gen_synthetic_corpus, Latent};

/// Gaussian mixture component: (weight, mean, std).
pub type Component = (f64, f64, f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mixtures {
    pub dim: Vec<Component>,
    pub move_x: Vec<Component>,
    pub move_y: Vec<Component>,
    pub distance: Vec<Component>,
}

impl Default for Mixtures {
    fn default() -> Self {
        Mixtures {
            dim: vec![(0.5, 0.3, 0.15), (0.5, 0.08, 0.04)],
            move_x: vec![(0.6, 0.0, 0.1), (0.2, -0.45, 0.1), (0.2, 0.45, 0.1)],
            move_y: vec![(0.6, 0.0, 0.1), (0.2, -0.45, 0.1), (0.2, 0.45, 0.1)],
            distance: vec![(0.5, 0.5, 0.2), (0.5, -0.5, 0.2)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Dim,
    MoveX,
    MoveY,
    Distance,
}

impl Mixtures {
    fn of(&self, s: Slot) -> &[Component] {
        match s {
            Slot::Dim => &self.dim,
            Slot::MoveX => &self.move_x,
            Slot::MoveY => &self.move_y,
            Slot::Distance => &self.distance,
        }
    }

    /// Draws from the slot's mixture, rounded to two decimals.
    pub fn sample(&self, s: Slot, rng: &mut impl Rng) -> f64 {
        let comps = self.of(s);
        let total: f64 = comps.iter().map(|c| c.0).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = comps[comps.len() - 1];
        for &c in comps {
            if u < c.0 {
                pick = c;
                break;
            }
            u -= c.0;
        }
        let v = Normal::new(pick.1, pick.2).expect("valid std").sample(rng);
        round2(v)
    }
}

pub fn round2(v: f64) -> f64 {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DreamConfig {
    /// Target sequences per function in one dream phase.
    pub per_function: usize,
    pub max_rejections: usize,
    pub mixtures: Mixtures,
    pub bound: f64,
    pub leniency: f64,
    pub min_area: f64,
    pub min_visible: f64,
    /// Grid resolution of the visibility test, per side.
    pub visibility_grid: usize,
}

impl Default for DreamConfig {
    fn default() -> Self {
        DreamConfig {
            per_function: 100,
            max_rejections: 10_000,
            mixtures: Mixtures::default(),
            bound: 1.0,
            leniency: 0.1,
            min_area: 0.005,
            min_visible: 0.5,
            visibility_grid: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum Rejection {
    #[error("does not execute")]
    Exec,
    #[error("non-positive dimension")]
    NonPositive,
    #[error("corner outside bounds")]
    OutOfBounds,
    #[error("primitive mostly hidden")]
    Occluded,
    #[error("primitive below area floor")]
    TooSmall,
    #[error("more than {MAX_PRIMS} primitives")]
    TooMany,
    #[error("redundant consecutive operators")]
    Redundant,
}

#[derive(Debug, thiserror::Error)]
pub enum DreamError {
    #[error("no valid dream for {function} after {tries} rejections")]
    Timeout { function: String, tries: usize },
    #[error("unknown function {0}")]
    UnknownFunction(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dream {
    pub expr: Expr,
    pub prims: Vec<Primitive>,
    pub source: String,
}

/// Base shape functions dreamt alongside the abstractions.
pub const BASE_FUNCTIONS: [&str; 5] = ["Rect", "Move", "SymRef", "SymTrans", "Union"];

pub fn functions(lib: &Library) -> Vec<String> {
    BASE_FUNCTIONS.iter().map(|s| s.to_string()).chain(lib.abstractions().iter().map(|a| a.name.clone())).collect()
}

/// Fraction of `prims[i]` not covered by any other primitive, on a
/// stratified grid of cell centers.
pub fn visible_fraction(prims: &[Primitive], i: usize, grid: usize) -> f64 {
    let p = prims[i];
    let mut free = 0;
    for a in 0..grid {
        for b in 0..grid {
            let px = p.x - p.w / 2.0 + p.w * (a as f64 + 0.5) / grid as f64;
            let py = p.y - p.h / 2.0 + p.h * (b as f64 + 0.5) / grid as f64;
            if !prims.iter().enumerate().any(|(j, q)| j != i && q.contains(px, py)) {
                free += 1;
            }
        }
    }
    free as f64 / (grid * grid) as f64
}

fn redundant(e: &Expr) -> bool {
    let mut bad = false;
    e.walk(&mut |n| match n.op {
        Op::Move => bad |= n.args[0].op == Op::Move,
        Op::SymRef => bad |= n.args[0].op == Op::SymRef && n.args[0].args[1] == n.args[1],
        _ => {}
    });
    bad
}

/// Applies every rejection rule to an expression and its execution.
pub fn check(e: &Expr, lib: &Library, cfg: &DreamConfig) -> Result<Vec<Primitive>, Rejection> {
    let flat = inline(e, lib).map_err(|_| Rejection::Exec)?;
    if redundant(&flat) {
        return Err(Rejection::Redundant);
    }
    let prims = execute(e, lib).map_err(|_| Rejection::Exec)?;
    check_prims(&prims, cfg)?;
    Ok(prims)
}

pub fn check_prims(prims: &[Primitive], cfg: &DreamConfig) -> Result<(), Rejection> {
    if prims.is_empty() || prims.len() > MAX_PRIMS {
        return Err(Rejection::TooMany);
    }
    let lim = cfg.bound * (1.0 + cfg.leniency) + 1e-9;
    for p in prims {
        if !(p.w > 0.0 && p.h > 0.0) {
            return Err(Rejection::NonPositive);
        }
        if (p.x.abs() + p.w / 2.0) > lim || (p.y.abs() + p.h / 2.0) > lim {
            return Err(Rejection::OutOfBounds);
        }
        if p.area() < cfg.min_area - 1e-12 {
            return Err(Rejection::TooSmall);
        }
    }
    for i in 0..prims.len() {
        if visible_fraction(prims, i, cfg.visibility_grid) < cfg.min_visible {
            return Err(Rejection::Occluded);
        }
    }
    Ok(())
}

/// Mixture used for each float parameter of an abstraction, taken from the
/// first base operator slot the parameter flows into.
pub fn param_slots(params: &[Sort], body: &Expr) -> Vec<Slot> {
    let mut out = vec![None; params.len()];
    fn walk(e: &Expr, ctx: Slot, out: &mut [Option<Slot>]) {
        match &e.op {
            Op::Param(k) => {
                out[*k].get_or_insert(ctx);
            }
            Op::Rect => {
                walk(&e.args[0], Slot::Dim, out);
                walk(&e.args[1], Slot::Dim, out);
            }
            Op::Move => {
                walk(&e.args[0], ctx, out);
                walk(&e.args[1], Slot::MoveX, out);
                walk(&e.args[2], Slot::MoveY, out);
            }
            Op::SymTrans => {
                walk(&e.args[0], ctx, out);
                walk(&e.args[3], Slot::Distance, out);
            }
            _ => {
                for a in &e.args {
                    walk(a, ctx, out);
                }
            }
        }
    }
    walk(body, Slot::Dim, &mut out);
    out.into_iter().map(|s| s.unwrap_or(Slot::Dim)).collect()
}

fn axis(rng: &mut impl Rng) -> Expr {
    Expr::axis(if rng.random_bool(0.5) { Axis::X } else { Axis::Y })
}

fn int(rng: &mut impl Rng) -> Expr {
    Expr::int(rng.random_range(1..=4))
}

struct Sampler<'a, R> {
    mix: &'a Mixtures,
    rng: &'a mut R,
}

impl<R: Rng> Sampler<'_, R> {
    fn f(&mut self, s: Slot) -> Expr {
        Expr::float(self.mix.sample(s, self.rng))
    }

    fn rect(&mut self) -> Expr {
        Expr::new(Op::Rect, vec![self.f(Slot::Dim), self.f(Slot::Dim)])
    }

    fn placed(&mut self) -> Expr {
        let r = self.rect();
        Expr::mv(r, self.f(Slot::MoveX), self.f(Slot::MoveY))
    }

    fn symref(&mut self, inner: Expr) -> Expr {
        Expr::new(Op::SymRef, vec![inner, axis(self.rng)])
    }

    fn symtrans(&mut self, inner: Expr) -> Expr {
        let a = axis(self.rng);
        let k = int(self.rng);
        Expr::new(Op::SymTrans, vec![inner, a, k, self.f(Slot::Distance)])
    }

    /// Placed rectangle optionally wrapped once.
    fn part(&mut self) -> Expr {
        let p = self.placed();
        match self.rng.random_range(0..3) {
            0 => p,
            1 => self.symref(p),
            _ => self.symtrans(p),
        }
    }

    fn base(&mut self, name: &str) -> Expr {
        match name {
            "Rect" => self.rect(),
            "Move" => self.placed(),
            "SymRef" => {
                let inner = if self.rng.random_bool(0.7) { self.placed() } else { self.symtrans_of_placed() };
                self.symref(inner)
            }
            "SymTrans" => {
                let inner = if self.rng.random_bool(0.7) {
                    self.placed()
                } else {
                    let p = self.placed();
                    self.symref(p)
                };
                self.symtrans(inner)
            }
            _ => {
                let a = self.part();
                let b = self.part();
                Expr::union(a, b)
            }
        }
    }

    fn symtrans_of_placed(&mut self) -> Expr {
        let p = self.placed();
        self.symtrans(p)
    }

    fn call(&mut self, name: &str, params: &[Sort], slots: &[Slot]) -> Expr {
        let args = params
            .iter()
            .zip(slots)
            .map(|(s, &slot)| match s {
                Sort::Axis => axis(self.rng),
                Sort::Int => int(self.rng),
                _ => self.f(slot),
            })
            .collect();
        Expr::call(name, args)
    }
}

/// Rejection-samples one dream of `function`.
pub fn sample_dream(function: &str, lib: &Library, cfg: &DreamConfig, rng: &mut impl Rng) -> Result<Dream, DreamError> {
    let abs = lib.get(function).cloned();
    if abs.is_none() && !BASE_FUNCTIONS.contains(&function) {
        return Err(DreamError::UnknownFunction(function.to_string()));
    }
    let slots = abs.as_ref().map(|a| param_slots(&a.params, &a.body));
    let mut s = Sampler { mix: &cfg.mixtures, rng };
    for _ in 0..cfg.max_rejections {
        let e = match (&abs, &slots) {
            (Some(a), Some(sl)) => s.call(&a.name, &a.params, sl),
            _ => s.base(function),
        };
        if let Ok(prims) = check(&e, lib, cfg) {
            return Ok(Dream { expr: e, prims, source: function.to_string() });
        }
    }
    Err(DreamError::Timeout { function: function.to_string(), tries: cfg.max_rejections })
}

/// A training scene and the dreams it was built from.
#[derive(Clone, Debug)]
pub struct CompositeScene {
    pub scene: Scene,
    pub targets: Vec<Dream>,
    pub distractors: Vec<Primitive>,
}

/// Combines 1 to 4 dreams of under-represented functions, optionally moved
/// (the move is not part of the target) and with distractor primitives from
/// the corpus.
pub fn make_composite(
    pool: &BTreeMap<String, Vec<Dream>>,
    counts: &BTreeMap<String, usize>,
    needed: usize,
    corpus: &[Scene],
    cfg: &DreamConfig,
    rng: &mut impl Rng,
) -> Option<CompositeScene> {
    let mut under: Vec<&String> =
        pool.keys().filter(|f| counts.get(*f).copied().unwrap_or(0) < needed && !pool[*f].is_empty()).collect();
    if under.is_empty() {
        under = pool.keys().filter(|f| !pool[*f].is_empty()).collect();
    }
    if under.is_empty() {
        return None;
    }
    for _ in 0..100 {
        let k = rng.random_range(1..=4);
        let mut targets = Vec::with_capacity(k);
        let mut prims = Vec::new();
        for _ in 0..k {
            let f = under.choose(rng)?;
            let mut d = pool[*f].choose(rng)?.clone();
            if rng.random_bool(0.5) {
                let dx = cfg.mixtures.sample(Slot::MoveX, rng);
                let dy = cfg.mixtures.sample(Slot::MoveY, rng);
                for p in &mut d.prims {
                    p.x = round2(p.x + dx);
                    p.y = round2(p.y + dy);
                }
            }
            prims.extend(d.prims.iter().copied());
            targets.push(d);
        }
        let mut distractors = Vec::new();
        if rng.random_bool(0.5) {
            if let Some(src) = corpus.choose(rng) {
                let n = rng.random_range(1..=src.prims.len().min(4));
                distractors = src.prims.choose_multiple(rng, n).copied().collect();
            }
        }
        prims.extend(distractors.iter().copied());
        if prims.len() > MAX_PRIMS {
            continue;
        }
        return Some(CompositeScene { scene: Scene { id: String::new(), prims }, targets, distractors });
    }
    None
}

/// One (scene, target) training pair.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DreamRecord {
    pub scene: Vec<Primitive>,
    pub target_tokens: Vec<String>,
    pub target: String,
    pub source: String,
}

#[derive(Clone, Debug, Default)]
pub struct DreamSet {
    pub dreams: BTreeMap<String, Vec<Dream>>,
    pub composites: Vec<CompositeScene>,
    /// Target sequences per function.
    pub counts: BTreeMap<String, usize>,
    pub failed: Vec<String>,
}

impl DreamSet {
    pub fn records(&self) -> impl Iterator<Item = DreamRecord> + '_ {
        self.composites.iter().flat_map(|c| {
            c.targets.iter().map(move |t| DreamRecord {
                scene: c.scene.prims.clone(),
                target_tokens: t.expr.tokens(),
                target: t.expr.to_string(),
                source: t.source.clone(),
            })
        })
    }

    pub fn export(&self, path: &Path) -> Result<usize, DreamError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut n = 0;
        for r in self.records() {
            serde_json::to_writer(&mut w, &r).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
            n += 1;
        }
        w.flush()?;
        Ok(n)
    }
}

/// Samples dreams for every function and builds composites until each
/// function is the target of at least `per_function` training pairs.
/// Functions whose sampling times out are reported and skipped.
pub fn dream_phase(lib: &Library, corpus: &[Scene], cfg: &DreamConfig, rng: &mut impl Rng) -> DreamSet {
    let mut set = DreamSet::default();
    let per_pool = cfg.per_function.clamp(1, 64);
    for f in functions(lib) {
        let mut v = Vec::with_capacity(per_pool);
        for _ in 0..per_pool {
            match sample_dream(&f, lib, cfg, rng) {
                Ok(d) => v.push(d),
                Err(e) => {
                    log::warn!("{e}");
                    set.failed.push(f.clone());
                    break;
                }
            }
        }
        if !v.is_empty() {
            set.counts.insert(f.clone(), 0);
            set.dreams.insert(f, v);
        }
    }
    while set.counts.values().any(|&c| c < cfg.per_function) {
        let Some(c) = make_composite(&set.dreams, &set.counts, cfg.per_function, corpus, cfg, rng) else { break };
        for t in &c.targets {
            *set.counts.entry(t.source.clone()).or_default() += 1;
        }
        set.composites.push(c);
    }
    set
}
