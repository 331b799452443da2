//! Proposal: mine parametric abstractions from the current programs.
//!
//! Every singleton sub-expression and every pair of top-level expressions
//! is reduced to a skeleton (literals replaced by slots) and its literal
//! values recorded as a row. Clusters of rows of one skeleton are searched
//! greedily, slot by slot, for a body that keeps as few free parameters as
//! possible while reproducing many rows.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::{split_union, Abstraction, Axis, Expr, Library, Op, Sort};
use crate::objective::{omega, program_complexity, Omega, TokenWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalConfig {
    pub iters: usize,
    pub cluster_size: usize,
    /// Skeletons seen in fewer programs than this fraction are dropped.
    pub min_structure_freq: f64,
    pub tol: f64,
    /// Options covering fewer cluster rows than this fraction are voided.
    pub min_option_support: f64,
    pub seed: u64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            iters: 2000,
            cluster_size: 64,
            min_structure_freq: 0.05,
            tol: 0.005,
            min_option_support: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Val {
    Float(f64),
    Axis(Axis),
    Int(u8),
}

impl Val {
    fn expr(self) -> Expr {
        match self {
            Val::Float(v) => Expr::float(v),
            Val::Axis(a) => Expr::axis(a),
            Val::Int(k) => Expr::int(k),
        }
    }

    fn float(self) -> f64 {
        match self {
            Val::Float(v) => v,
            _ => f64::NAN,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub program: usize,
    pub values: Vec<Val>,
}

/// Skeleton with `Param(i)` at slot `i`, plus the slot sorts.
#[derive(Clone, Debug, PartialEq)]
pub struct Structure {
    pub skeleton: Expr,
    pub sorts: Vec<Sort>,
    pub rows: Vec<Row>,
    /// Distinct programs contributing rows.
    pub programs: usize,
}

#[derive(Clone, Debug, Default)]
pub struct StructureTable {
    pub keys: BTreeMap<String, Structure>,
    pub n_programs: usize,
}

/// Replaces literals by slots in pre-order. Arithmetic is folded to its value.
pub fn skeletonize(e: &Expr) -> (Expr, Vec<Sort>, Vec<Val>) {
    fn eval(e: &Expr) -> Option<f64> {
        Some(match &e.op {
            Op::Float(v) => *v,
            Op::Add => eval(&e.args[0])? + eval(&e.args[1])?,
            Op::Sub => eval(&e.args[0])? - eval(&e.args[1])?,
            Op::Mul => eval(&e.args[0])? * eval(&e.args[1])?,
            Op::Div => eval(&e.args[0])? / eval(&e.args[1])?,
            _ => return None,
        })
    }
    fn walk(e: &Expr, sorts: &mut Vec<Sort>, vals: &mut Vec<Val>) -> Expr {
        let slot = |sorts: &mut Vec<Sort>, vals: &mut Vec<Val>, s, v| {
            sorts.push(s);
            vals.push(v);
            Expr::param(sorts.len() - 1)
        };
        match &e.op {
            Op::Axis(a) => slot(sorts, vals, Sort::Axis, Val::Axis(*a)),
            Op::Int(k) => slot(sorts, vals, Sort::Int, Val::Int(*k)),
            _ if e.op.is_float_fn() || matches!(e.op, Op::Float(_)) => {
                let v = eval(e).unwrap_or(f64::NAN);
                slot(sorts, vals, Sort::Float, Val::Float(v))
            }
            _ => Expr::new(e.op.clone(), e.args.iter().map(|a| walk(a, sorts, vals)).collect()),
        }
    }
    let mut sorts = Vec::new();
    let mut vals = Vec::new();
    let sk = walk(e, &mut sorts, &mut vals);
    (sk, sorts, vals)
}

fn shift(e: &Expr, by: usize) -> Expr {
    match e.op {
        Op::Param(k) => Expr::param(k + by),
        _ => Expr::new(e.op.clone(), e.args.iter().map(|a| shift(a, by)).collect()),
    }
}

/// Records singleton and paired structures of every program, then drops
/// skeletons seen in too few programs.
pub fn record_structures(programs: &[Expr], min_freq: f64) -> StructureTable {
    let mut table = StructureTable { keys: BTreeMap::new(), n_programs: programs.len() };
    let mut seen: HashMap<String, BTreeSet<usize>> = HashMap::new();
    let mut add = |table: &mut StructureTable, sk: Expr, sorts: Vec<Sort>, values: Vec<Val>, program: usize| {
        let key = sk.to_string();
        seen.entry(key.clone()).or_default().insert(program);
        table
            .keys
            .entry(key)
            .or_insert_with(|| Structure { skeleton: sk, sorts, rows: Vec::new(), programs: 0 })
            .rows
            .push(Row { program, values });
    };
    for (pi, p) in programs.iter().enumerate() {
        let tops = split_union(p);
        for t in &tops {
            t.walk(&mut |e| {
                if e.op.is_shape_fn() && e.op != Op::Union {
                    let (sk, sorts, vals) = skeletonize(e);
                    add(&mut table, sk, sorts, vals, pi);
                }
            });
        }
        let parts: Vec<_> = tops.iter().map(skeletonize).collect();
        for i in 0..parts.len() {
            for j in i + 1..parts.len() {
                let (a, b) = (&parts[i], &parts[j]);
                let (ka, kb) = (a.0.to_string(), b.0.to_string());
                let swap = match ka.cmp(&kb) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Equal => cmp_vals(&a.2, &b.2) == std::cmp::Ordering::Greater,
                    std::cmp::Ordering::Less => false,
                };
                let (a, b) = if swap { (b, a) } else { (a, b) };
                let sk = Expr::union(a.0.clone(), shift(&b.0, a.1.len()));
                let sorts = [a.1.clone(), b.1.clone()].concat();
                let vals = [a.2.clone(), b.2.clone()].concat();
                add(&mut table, sk, sorts, vals, pi);
            }
        }
    }
    let min = (min_freq * programs.len() as f64).ceil().max(1.0) as usize;
    table.keys.retain(|k, s| {
        s.programs = seen[k].len();
        s.programs >= min
    });
    table
}

fn cmp_vals(a: &[Val], b: &[Val]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = match (x, y) {
            (Val::Float(p), Val::Float(q)) => p.total_cmp(q),
            (Val::Axis(p), Val::Axis(q)) => (*p as u8).cmp(&(*q as u8)),
            (Val::Int(p), Val::Int(q)) => p.cmp(q),
            _ => std::cmp::Ordering::Equal,
        };
        if o != std::cmp::Ordering::Equal {
            return o;
        }
    }
    std::cmp::Ordering::Equal
}

#[derive(Clone, Debug)]
pub struct Cluster<'a> {
    pub key: &'a str,
    pub structure: &'a Structure,
    pub rows: Vec<&'a Row>,
}

/// Picks a key with probability proportional to its row count and a random
/// subset of at most `size` of its rows.
pub fn sample_cluster<'a>(table: &'a StructureTable, size: usize, rng: &mut impl Rng) -> Option<Cluster<'a>> {
    let total: usize = table.keys.values().map(|s| s.rows.len()).sum();
    if total == 0 {
        return None;
    }
    let mut u = rng.random_range(0..total);
    for (k, s) in &table.keys {
        if u < s.rows.len() {
            let n = s.rows.len().min(size);
            let mut idx = sample(rng, s.rows.len(), n).into_vec();
            idx.sort_unstable();
            return Some(Cluster { key: k, structure: s, rows: idx.into_iter().map(|i| &s.rows[i]).collect() });
        }
        u -= s.rows.len();
    }
    None
}

/// Parametric relation over earlier free parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Rel {
    Zero,
    Var(usize),
    Bin(Op, Box<Rel>, Box<Rel>),
}

impl Rel {
    fn eval(&self, vals: &[f64]) -> f64 {
        match self {
            Rel::Zero => 0.0,
            Rel::Var(k) => vals[*k],
            Rel::Bin(op, a, b) => {
                let (x, y) = (a.eval(vals), b.eval(vals));
                match op {
                    Op::Add => x + y,
                    Op::Sub => x - y,
                    Op::Mul => x * y,
                    _ => x / y,
                }
            }
        }
    }

    fn expr(&self) -> Expr {
        match self {
            Rel::Zero => Expr::float(0.0),
            Rel::Var(k) => Expr::param(*k),
            Rel::Bin(op, a, b) => Expr::new(op.clone(), vec![a.expr(), b.expr()]),
        }
    }

    fn bin(op: &Op, a: Rel, b: Rel) -> Rel {
        Rel::Bin(op.clone(), Box::new(a), Box::new(b))
    }
}

/// How one skeleton slot is filled in the abstraction body.
#[derive(Clone, Debug, PartialEq)]
pub enum Fill {
    /// New parameter with the given index.
    Fresh(usize),
    /// Earlier discrete parameter.
    Reuse(usize),
    Static(Val),
    Relation(Rel),
}

#[derive(Clone, Debug)]
pub struct CandidateAbstraction {
    pub key: String,
    pub abstraction: Abstraction,
    pub fills: Vec<Fill>,
    pub frequency: f64,
    pub gain: f64,
    pub score: f64,
    /// Program indices with at least one reproduced row.
    pub coverage: BTreeSet<usize>,
    /// No free parameters at all.
    pub degenerate: bool,
}

const OPS: [Op; 4] = [Op::Add, Op::Sub, Op::Mul, Op::Div];

/// Structural saving of replacing a skeleton instance with one call:
/// every shape token but one disappears.
pub fn structural_gain(skeleton: &Expr, w: &TokenWeights) -> f64 {
    let mut n = 0usize;
    skeleton.walk(&mut |e| {
        if e.op.is_shape_fn() {
            n += 1;
        }
    });
    (n as f64 - 1.0) * w.shape_fn
}

fn slot_weight(s: Sort, w: &TokenWeights) -> f64 {
    if s == Sort::Float {
        w.float
    } else {
        w.categorical
    }
}

/// Greedy slot filling over one cluster. Returns `None` when no option set
/// yields positive gain.
pub fn greedy_abstraction_search(
    cluster: &Cluster,
    w: &TokenWeights,
    cfg: &ProposalConfig,
) -> Option<(Vec<Fill>, Vec<Sort>, f64)> {
    let rows = &cluster.rows;
    let n = rows.len();
    if n == 0 || n > 64 {
        return None;
    }
    let full: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let min_support = ((cfg.min_option_support * n as f64).ceil() as u32).max(1);
    let sorts = &cluster.structure.sorts;
    let mut covered = full;
    let mut gain = structural_gain(&cluster.structure.skeleton, w);
    let mut fills = Vec::with_capacity(sorts.len());
    let mut params: Vec<Sort> = Vec::new();
    // per parameter: its column over cluster rows
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut disc: Vec<(usize, usize)> = Vec::new();
    for (slot, &sort) in sorts.iter().enumerate() {
        let actual: Vec<Val> = rows.iter().map(|r| r.values[slot]).collect();
        let mut best: Option<(f64, Fill, u64)> = None;
        let consider = |fill: Fill, mask: u64, best: &mut Option<(f64, Fill, u64)>| {
            let m = mask & covered;
            if m.count_ones() < min_support {
                return;
            }
            let s = m.count_ones() as f64 / n as f64 * (gain + slot_weight(sort, w));
            if best.as_ref().is_none_or(|b| s > b.0 + 1e-12) {
                *best = Some((s, fill, m));
            }
        };
        if sort == Sort::Float {
            let target: Vec<f64> = actual.iter().map(|v| v.float()).collect();
            let fvars: Vec<usize> = (0..params.len()).filter(|&k| params[k] == Sort::Float).collect();
            let rowvals: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
            let mask_of = |r: &Rel| {
                let mut m = 0u64;
                for i in 0..n {
                    if covered >> i & 1 == 1 {
                        let v = r.eval(&rowvals[i]);
                        if v.is_finite() && (v - target[i]).abs() <= cfg.tol {
                            m |= 1 << i;
                        }
                    }
                }
                m
            };
            let mut union = 0u64;
            for level in 0..=3 {
                let mut level_rels = Vec::new();
                match level {
                    0 => level_rels.push(Rel::Zero),
                    1 => {
                        for &a in &fvars {
                            level_rels.push(Rel::Var(a));
                            level_rels.push(Rel::bin(&Op::Sub, Rel::Zero, Rel::Var(a)));
                        }
                    }
                    2 => {
                        for op in &OPS {
                            for &a in &fvars {
                                for &b in &fvars {
                                    if a == b && matches!(op, Op::Sub | Op::Div) {
                                        continue;
                                    }
                                    level_rels.push(Rel::bin(op, Rel::Var(a), Rel::Var(b)));
                                }
                            }
                        }
                    }
                    _ => {
                        // two-operator trees, prefiltered on one covered row
                        let pivot = (0..n).find(|&i| covered >> i & 1 == 1)?;
                        let pv = |k: usize| cols[k][pivot];
                        for op1 in &OPS {
                            for op2 in &OPS {
                                for &a in &fvars {
                                    for &b in &fvars {
                                        let inner = apply(op2, pv(a), pv(b));
                                        for &c in &fvars {
                                            if (apply(op1, inner, pv(c)) - target[pivot]).abs() <= cfg.tol {
                                                level_rels.push(Rel::bin(
                                                    op1,
                                                    Rel::bin(op2, Rel::Var(a), Rel::Var(b)),
                                                    Rel::Var(c),
                                                ));
                                            }
                                            if (apply(op1, pv(c), inner) - target[pivot]).abs() <= cfg.tol {
                                                level_rels.push(Rel::bin(
                                                    op1,
                                                    Rel::Var(c),
                                                    Rel::bin(op2, Rel::Var(a), Rel::Var(b)),
                                                ));
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                for r in level_rels {
                    let m = mask_of(&r);
                    union |= m;
                    consider(Fill::Relation(r), m, &mut best);
                }
                if union & covered == covered {
                    break;
                }
            }
        } else {
            for &(k, s) in &disc {
                if cluster.structure.sorts[s] != sort {
                    continue;
                }
                let mut m = 0u64;
                for i in 0..n {
                    if rows[i].values[s] == actual[i] {
                        m |= 1 << i;
                    }
                }
                consider(Fill::Reuse(k), m, &mut best);
            }
            let mut distinct: Vec<Val> = Vec::new();
            for v in &actual {
                if !distinct.contains(v) {
                    distinct.push(*v);
                }
            }
            for v in distinct {
                let mut m = 0u64;
                for (i, a) in actual.iter().enumerate().take(n) {
                    if *a == v {
                        m |= 1 << i;
                    }
                }
                consider(Fill::Static(v), m, &mut best);
            }
        }
        // a fresh parameter keeps every row
        let fresh_score = covered.count_ones() as f64 / n as f64 * gain;
        match best {
            Some((s, fill, m)) if s > fresh_score + 1e-12 => {
                covered = m;
                gain += slot_weight(sort, w);
                fills.push(fill);
            }
            _ => {
                let k = params.len();
                params.push(sort);
                if sort == Sort::Float {
                    cols.push(actual.iter().map(|v| v.float()).collect());
                } else {
                    cols.push(vec![f64::NAN; n]);
                    disc.push((k, slot));
                }
                fills.push(Fill::Fresh(k));
            }
        }
    }
    if gain <= 0.0 || covered == 0 {
        return None;
    }
    Some((fills, params, gain))
}

fn apply(op: &Op, x: f64, y: f64) -> f64 {
    match op {
        Op::Add => x + y,
        Op::Sub => x - y,
        Op::Mul => x * y,
        _ => x / y,
    }
}

/// Body of the abstraction described by `fills`.
pub fn body_of(skeleton: &Expr, fills: &[Fill]) -> Expr {
    let args: Vec<Expr> = fills
        .iter()
        .map(|f| match f {
            Fill::Fresh(k) | Fill::Reuse(k) => Expr::param(*k),
            Fill::Static(v) => v.expr(),
            Fill::Relation(r) => r.expr(),
        })
        .collect();
    skeleton.substitute(&args)
}

/// Free parameter values if `fills` reproduces `row`.
pub fn reproduce(fills: &[Fill], row: &[Val], tol: f64) -> Option<Vec<Val>> {
    let mut params: Vec<Val> = Vec::new();
    let mut floats: Vec<f64> = Vec::new();
    for (f, &v) in fills.iter().zip(row) {
        match f {
            Fill::Fresh(_) => {
                params.push(v);
                floats.push(v.float());
            }
            Fill::Reuse(k) => {
                if params[*k] != v {
                    return None;
                }
            }
            Fill::Static(s) => {
                if *s != v {
                    return None;
                }
            }
            Fill::Relation(r) => {
                let p = r.eval(&floats);
                if !p.is_finite() || (p - v.float()).abs() > tol {
                    return None;
                }
            }
        }
    }
    Some(params)
}

/// Concrete instance and its call-form rewrite for one row; the gain is the
/// complexity difference between them.
pub fn witness(c: &CandidateAbstraction, skeleton: &Expr, row: &[Val], tol: f64) -> Option<(Expr, Expr)> {
    let args = reproduce(&c.fills, row, tol)?;
    let instance = skeleton.substitute(&row.iter().map(|v| v.expr()).collect::<Vec<_>>());
    let call = Expr::call(&c.abstraction.name, args.into_iter().map(Val::expr).collect());
    Some((instance, call))
}

pub fn witness_gain(c: &CandidateAbstraction, skeleton: &Expr, row: &[Val], tol: f64, w: &TokenWeights) -> Option<f64> {
    let (p, pa) = witness(c, skeleton, row, tol)?;
    Some(program_complexity(&p, w).ok()? - program_complexity(&pa, w).ok()?)
}

/// Runs `iters` cluster searches, merges identical bodies and ranks by
/// frequency over all programs times gain.
pub fn propose(programs: &[Expr], lib: &Library, cfg: &ProposalConfig) -> Vec<CandidateAbstraction> {
    let table = record_structures(programs, cfg.min_structure_freq);
    propose_from(&table, lib, cfg)
}

pub fn propose_from(table: &StructureTable, lib: &Library, cfg: &ProposalConfig) -> Vec<CandidateAbstraction> {
    if table.keys.is_empty() || table.n_programs == 0 {
        return Vec::new();
    }
    let w = &lib.config.token_weights;
    type Found = (String, Vec<Fill>, Vec<Sort>, f64);
    let found: Vec<Option<Found>> = (0..cfg.iters)
        .into_par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ it as u64);
            let c = sample_cluster(table, cfg.cluster_size, &mut rng)?;
            let (fills, params, gain) = greedy_abstraction_search(&c, w, cfg)?;
            Some((c.key.to_string(), fills, params, gain))
        })
        .collect();
    let mut unique: BTreeMap<String, (String, Vec<Fill>, Vec<Sort>, f64)> = BTreeMap::new();
    for (key, fills, params, gain) in found.into_iter().flatten() {
        let s = &table.keys[&key];
        let body = body_of(&s.skeleton, &fills);
        unique.entry(format!("{params:?}|{body}")).or_insert((key, fills, params, gain));
    }
    let mut out = Vec::new();
    for (key, fills, params, gain) in unique.into_values() {
        let s = &table.keys[&key];
        let body = body_of(&s.skeleton, &fills);
        let om = match omega(&params, &body, &lib.config.omega) {
            Omega::Weight(o) => o,
            Omega::Reject(why) => {
                log::debug!("rejecting {body}: {why}");
                continue;
            }
        };
        let abstraction = Abstraction { name: "candidate".into(), params: params.clone(), body, omega: om };
        if abstraction.validate().is_err() {
            continue;
        }
        let coverage: BTreeSet<usize> =
            s.rows.iter().filter(|r| reproduce(&fills, &r.values, cfg.tol).is_some()).map(|r| r.program).collect();
        let frequency = coverage.len() as f64 / table.n_programs as f64;
        out.push(CandidateAbstraction {
            key,
            degenerate: params.is_empty(),
            abstraction,
            fills,
            frequency,
            gain,
            score: frequency * gain,
            coverage,
        });
    }
    out.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then_with(|| a.abstraction.body.to_string().cmp(&b.abstraction.body.to_string()))
    });
    out
}

/// One line per candidate for inspection.
pub fn report(cands: &[CandidateAbstraction]) -> String {
    let mut s = String::from("rank\tscore\tfrequency\tgain\tcoverage\tparams\tbody\n");
    for (i, c) in cands.iter().enumerate() {
        let params: Vec<String> = c.abstraction.params.iter().map(|p| format!("{p:?}")).collect();
        s.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.2}\t{}\t{}\t{}\n",
            i + 1,
            c.score,
            c.frequency,
            c.gain,
            c.coverage.len(),
            params.join(","),
            c.abstraction.body
        ));
    }
    s
}
