//! Template search by anchored solving. Each template leaf `Rect` has an
//! identity copy (the one produced before any reflection or repetition),
//! whose size and position are simple float expressions of the template
//! parameters. Anchoring leaves to canvas primitives turns those into
//! equations; repetition distances come from same-size neighbours.

use std::collections::HashSet;
use std::time::Instant;

use super::{Proposer, ProposerError, StepBudget};
use crate::dsl::{execute, inline, Axis, Expr, Library, Op, Primitive, Sort};

const TOL: f64 = 1e-6;

pub struct SearchProposer {
    /// Wrapper depth around a placed rectangle.
    pub max_wrappers: usize,
    /// Wrapper depth around abstraction calls.
    pub call_wrappers: usize,
}

impl Default for SearchProposer {
    fn default() -> Self {
        SearchProposer { max_wrappers: 2, call_wrappers: 1 }
    }
}

impl Proposer for SearchProposer {
    fn name(&self) -> &str {
        "search"
    }

    fn propose(&self, canvas: &[Primitive], lib: &Library, budget: &StepBudget) -> Result<Vec<Expr>, ProposerError> {
        let deadline = Instant::now() + budget.time;
        let mut out = Sink {
            seen: HashSet::new(),
            exprs: Vec::new(),
            cap: budget.max_candidates,
            deadline,
            canvas,
            lib,
        };
        for t in self.templates(lib) {
            if out.full() {
                break;
            }
            t.solve(canvas, &mut out);
        }
        Ok(out.exprs)
    }
}

struct Sink<'a> {
    seen: HashSet<String>,
    exprs: Vec<Expr>,
    cap: usize,
    deadline: Instant,
    canvas: &'a [Primitive],
    lib: &'a Library,
}

impl Sink<'_> {
    fn full(&self) -> bool {
        self.exprs.len() >= self.cap || Instant::now() >= self.deadline
    }

    /// Keeps `e` if every primitive it produces lies near the canvas.
    fn push(&mut self, e: Expr) {
        if !self.seen.insert(e.to_string()) {
            return;
        }
        let Ok(out) = execute(&e, self.lib) else { return };
        let thr = self.lib.config.max_prim_error;
        if out.len() <= self.canvas.len() && out.iter().all(|o| self.canvas.iter().any(|c| o.distance(c) <= thr)) {
            self.exprs.push(e);
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Wrap {
    SymRef,
    SymTrans,
    Move,
}

struct Builder {
    sorts: Vec<Sort>,
}

impl Builder {
    fn fresh(&mut self, s: Sort) -> Expr {
        self.sorts.push(s);
        Expr::param(self.sorts.len() - 1)
    }

    fn wrap(&mut self, inner: Expr, w: Wrap) -> Expr {
        match w {
            Wrap::SymRef => {
                let a = self.fresh(Sort::Axis);
                Expr::new(Op::SymRef, vec![inner, a])
            }
            Wrap::SymTrans => {
                let a = self.fresh(Sort::Axis);
                let k = self.fresh(Sort::Int);
                let d = self.fresh(Sort::Float);
                Expr::new(Op::SymTrans, vec![inner, a, k, d])
            }
            Wrap::Move => {
                let x = self.fresh(Sort::Float);
                let y = self.fresh(Sort::Float);
                Expr::mv(inner, x, y)
            }
        }
    }
}

impl SearchProposer {
    fn templates(&self, lib: &Library) -> Vec<Template> {
        let mut out = Vec::new();
        let chains = |depth: usize, pool: &[Wrap]| {
            let mut all: Vec<Vec<Wrap>> = vec![vec![]];
            let mut frontier: Vec<Vec<Wrap>> = vec![vec![]];
            for _ in 0..depth {
                let mut next = Vec::new();
                for c in &frontier {
                    for &w in pool {
                        let mut c2 = c.clone();
                        c2.push(w);
                        next.push(c2);
                    }
                }
                all.extend(next.iter().cloned());
                frontier = next;
            }
            all
        };
        for chain in chains(self.max_wrappers, &[Wrap::SymRef, Wrap::SymTrans]) {
            let mut b = Builder { sorts: Vec::new() };
            let w = b.fresh(Sort::Float);
            let h = b.fresh(Sort::Float);
            let x = b.fresh(Sort::Float);
            let y = b.fresh(Sort::Float);
            let mut e = Expr::mv(Expr::new(Op::Rect, vec![w, h]), x, y);
            for &c in &chain {
                e = b.wrap(e, c);
            }
            out.extend(Template::new(e, b.sorts, lib));
        }
        for a in lib.abstractions() {
            for chain in chains(self.call_wrappers, &[Wrap::SymRef, Wrap::SymTrans, Wrap::Move]) {
                let mut b = Builder { sorts: Vec::new() };
                let args: Vec<Expr> = a.params.iter().map(|&s| b.fresh(s)).collect();
                let mut e = Expr::call(&a.name, args);
                for &c in &chain {
                    e = b.wrap(e, c);
                }
                out.extend(Template::new(e, b.sorts, lib));
            }
        }
        out
    }
}

/// A template leaf: size and identity-copy offset as parameter expressions.
struct Leaf {
    w: Expr,
    h: Expr,
    dx: Vec<Expr>,
    dy: Vec<Expr>,
}

struct Trans {
    axis: Expr,
    k: Expr,
    d: Expr,
    /// First leaf below this repetition.
    leaf: usize,
}

struct Template {
    expr: Expr,
    sorts: Vec<Sort>,
    leaves: Vec<Leaf>,
    trans: Vec<Trans>,
}

impl Template {
    fn new(expr: Expr, sorts: Vec<Sort>, lib: &Library) -> Option<Template> {
        let flat = inline(&expr, lib).ok()?;
        let mut t = Template { expr, sorts, leaves: Vec::new(), trans: Vec::new() };
        t.collect(&flat, &mut Vec::new(), &mut Vec::new());
        if t.leaves.is_empty() {
            return None;
        }
        Some(t)
    }

    fn collect(&mut self, e: &Expr, dx: &mut Vec<Expr>, dy: &mut Vec<Expr>) {
        match &e.op {
            Op::Rect => self.leaves.push(Leaf {
                w: e.args[0].clone(),
                h: e.args[1].clone(),
                dx: dx.clone(),
                dy: dy.clone(),
            }),
            Op::Move => {
                dx.push(e.args[1].clone());
                dy.push(e.args[2].clone());
                self.collect(&e.args[0], dx, dy);
                dx.pop();
                dy.pop();
            }
            Op::Union => {
                self.collect(&e.args[0], dx, dy);
                self.collect(&e.args[1], dx, dy);
            }
            Op::SymRef => self.collect(&e.args[0], dx, dy),
            Op::SymTrans => {
                let leaf = self.leaves.len();
                self.trans.push(Trans { axis: e.args[1].clone(), k: e.args[2].clone(), d: e.args[3].clone(), leaf });
                self.collect(&e.args[0], dx, dy);
            }
            _ => {}
        }
    }

    fn solve(&self, canvas: &[Primitive], out: &mut Sink) {
        let discrete: Vec<usize> = (0..self.sorts.len()).filter(|&i| self.sorts[i] != Sort::Float).collect();
        let mut assign = vec![Disc::None; self.sorts.len()];
        self.enumerate_discrete(&discrete, 0, &mut assign, canvas, out);
    }

    fn enumerate_discrete(&self, slots: &[usize], i: usize, assign: &mut [Disc], canvas: &[Primitive], out: &mut Sink) {
        if out.full() {
            return;
        }
        if i == slots.len() {
            let st = State { vals: vec![None; self.sorts.len()], pending: Vec::new(), anchors: Vec::new() };
            self.anchor(0, st, &mut vec![false; canvas.len()], assign, canvas, out);
            return;
        }
        let options: Vec<Disc> = match self.sorts[slots[i]] {
            Sort::Axis => vec![Disc::Axis(Axis::X), Disc::Axis(Axis::Y)],
            _ => (1..=4).map(Disc::Int).collect(),
        };
        for o in options {
            assign[slots[i]] = o;
            self.enumerate_discrete(slots, i + 1, assign, canvas, out);
        }
    }

    fn anchor(&self, li: usize, st: State, used: &mut [bool], disc: &[Disc], canvas: &[Primitive], out: &mut Sink) {
        if out.full() {
            return;
        }
        if li == self.leaves.len() {
            self.fill_trans(0, st, disc, canvas, out);
            return;
        }
        let leaf = &self.leaves[li];
        for (j, p) in canvas.iter().enumerate() {
            if used[j] {
                continue;
            }
            let mut s = st.clone();
            s.pending.push((leaf.w.clone(), p.w));
            s.pending.push((leaf.h.clone(), p.h));
            s.pending.push((sum(&leaf.dx), p.x));
            s.pending.push((sum(&leaf.dy), p.y));
            if !s.propagate(disc) {
                continue;
            }
            used[j] = true;
            let mut s2 = s;
            s2.anchors.push(j);
            self.anchor(li + 1, s2, used, disc, canvas, out);
            used[j] = false;
        }
    }

    /// Repetition distances: `k` times the offset to a same-size primitive
    /// aligned with the anchor on the other axis.
    fn fill_trans(&self, ti: usize, st: State, disc: &[Disc], canvas: &[Primitive], out: &mut Sink) {
        if out.full() {
            return;
        }
        let Some(t) = self.trans.get(ti) else {
            self.fill_rest(st, disc, canvas, out);
            return;
        };
        if st.unknowns(&t.d, disc).is_empty() {
            self.fill_trans(ti + 1, st, disc, canvas, out);
            return;
        }
        let (Some(axis), Some(k)) = (eval_axis(&t.axis, disc), eval_int(&t.k, disc)) else { return };
        let a = canvas[st.anchors[t.leaf]];
        for (j, p) in canvas.iter().enumerate() {
            if j == st.anchors[t.leaf] || !near(p.w, a.w) || !near(p.h, a.h) {
                continue;
            }
            let delta = match axis {
                Axis::X if near(p.y, a.y) => p.x - a.x,
                Axis::Y if near(p.x, a.x) => p.y - a.y,
                _ => continue,
            };
            if near(delta, 0.0) {
                continue;
            }
            let mut s = st.clone();
            s.pending.push((t.d.clone(), k as f64 * delta));
            if s.propagate(disc) {
                self.fill_trans(ti + 1, s, disc, canvas, out);
            }
        }
    }

    /// Floats still free take values from the canvas.
    fn fill_rest(&self, st: State, disc: &[Disc], canvas: &[Primitive], out: &mut Sink) {
        let free: Vec<usize> =
            (0..self.sorts.len()).filter(|&i| self.sorts[i] == Sort::Float && st.vals[i].is_none()).collect();
        if free.is_empty() {
            if st.pending.is_empty() {
                out.push(self.instantiate(&st, disc));
            }
            return;
        }
        let mut pool: Vec<f64> = vec![0.0];
        for p in canvas {
            pool.extend([p.w, p.h, p.x, p.y]);
        }
        pool.sort_by(f64::total_cmp);
        pool.dedup_by(|a, b| near(*a, *b));
        let slot = free[0];
        for &v in &pool {
            if out.full() {
                return;
            }
            let mut s = st.clone();
            s.vals[slot] = Some(v);
            if s.propagate(disc) {
                self.fill_rest(s, disc, canvas, out);
            }
        }
    }

    fn instantiate(&self, st: &State, disc: &[Disc]) -> Expr {
        let args: Vec<Expr> = (0..self.sorts.len())
            .map(|i| match disc[i] {
                Disc::Axis(a) => Expr::axis(a),
                Disc::Int(k) => Expr::int(k),
                Disc::None => Expr::float(snap(st.vals[i].unwrap())),
            })
            .collect();
        self.expr.substitute(&args)
    }
}

#[derive(Clone, Copy, Debug)]
enum Disc {
    None,
    Axis(Axis),
    Int(u8),
}

#[derive(Clone)]
struct State {
    vals: Vec<Option<f64>>,
    /// Equations `expr = value` not yet checked or solved.
    pending: Vec<(Expr, f64)>,
    anchors: Vec<usize>,
}

impl State {
    fn unknowns(&self, e: &Expr, disc: &[Disc]) -> Vec<usize> {
        let mut out = Vec::new();
        e.walk(&mut |n| {
            if let Op::Param(k) = n.op {
                if matches!(disc[k], Disc::None) && self.vals[k].is_none() {
                    out.push(k);
                }
            }
        });
        out
    }

    /// Solves equations with one unknown occurrence and checks closed ones.
    /// Returns false on a contradiction.
    fn propagate(&mut self, disc: &[Disc]) -> bool {
        loop {
            let mut progress = false;
            let mut i = 0;
            while i < self.pending.len() {
                let (e, target) = self.pending[i].clone();
                let unk = self.unknowns(&e, disc);
                if unk.is_empty() {
                    match self.eval(&e, disc) {
                        Some(v) if (v - target).abs() <= TOL => {}
                        _ => return false,
                    }
                    self.pending.swap_remove(i);
                    progress = true;
                    continue;
                }
                if unk.len() == 1 {
                    if let Some(v) = self.invert(&e, target, disc) {
                        if !v.is_finite() {
                            return false;
                        }
                        self.vals[unk[0]] = Some(snap(v));
                        self.pending.swap_remove(i);
                        progress = true;
                        continue;
                    }
                }
                i += 1;
            }
            if !progress {
                return true;
            }
        }
    }

    fn eval(&self, e: &Expr, disc: &[Disc]) -> Option<f64> {
        Some(match &e.op {
            Op::Float(v) => *v,
            Op::Param(k) => match disc[*k] {
                Disc::None => self.vals[*k]?,
                _ => return None,
            },
            Op::Add => self.eval(&e.args[0], disc)? + self.eval(&e.args[1], disc)?,
            Op::Sub => self.eval(&e.args[0], disc)? - self.eval(&e.args[1], disc)?,
            Op::Mul => self.eval(&e.args[0], disc)? * self.eval(&e.args[1], disc)?,
            Op::Div => self.eval(&e.args[0], disc)? / self.eval(&e.args[1], disc)?,
            _ => return None,
        })
    }

    /// Value of the single unknown in `e` such that `e = target`.
    fn invert(&self, e: &Expr, target: f64, disc: &[Disc]) -> Option<f64> {
        if let Op::Param(_) = e.op {
            return Some(target);
        }
        if e.args.len() != 2 {
            return None;
        }
        let (a, b) = (&e.args[0], &e.args[1]);
        let left = !self.unknowns(a, disc).is_empty();
        let (known, unknown) = if left { (b, a) } else { (a, b) };
        let k = self.eval(known, disc)?;
        let t = match (&e.op, left) {
            (Op::Add, _) => target - k,
            (Op::Sub, true) => target + k,
            (Op::Sub, false) => k - target,
            (Op::Mul, _) if k != 0.0 => target / k,
            (Op::Div, true) => target * k,
            (Op::Div, false) if target != 0.0 => k / target,
            _ => return None,
        };
        self.invert(unknown, t, disc)
    }
}

fn eval_axis(e: &Expr, disc: &[Disc]) -> Option<Axis> {
    match e.op {
        Op::Axis(a) => Some(a),
        Op::Param(k) => match disc[k] {
            Disc::Axis(a) => Some(a),
            _ => None,
        },
        _ => None,
    }
}

fn eval_int(e: &Expr, disc: &[Disc]) -> Option<u8> {
    match e.op {
        Op::Int(k) => Some(k),
        Op::Param(k) => match disc[k] {
            Disc::Int(v) => Some(v),
            _ => None,
        },
        _ => None,
    }
}

fn sum(terms: &[Expr]) -> Expr {
    terms.iter().cloned().reduce(|a, b| Expr::new(Op::Add, vec![a, b])).unwrap_or(Expr::float(0.0))
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

/// Rounds away arithmetic noise when a 6-decimal value is that close.
fn snap(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if (r - v).abs() <= 1e-9 {
        r
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_expr_in_body, Abstraction};
    use crate::wake::{select, WakeConfig};

    fn budget() -> StepBudget {
        StepBudget::from(&WakeConfig::default())
    }

    fn prims(a: &[[f64; 4]]) -> Vec<Primitive> {
        a.iter().map(|&p| p.into()).collect()
    }

    fn best(canvas: &[Primitive], lib: &Library) -> Expr {
        let c = SearchProposer::default().propose(canvas, lib, &budget()).unwrap();
        let idx: Vec<usize> = (0..canvas.len()).collect();
        select(&c, canvas, &idx, lib).unwrap().expr
    }

    #[test]
    fn finds_reflection() {
        let lib = Library::default();
        let c = prims(&[[0.2, 0.3, 0.4, 0.1], [0.2, 0.3, -0.4, 0.1]]);
        // Both anchors tie; the lexicographic tie-break picks the negative one.
        assert_eq!(best(&c, &lib).to_string(), "SymRef(Move(Rect(0.2,0.3),-0.4,0.1),AX)");
    }

    #[test]
    fn finds_repetition() {
        let lib = Library::default();
        let c = prims(&[[0.1, 0.1, -0.3, 0.2], [0.1, 0.1, 0.0, 0.2], [0.1, 0.1, 0.3, 0.2], [0.1, 0.1, 0.6, 0.2]]);
        let e = best(&c, &lib);
        assert_eq!(e.op, Op::SymTrans);
        assert_eq!(crate::dsl::execute(&e, &lib).unwrap().len(), 4);
    }

    #[test]
    fn solves_abstraction_arguments() {
        let mut lib = Library::default();
        let params = vec![Sort::Float, Sort::Float];
        let body =
            parse_expr_in_body("SymRef(Move(Rect(P0,P1),Add(P0,P1),Add(Sub(P1,P0),P1)),AX)", &lib, &params).unwrap();
        lib.add(Abstraction { name: "Abs_0".into(), params, body, omega: 0.25 }).unwrap();
        let c = prims(&[[0.1, 0.2, 0.3, 0.3], [0.1, 0.2, -0.3, 0.3]]);
        assert_eq!(best(&c, &lib).to_string(), "Abs_0(0.1,0.2)");
    }

    #[test]
    fn candidates_stay_on_canvas() {
        let lib = Library::default();
        let c = prims(&[[0.2, 0.3, 0.4, 0.1], [0.2, 0.3, -0.4, 0.1], [0.1, 0.5, 0.0, -0.2]]);
        let cands = SearchProposer::default().propose(&c, &lib, &budget()).unwrap();
        assert!(!cands.is_empty());
        let valid = cands.iter().filter(|e| crate::wake::score(e, &c, &[0, 1, 2], &lib).is_some()).count();
        assert!(valid * 2 >= cands.len(), "{valid} of {}", cands.len());
        for e in &cands {
            for o in crate::dsl::execute(e, &lib).unwrap() {
                assert!(c.iter().any(|p| o.distance(p) <= 0.05), "{e}");
            }
        }
    }
}
