//! Rewrites generated from library abstractions, plus the arithmetic
//! enumeration the naive scheme relies on.

use std::collections::HashMap;

use super::graph::{EGraph, ENode, ENodeOp, Id};
use super::pattern::{Cond, Located, Pat, PatternRewrite, Rewrite, RewriteKind, Rhs, SearchCtx, ValExpr};
use crate::dsl::{Abstraction, Expr, Library, Op, Sort};

fn node_op(op: &Op, lib: &Library) -> ENodeOp {
    match op {
        Op::Union => ENodeOp::Union,
        Op::SymRef => ENodeOp::SymRef,
        Op::SymTrans => ENodeOp::SymTrans,
        Op::Move => ENodeOp::Move,
        Op::Rect => ENodeOp::Rect,
        Op::Add => ENodeOp::Add,
        Op::Sub => ENodeOp::Sub,
        Op::Mul => ENodeOp::Mul,
        Op::Div => ENodeOp::Div,
        Op::Axis(a) => ENodeOp::Axis(*a),
        Op::Int(k) => ENodeOp::Int(*k),
        Op::Float(v) => ENodeOp::lit(*v),
        Op::Call(n) => ENodeOp::Call(lib.index_of(n).expect("abstraction in library") as u32),
        Op::Param(_) => unreachable!("parameters are slots"),
    }
}

fn val_expr(e: &Expr) -> ValExpr {
    let b = |i: usize| Box::new(val_expr(&e.args[i]));
    match &e.op {
        Op::Param(k) => ValExpr::Slot(*k),
        Op::Float(v) => ValExpr::Const(*v),
        Op::Add => ValExpr::Add(b(0), b(1)),
        Op::Sub => ValExpr::Sub(b(0), b(1)),
        Op::Mul => ValExpr::Mul(b(0), b(1)),
        Op::Div => ValExpr::Div(b(0), b(1)),
        _ => unreachable!("float expression"),
    }
}

fn call_rhs(a: &Abstraction, lib: &Library) -> Rhs {
    let idx = lib.index_of(&a.name).expect("abstraction in library") as u32;
    Rhs::Node(ENodeOp::Call(idx), (0..a.params.len()).map(Rhs::Slot).collect())
}

struct CondBuilder<'a> {
    lib: &'a Library,
    bound: Vec<bool>,
    next: usize,
    conds: Vec<Cond>,
}

impl CondBuilder<'_> {
    fn fresh(&mut self) -> usize {
        self.next += 1;
        self.next - 1
    }

    fn float_slot(&mut self, e: &Expr) -> Pat {
        match &e.op {
            Op::Param(k) if !self.bound[*k] => {
                self.bound[*k] = true;
                Pat::Slot(*k)
            }
            _ => {
                let s = self.fresh();
                self.conds.push(Cond::Eq(ValExpr::Slot(s), val_expr(e)));
                Pat::Slot(s)
            }
        }
    }

    fn pat(&mut self, e: &Expr, sort: Sort) -> Pat {
        match (&e.op, sort) {
            (_, Sort::Float) => self.float_slot(e),
            (Op::Param(k), _) => Pat::Slot(*k),
            (op, _) => {
                let sorts: Vec<Sort> = match op {
                    Op::Call(n) => self.lib.get(n).expect("abstraction").params.clone(),
                    _ => op.signature().expect("base op").1.to_vec(),
                };
                let kids = e.args.iter().zip(sorts).map(|(a, s)| self.pat(a, s)).collect();
                Pat::Node(node_op(op, self.lib), kids)
            }
        }
    }
}

/// Conditional rewrite: the body skeleton binds each parameter at its first
/// bare occurrence; every other float position becomes a value condition.
/// The right-hand side is a single call node.
pub fn conditional_rewrite(a: &Abstraction, lib: &Library) -> PatternRewrite {
    let mut b = CondBuilder { lib, bound: vec![false; a.params.len()], next: a.params.len(), conds: Vec::new() };
    // bind bare occurrences first so conditions never stand in for them
    let lhs = b.pat(&a.body, Sort::Shape);
    let mut rw = PatternRewrite::new(&a.name, RewriteKind::Abstraction, lhs, b.conds, call_rhs(a, lib));
    rw.slots = rw.slots.max(b.next);
    rw
}

fn naive_pat(e: &Expr, sort: Sort, lib: &Library) -> Pat {
    match &e.op {
        Op::Param(k) => Pat::Slot(*k),
        op => {
            let sorts: Vec<Sort> = match op {
                Op::Call(n) => lib.get(n).expect("abstraction").params.clone(),
                _ => op.signature().map(|s| s.1.to_vec()).unwrap_or_default(),
            };
            let _ = sort;
            let kids = e.args.iter().zip(sorts).map(|(a, s)| naive_pat(a, s, lib)).collect();
            Pat::Node(node_op(op, lib), kids)
        }
    }
}

/// Purely structural rewrite: parametric relations appear as arithmetic
/// nodes in the pattern and must already exist in the graph.
pub fn naive_rewrite(a: &Abstraction, lib: &Library) -> PatternRewrite {
    let lhs = naive_pat(&a.body, Sort::Shape, lib);
    PatternRewrite::new(&a.name, RewriteKind::Abstraction, lhs, Vec::new(), call_rhs(a, lib))
}

/// Largest arithmetic depth and the float constants used in a body.
pub fn body_arith(body: &Expr) -> (usize, Vec<f64>) {
    fn depth(e: &Expr) -> usize {
        if e.op.is_float_fn() {
            1 + e.args.iter().map(depth).max().unwrap_or(0)
        } else {
            0
        }
    }
    let mut d = 0;
    let mut consts = Vec::new();
    body.walk(&mut |e| {
        d = d.max(depth(e));
        if let Op::Float(v) = e.op {
            consts.push(v);
        }
    });
    (d, consts)
}

/// Naive-scheme enumeration: merges float classes of equal value, then adds
/// `op(x, y)` for every ordered pair of float classes of depth below the
/// limit and merges results into classes with the same value.
pub struct ArithClosure {
    pub ops: Vec<ENodeOp>,
    pub max_depth: usize,
    pub constants: Vec<f64>,
}

const VALUE_TOL: f64 = 1e-9;

fn value_key(v: f64) -> i64 {
    (v * 1e6).round() as i64
}

struct ValueIndex {
    map: HashMap<i64, Vec<Id>>,
}

impl ValueIndex {
    fn lookup(&self, g: &EGraph, v: f64) -> Option<Id> {
        let k = value_key(v);
        for kk in [k - 1, k, k + 1] {
            if let Some(ids) = self.map.get(&kk) {
                for &id in ids {
                    if g.value(id).is_some_and(|w| (w - v).abs() <= VALUE_TOL) {
                        return Some(g.find(id));
                    }
                }
            }
        }
        None
    }

    fn insert(&mut self, v: f64, id: Id) {
        self.map.entry(value_key(v)).or_default().push(id);
    }
}

impl Rewrite for ArithClosure {
    fn name(&self) -> &str {
        "arith-closure"
    }

    fn kind(&self) -> RewriteKind {
        RewriteKind::Closure
    }

    fn search(&self, g: &EGraph, _: &SearchCtx) -> Vec<Located> {
        vec![Located { root: g.root, subst: Default::default() }]
    }

    fn apply(&self, g: &mut EGraph, _: &Located, ctx: &SearchCtx) {
        for &c in &self.constants {
            g.add(ENode::leaf(ENodeOp::lit(c)));
        }
        let mut index = ValueIndex { map: HashMap::new() };
        let floats: Vec<Id> = g.class_ids().filter(|&id| g.class(id).sort == Sort::Float).collect();
        for id in floats {
            let Some(v) = g.value(id) else { continue };
            match index.lookup(g, v) {
                Some(other) => {
                    g.union(other, id);
                }
                None => index.insert(v, id),
            }
        }
        g.rebuild();

        // depth of the shallowest term in each float class
        let mut depth: HashMap<Id, usize> = HashMap::new();
        loop {
            let mut changed = false;
            for id in g.class_ids() {
                let c = g.class(id);
                if c.sort != Sort::Float {
                    continue;
                }
                let best = c
                    .nodes
                    .iter()
                    .filter_map(|n| {
                        if n.op.is_arith() {
                            let a = depth.get(&g.find(n.children[0]))?;
                            let b = depth.get(&g.find(n.children[1]))?;
                            Some(1 + a.max(b))
                        } else {
                            Some(0)
                        }
                    })
                    .min();
                if let Some(d) = best {
                    if depth.get(&id).is_none_or(|&old| d < old) {
                        depth.insert(id, d);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut pool: Vec<Id> = depth.iter().filter(|(_, &d)| d < self.max_depth).map(|(&id, _)| id).collect();
        pool.sort();
        let mut checks = 0usize;
        for &x in &pool {
            for &y in &pool {
                for &op in &self.ops {
                    checks += 1;
                    if checks.is_multiple_of(256) && ctx.exhausted(g) {
                        return;
                    }
                    let (Some(vx), Some(vy)) = (g.value(x), g.value(y)) else { continue };
                    if op == ENodeOp::Div && vy == 0.0 {
                        continue;
                    }
                    let id = g.add(ENode::new(op, &[x, y]));
                    let Some(v) = g.value(id) else { continue };
                    let _ = vx;
                    match index.lookup(g, v) {
                        Some(other) if g.find(other) != g.find(id) => {
                            g.union(other, id);
                        }
                        Some(_) => {}
                        None => index.insert(v, id),
                    }
                }
            }
        }
    }
}
