use smallvec::SmallVec;

use super::graph::{EGraph, ENode, ENodeOp, Id};
use crate::dsl::Sort;

pub type Subst = SmallVec<[Id; 8]>;

/// Structural pattern; slots bind e-classes.
#[derive(Clone, Debug, PartialEq)]
pub enum Pat {
    Slot(usize),
    Node(ENodeOp, Vec<Pat>),
}

impl Pat {
    pub fn node(op: ENodeOp, kids: Vec<Pat>) -> Pat {
        Pat::Node(op, kids)
    }

    pub fn num_slots(&self) -> usize {
        match self {
            Pat::Slot(s) => s + 1,
            Pat::Node(_, kids) => kids.iter().map(Pat::num_slots).max().unwrap_or(0),
        }
    }

    pub fn root_op(&self) -> Option<ENodeOp> {
        match self {
            Pat::Slot(_) => None,
            Pat::Node(op, _) => Some(*op),
        }
    }
}

/// Appends to `out` every extension of `subst` matching `pat` at class `id`.
pub fn ematch(g: &EGraph, pat: &Pat, id: Id, subst: Subst, out: &mut Vec<Subst>) {
    match pat {
        Pat::Slot(s) => {
            let id = g.find(id);
            let mut subst = subst;
            if subst[*s] == Id::NONE {
                subst[*s] = id;
                out.push(subst);
            } else if g.find(subst[*s]) == id {
                out.push(subst);
            }
        }
        Pat::Node(op, kids) => {
            for n in &g.class(id).nodes {
                if n.op != *op || n.children.len() != kids.len() {
                    continue;
                }
                let mut partial = vec![subst.clone()];
                for (kp, &kid) in kids.iter().zip(&n.children) {
                    let mut next = Vec::new();
                    for s in partial {
                        ematch(g, kp, kid, s, &mut next);
                    }
                    partial = next;
                    if partial.is_empty() {
                        break;
                    }
                }
                out.extend(partial);
            }
        }
    }
}

/// Arithmetic over slot values, evaluated against the value map.
#[derive(Clone, Debug, PartialEq)]
pub enum ValExpr {
    Slot(usize),
    Const(f64),
    Add(Box<ValExpr>, Box<ValExpr>),
    Sub(Box<ValExpr>, Box<ValExpr>),
    Mul(Box<ValExpr>, Box<ValExpr>),
    Div(Box<ValExpr>, Box<ValExpr>),
    Neg(Box<ValExpr>),
}

impl ValExpr {
    pub fn eval(&self, g: &EGraph, s: &Subst) -> Option<f64> {
        Some(match self {
            ValExpr::Slot(i) => g.value(s[*i])?,
            ValExpr::Const(c) => *c,
            ValExpr::Add(a, b) => a.eval(g, s)? + b.eval(g, s)?,
            ValExpr::Sub(a, b) => a.eval(g, s)? - b.eval(g, s)?,
            ValExpr::Mul(a, b) => a.eval(g, s)? * b.eval(g, s)?,
            ValExpr::Div(a, b) => a.eval(g, s)? / b.eval(g, s)?,
            ValExpr::Neg(a) => -a.eval(g, s)?,
        })
        .filter(|v: &f64| v.is_finite())
    }

    pub fn depth(&self) -> usize {
        match self {
            ValExpr::Slot(_) | ValExpr::Const(_) => 0,
            ValExpr::Neg(a) => a.depth(),
            ValExpr::Add(a, b) | ValExpr::Sub(a, b) | ValExpr::Mul(a, b) | ValExpr::Div(a, b) => {
                1 + a.depth().max(b.depth())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cond {
    /// Values agree within the condition tolerance.
    Eq(ValExpr, ValExpr),
    /// Value is farther than the tolerance from zero.
    NonZero(ValExpr),
}

impl Cond {
    pub fn holds(&self, g: &EGraph, s: &Subst, eps: f64) -> bool {
        match self {
            Cond::Eq(a, b) => match (a.eval(g, s), b.eval(g, s)) {
                (Some(x), Some(y)) => (x - y).abs() <= eps,
                _ => false,
            },
            Cond::NonZero(a) => a.eval(g, s).is_some_and(|v| v.abs() > eps),
        }
    }
}

/// Right-hand side template.
#[derive(Clone, Debug, PartialEq)]
pub enum Rhs {
    Slot(usize),
    Node(ENodeOp, Vec<Rhs>),
    /// Negation that folds double negation instead of stacking `Mul(·,-1)`.
    Neg(Box<Rhs>),
    /// Translation sum, simplified when one side is zero.
    Fused(Box<Rhs>, Box<Rhs>),
    Lit(f64),
}

impl Rhs {
    pub fn instantiate(&self, g: &mut EGraph, s: &Subst) -> Id {
        match self {
            Rhs::Slot(i) => g.find(s[*i]),
            Rhs::Lit(v) => g.add(ENode::leaf(ENodeOp::lit(*v))),
            Rhs::Node(op, kids) => {
                let ids: SmallVec<[Id; 4]> = kids.iter().map(|k| k.instantiate(g, s)).collect();
                g.add(ENode { op: *op, children: ids })
            }
            Rhs::Neg(a) => {
                let a = a.instantiate(g, s);
                negate(g, a)
            }
            Rhs::Fused(a, b) => {
                let a = a.instantiate(g, s);
                let b = b.instantiate(g, s);
                if g.value(a) == Some(0.0) {
                    return b;
                }
                if g.value(b) == Some(0.0) {
                    return a;
                }
                g.add(ENode::new(ENodeOp::Fused, &[a, b]))
            }
        }
    }
}

fn is_minus_one(g: &EGraph, id: Id) -> bool {
    g.class(id).nodes.iter().any(|n| n.op == ENodeOp::lit(-1.0))
}

/// `Mul(a,-1)`, or the class `y` when `a` already holds `Mul(y,-1)`.
pub fn negate(g: &mut EGraph, a: Id) -> Id {
    let inner = g
        .class(a)
        .nodes
        .iter()
        .find(|n| n.op == ENodeOp::Mul && is_minus_one(g, n.children[1]))
        .map(|n| n.children[0]);
    if let Some(y) = inner {
        return g.find(y);
    }
    let m = g.add(ENode::leaf(ENodeOp::lit(-1.0)));
    g.add(ENode::new(ENodeOp::Mul, &[a, m]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewriteKind {
    Semantic,
    Abstraction,
    /// Bulk arithmetic enumeration used by the naive scheme.
    Closure,
}

/// A located match: root class and slot bindings.
#[derive(Clone, Debug)]
pub struct Located {
    pub root: Id,
    pub subst: Subst,
}

pub struct SearchCtx {
    pub eps_cond: f64,
    pub deadline: Option<std::time::Instant>,
    pub max_nodes: usize,
}

impl SearchCtx {
    pub fn exhausted(&self, g: &EGraph) -> bool {
        g.num_nodes() >= self.max_nodes || self.deadline.is_some_and(|d| std::time::Instant::now() >= d)
    }
}

pub trait Rewrite: Send + Sync {
    fn name(&self) -> &str;
    fn kind(&self) -> RewriteKind;
    fn search(&self, g: &EGraph, ctx: &SearchCtx) -> Vec<Located>;
    /// Applies one match; the graph's version tells whether anything changed.
    fn apply(&self, g: &mut EGraph, m: &Located, ctx: &SearchCtx);
}

/// Pattern rewrite with lazily checked value conditions.
#[derive(Clone, Debug)]
pub struct PatternRewrite {
    pub name: String,
    pub kind: RewriteKind,
    pub lhs: Pat,
    pub conds: Vec<Cond>,
    pub rhs: Rhs,
    pub slots: usize,
    /// Sort required of the root class when the lhs is a bare slot.
    pub root_sort: Option<Sort>,
}

impl PatternRewrite {
    pub fn new(name: &str, kind: RewriteKind, lhs: Pat, conds: Vec<Cond>, rhs: Rhs) -> Self {
        let slots = lhs.num_slots();
        PatternRewrite { name: name.to_string(), kind, lhs, conds, rhs, slots, root_sort: None }
    }
}

impl Rewrite for PatternRewrite {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> RewriteKind {
        self.kind
    }

    fn search(&self, g: &EGraph, ctx: &SearchCtx) -> Vec<Located> {
        let mut out = Vec::new();
        let root_op = self.lhs.root_op();
        for id in g.class_ids() {
            let c = g.class(id);
            if let Some(op) = root_op {
                if !c.nodes.iter().any(|n| n.op == op) {
                    continue;
                }
            } else if self.root_sort.is_some_and(|s| s != c.sort) {
                continue;
            }
            let mut found = Vec::new();
            ematch(g, &self.lhs, id, SmallVec::from_elem(Id::NONE, self.slots), &mut found);
            for s in found {
                if self.conds.iter().all(|c| c.holds(g, &s, ctx.eps_cond)) {
                    out.push(Located { root: id, subst: s });
                }
            }
        }
        out
    }

    fn apply(&self, g: &mut EGraph, m: &Located, _: &SearchCtx) {
        let id = self.rhs.instantiate(g, &m.subst);
        g.union(m.root, id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_reuse_requires_same_class() {
        let mut g2 = EGraph::new(0.005);
        let x = g2.add(ENode::leaf(ENodeOp::lit(0.1)));
        let y = g2.add(ENode::leaf(ENodeOp::lit(0.2)));
        let r1 = g2.add(ENode::new(ENodeOp::Rect, &[x, x]));
        let r2 = g2.add(ENode::new(ENodeOp::Rect, &[x, y]));
        let pat = Pat::node(ENodeOp::Rect, vec![Pat::Slot(0), Pat::Slot(0)]);
        let mut out = Vec::new();
        ematch(&g2, &pat, r1, SmallVec::from_elem(Id::NONE, 1), &mut out);
        assert_eq!(out.len(), 1);
        out.clear();
        ematch(&g2, &pat, r2, SmallVec::from_elem(Id::NONE, 1), &mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn negate_folds() {
        let mut g = EGraph::new(0.005);
        let a = g.add(ENode::leaf(ENodeOp::lit(0.3)));
        let n = negate(&mut g, a);
        assert_eq!(g.value(n), Some(-0.3));
        assert_eq!(negate(&mut g, n), a);
    }
}
