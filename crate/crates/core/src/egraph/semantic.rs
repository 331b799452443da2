//! Semantic rewrites for the 2D language. All of them preserve execution
//! as a multiset of primitives (up to the condition tolerance).

use std::sync::Arc;

use super::graph::{EGraph, ENode, ENodeOp, Id};
use super::pattern::{Cond, Located, Pat, PatternRewrite, Rewrite, RewriteKind, Rhs, SearchCtx, ValExpr};
use crate::dsl::{Axis, Sort};
use crate::registry::Registry;

fn s(i: usize) -> Pat {
    Pat::Slot(i)
}

fn n(op: ENodeOp, kids: Vec<Pat>) -> Pat {
    Pat::Node(op, kids)
}

fn rs(i: usize) -> Rhs {
    Rhs::Slot(i)
}

fn rn(op: ENodeOp, kids: Vec<Rhs>) -> Rhs {
    Rhs::Node(op, kids)
}

fn v(i: usize) -> ValExpr {
    ValExpr::Slot(i)
}

fn eq(a: ValExpr, b: ValExpr) -> Cond {
    Cond::Eq(a, b)
}

fn zero() -> ValExpr {
    ValExpr::Const(0.0)
}

fn neg(a: ValExpr) -> ValExpr {
    ValExpr::Neg(Box::new(a))
}

fn sem(name: &str, lhs: Pat, conds: Vec<Cond>, rhs: Rhs) -> Arc<dyn Rewrite> {
    Arc::new(PatternRewrite::new(name, RewriteKind::Semantic, lhs, conds, rhs))
}

fn mv(a: Pat, x: Pat, y: Pat) -> Pat {
    n(ENodeOp::Move, vec![a, x, y])
}

fn rect(w: Pat, h: Pat) -> Pat {
    n(ENodeOp::Rect, vec![w, h])
}

/// `s → Move(s, 0, 0)` on shape classes.
struct MoveZeroIntro;

impl Rewrite for MoveZeroIntro {
    fn name(&self) -> &str {
        "move-zero-intro"
    }

    fn kind(&self) -> RewriteKind {
        RewriteKind::Semantic
    }

    fn search(&self, g: &EGraph, _: &SearchCtx) -> Vec<Located> {
        g.class_ids()
            .filter(|&id| g.class(id).sort == Sort::Shape)
            .map(|id| Located { root: id, subst: Default::default() })
            .collect()
    }

    fn apply(&self, g: &mut EGraph, m: &Located, _: &SearchCtx) {
        let z = g.add(ENode::leaf(ENodeOp::lit(0.0)));
        let root: Id = g.find(m.root);
        let id = g.add(ENode::new(ENodeOp::Move, &[root, z, z]));
        g.union(root, id);
    }
}

fn symref_flip(axis: Axis) -> Arc<dyn Rewrite> {
    // slots: w h a b
    let lhs = n(ENodeOp::SymRef, vec![mv(rect(s(0), s(1)), s(2), s(3)), n(ENodeOp::Axis(axis), vec![])]);
    let (x, y, c) = match axis {
        Axis::X => (Rhs::Neg(Box::new(rs(2))), rs(3), 2),
        Axis::Y => (rs(2), Rhs::Neg(Box::new(rs(3))), 3),
    };
    let rhs = rn(
        ENodeOp::SymRef,
        vec![
            rn(ENodeOp::Move, vec![rn(ENodeOp::Rect, vec![rs(0), rs(1)]), x, y]),
            rn(ENodeOp::Axis(axis), vec![]),
        ],
    );
    let name = match axis {
        Axis::X => "symref-flip-x",
        Axis::Y => "symref-flip-y",
    };
    sem(name, lhs, vec![Cond::NonZero(v(c))], rhs)
}

fn symtrans_move_out(axis: Axis) -> Arc<dyn Rewrite> {
    // slots: s a b k d
    let ax = || n(ENodeOp::Axis(axis), vec![]);
    let lhs = n(ENodeOp::SymTrans, vec![mv(s(0), s(1), s(2)), ax(), s(3), s(4)]);
    let rhs = rn(
        ENodeOp::Move,
        vec![rn(ENodeOp::SymTrans, vec![rs(0), rn(ENodeOp::Axis(axis), vec![]), rs(3), rs(4)]), rs(1), rs(2)],
    );
    let name = match axis {
        Axis::X => "symtrans-move-out-x",
        Axis::Y => "symtrans-move-out-y",
    };
    sem(name, lhs, vec![], rhs)
}

fn symref_intro(axis: Axis) -> Arc<dyn Rewrite> {
    // slots: w1 h1 a b w2 h2 c d
    let lhs = n(
        ENodeOp::Union,
        vec![mv(rect(s(0), s(1)), s(2), s(3)), mv(rect(s(4), s(5)), s(6), s(7))],
    );
    let mut conds = vec![eq(v(4), v(0)), eq(v(5), v(1))];
    match axis {
        Axis::X => conds.extend([eq(v(6), neg(v(2))), eq(v(7), v(3)), Cond::NonZero(v(2))]),
        Axis::Y => conds.extend([eq(v(6), v(2)), eq(v(7), neg(v(3))), Cond::NonZero(v(3))]),
    }
    let rhs = rn(
        ENodeOp::SymRef,
        vec![
            rn(ENodeOp::Move, vec![rn(ENodeOp::Rect, vec![rs(0), rs(1)]), rs(2), rs(3)]),
            rn(ENodeOp::Axis(axis), vec![]),
        ],
    );
    let name = match axis {
        Axis::X => "symref-intro-x",
        Axis::Y => "symref-intro-y",
    };
    sem(name, lhs, conds, rhs)
}

/// The full catalogue in a fixed order.
pub fn catalogue() -> Vec<Arc<dyn Rewrite>> {
    let u = |a, b| n(ENodeOp::Union, vec![a, b]);
    let ru = |a, b| rn(ENodeOp::Union, vec![a, b]);
    let rmv = |a, x, y| rn(ENodeOp::Move, vec![a, x, y]);
    vec![
        sem("union-comm", u(s(0), s(1)), vec![], ru(rs(1), rs(0))),
        sem("union-assoc-right", u(u(s(0), s(1)), s(2)), vec![], ru(rs(0), ru(rs(1), rs(2)))),
        sem("union-assoc-left", u(s(0), u(s(1), s(2))), vec![], ru(ru(rs(0), rs(1)), rs(2))),
        // slots: s a b c d
        sem(
            "move-fuse",
            mv(mv(s(0), s(1), s(2)), s(3), s(4)),
            vec![],
            rmv(rs(0), Rhs::Fused(Box::new(rs(1)), Box::new(rs(3))), Rhs::Fused(Box::new(rs(2)), Box::new(rs(4)))),
        ),
        sem(
            "move-split",
            mv(s(0), s(1), s(2)),
            vec![Cond::NonZero(v(1)), Cond::NonZero(v(2))],
            rmv(rmv(rs(0), rs(1), Rhs::Lit(0.0)), Rhs::Lit(0.0), rs(2)),
        ),
        sem("move-zero-elim", mv(s(0), s(1), s(2)), vec![eq(v(1), zero()), eq(v(2), zero())], rs(0)),
        Arc::new(MoveZeroIntro),
        sem(
            "move-union-distribute",
            mv(u(s(0), s(1)), s(2), s(3)),
            vec![],
            ru(rmv(rs(0), rs(2), rs(3)), rmv(rs(1), rs(2), rs(3))),
        ),
        // slots: a x1 y1 b x2 y2
        sem(
            "move-union-factor",
            u(mv(s(0), s(1), s(2)), mv(s(3), s(4), s(5))),
            vec![eq(v(4), v(1)), eq(v(5), v(2))],
            rmv(ru(rs(0), rs(3)), rs(1), rs(2)),
        ),
        symref_flip(Axis::X),
        symref_flip(Axis::Y),
        symtrans_move_out(Axis::X),
        symtrans_move_out(Axis::Y),
        // slots: s ax k d a b
        sem(
            "symtrans-move-in",
            mv(n(ENodeOp::SymTrans, vec![s(0), s(1), s(2), s(3)]), s(4), s(5)),
            vec![],
            rn(ENodeOp::SymTrans, vec![rmv(rs(0), rs(4), rs(5)), rs(1), rs(2), rs(3)]),
        ),
        symref_intro(Axis::X),
        symref_intro(Axis::Y),
    ]
}

pub fn registry() -> Registry<dyn Rewrite> {
    let mut r = Registry::new("semantic rewrite");
    for rw in catalogue() {
        let name = rw.name().to_owned();
        r.register(&name, rw);
    }
    r
}

pub fn catalogue_names() -> Vec<String> {
    catalogue().iter().map(|r| r.name().to_string()).collect()
}
