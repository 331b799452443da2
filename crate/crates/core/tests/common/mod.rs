//! Generators and exhaustive enumerators shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use shapelib::dsl::{Axis, Expr};
use shapelib::egraph::{EGraph, ENode, ENodeOp, Id};

pub fn f2(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo..hi) * 100.0).round() / 100.0
}

pub fn random_leaf(rng: &mut ChaCha8Rng) -> Expr {
    Expr::placed(f2(rng, 0.05, 0.4), f2(rng, 0.05, 0.4), f2(rng, -0.6, 0.6), f2(rng, -0.6, 0.6))
}

pub fn random_shape(rng: &mut ChaCha8Rng, depth: usize) -> Expr {
    let axis = if rng.random_bool(0.5) { Axis::X } else { Axis::Y };
    if depth == 0 {
        return random_leaf(rng);
    }
    match rng.random_range(0..7) {
        0 => random_leaf(rng),
        1 => Expr::union(random_shape(rng, depth - 1), random_shape(rng, depth - 1)),
        2 => Expr::symref(random_shape(rng, depth - 1), axis),
        3 => Expr::symtrans(random_shape(rng, depth - 1), axis, rng.random_range(1..=3), Expr::float(f2(rng, -0.6, 0.6))),
        4 => Expr::mv(random_shape(rng, depth - 1), Expr::float(f2(rng, -0.3, 0.3)), Expr::float(f2(rng, -0.3, 0.3))),
        5 => {
            // mirrored pair so reflection introduction can fire
            let (w, h, x, y) = (f2(rng, 0.05, 0.3), f2(rng, 0.05, 0.3), f2(rng, 0.1, 0.6), f2(rng, -0.6, 0.6));
            let (a, b) = match axis {
                Axis::X => ((x, y), (-x, y)),
                Axis::Y => ((y, x), (y, -x)),
            };
            Expr::union(Expr::placed(w, h, a.0, a.1), Expr::placed(w, h, b.0, b.1))
        }
        _ => Expr::mv(random_leaf(rng), Expr::float(0.0), Expr::float(0.0)),
    }
}

/// Every term represented by a class, up to a depth bound.
pub fn enumerate_terms(g: &EGraph, id: Id, depth: usize, cap: usize) -> Vec<Expr> {
    use shapelib::dsl::Op;
    let id = g.find(id);
    let mut out = Vec::new();
    for n in &g.class(id).nodes {
        let op = match n.op {
            ENodeOp::Var(i) => {
                out.push(Expr::float(g.var_value(i)));
                continue;
            }
            ENodeOp::Lit(b) => {
                out.push(Expr::float(f64::from_bits(b)));
                continue;
            }
            ENodeOp::Fused => {
                out.push(Expr::float(g.value(id).unwrap()));
                continue;
            }
            ENodeOp::Union => Op::Union,
            ENodeOp::SymRef => Op::SymRef,
            ENodeOp::SymTrans => Op::SymTrans,
            ENodeOp::Move => Op::Move,
            ENodeOp::Rect => Op::Rect,
            ENodeOp::Add => Op::Add,
            ENodeOp::Sub => Op::Sub,
            ENodeOp::Mul => Op::Mul,
            ENodeOp::Div => Op::Div,
            ENodeOp::Axis(a) => Op::Axis(a),
            ENodeOp::Int(k) => Op::Int(k),
            ENodeOp::Call(_) => continue,
        };
        if depth == 0 && !n.children.is_empty() {
            continue;
        }
        let mut partial: Vec<Vec<Expr>> = vec![vec![]];
        for c in &n.children {
            let kids = enumerate_terms(g, *c, depth.saturating_sub(1), cap);
            let mut next = Vec::new();
            for p in &partial {
                for k in &kids {
                    if next.len() >= cap {
                        break;
                    }
                    let mut q = p.clone();
                    q.push(k.clone());
                    next.push(q);
                }
            }
            partial = next;
        }
        for args in partial {
            if out.len() >= cap {
                break;
            }
            out.push(Expr::new(op.clone(), args));
        }
    }
    out
}

pub fn random_dag(rng: &mut ChaCha8Rng) -> Option<EGraph> {
    let mut g = EGraph::new(0.005);
    let mut floats: Vec<Id> = Vec::new();
    let mut shapes: Vec<Id> = Vec::new();
    for _ in 0..rng.random_range(2..5) {
        floats.push(g.add(ENode::leaf(ENodeOp::lit(f2(rng, 0.05, 0.5)))));
    }
    let ax = g.add(ENode::leaf(ENodeOp::Axis(Axis::X)));
    for _ in 0..rng.random_range(2..4) {
        let a = floats[rng.random_range(0..floats.len())];
        let b = floats[rng.random_range(0..floats.len())];
        let op = [ENodeOp::Add, ENodeOp::Sub, ENodeOp::Mul][rng.random_range(0..3)];
        let id = g.add(ENode::new(op, &[a, b]));
        // sometimes give the arithmetic class a literal alternative
        if rng.random_bool(0.5) {
            let l = g.add(ENode::leaf(ENodeOp::lit(f2(rng, 0.05, 0.5))));
            g.union(id, l);
        }
        floats.push(g.find(id));
    }
    g.rebuild();
    let pick = |rng: &mut ChaCha8Rng, v: &Vec<Id>| v[rng.random_range(0..v.len())];
    for _ in 0..rng.random_range(3..7) {
        let node = match rng.random_range(0..4) {
            0 => ENode::new(ENodeOp::Rect, &[pick(rng, &floats), pick(rng, &floats)]),
            1 if !shapes.is_empty() => ENode::new(ENodeOp::Move, &[pick(rng, &shapes), pick(rng, &floats), pick(rng, &floats)]),
            2 if !shapes.is_empty() => ENode::new(ENodeOp::SymRef, &[pick(rng, &shapes), ax]),
            3 if shapes.len() >= 2 => ENode::new(ENodeOp::Union, &[pick(rng, &shapes), pick(rng, &shapes)]),
            _ => ENode::new(ENodeOp::Rect, &[pick(rng, &floats), pick(rng, &floats)]),
        };
        let id = g.add(node);
        if !shapes.is_empty() && rng.random_bool(0.4) {
            let other = pick(rng, &shapes);
            g.union(id, other);
            g.rebuild();
        }
        shapes.push(g.find(id));
    }
    g.rebuild();
    g.root = g.find(*shapes.last().unwrap());
    // reject cyclic graphs
    fn acyclic(g: &EGraph, id: Id, stack: &mut Vec<Id>, done: &mut Vec<Id>) -> bool {
        let id = g.find(id);
        if done.contains(&id) {
            return true;
        }
        if stack.contains(&id) {
            return false;
        }
        stack.push(id);
        for n in &g.class(id).nodes {
            for c in &n.children {
                if !acyclic(g, *c, stack, done) {
                    return false;
                }
            }
        }
        stack.pop();
        done.push(id);
        true
    }
    let root = g.root;
    acyclic(&g, root, &mut vec![], &mut vec![]).then_some(g)
}

pub fn count_terms(g: &EGraph, id: Id) -> u128 {
    g.class(id)
        .nodes
        .iter()
        .map(|n| n.children.iter().map(|c| count_terms(g, *c)).product::<u128>())
        .sum()
}

