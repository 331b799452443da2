use std::collections::HashMap;

use super::graph::{EGraph, ENode, ENodeOp, Id};
use crate::dsl::{Expr, Library, Op};
use crate::objective::TokenWeights;

const COST_EPS: f64 = 1e-9;

pub fn node_weight(op: ENodeOp, w: &TokenWeights) -> f64 {
    match op {
        ENodeOp::Union | ENodeOp::SymRef | ENodeOp::SymTrans | ENodeOp::Move | ENodeOp::Rect | ENodeOp::Call(_) => {
            w.shape_fn
        }
        ENodeOp::Add | ENodeOp::Sub | ENodeOp::Mul | ENodeOp::Div => w.float_fn,
        ENodeOp::Var(_) | ENodeOp::Lit(_) | ENodeOp::Fused => w.float,
        ENodeOp::Axis(_) | ENodeOp::Int(_) => w.categorical,
    }
}

/// Whether the node's children contribute to its printed term.
fn has_term_children(op: ENodeOp) -> bool {
    op != ENodeOp::Fused
}

/// Best (cost, size, node) per class by bottom-up fixpoint from infinity.
pub struct Extractor<'a> {
    g: &'a EGraph,
    best: HashMap<Id, (f64, usize, ENode)>,
}

impl<'a> Extractor<'a> {
    pub fn new(g: &'a EGraph, w: &TokenWeights) -> Self {
        let mut best: HashMap<Id, (f64, usize, ENode)> = HashMap::new();
        loop {
            let mut changed = false;
            for id in g.class_ids() {
                for n in &g.class(id).nodes {
                    let mut cost = node_weight(n.op, w);
                    let mut size = 1usize;
                    let mut ok = true;
                    if has_term_children(n.op) {
                        for c in &n.children {
                            match best.get(&g.find(*c)) {
                                Some((cc, cs, _)) => {
                                    cost += cc;
                                    size += cs;
                                }
                                None => {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                    } else if n.children.iter().any(|c| g.value(*c).is_none()) || g.value(id).is_none() {
                        ok = false;
                    }
                    if !ok {
                        continue;
                    }
                    let better = match best.get(&id) {
                        None => true,
                        Some((bc, bs, _)) => cost < bc - COST_EPS || ((cost - bc).abs() <= COST_EPS && size < *bs),
                    };
                    if better {
                        best.insert(id, (cost, size, n.clone()));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Extractor { g, best }
    }

    pub fn cost(&self, id: Id) -> Option<f64> {
        self.best.get(&self.g.find(id)).map(|b| b.0)
    }

    pub fn expr(&self, id: Id, lib: &Library) -> Option<Expr> {
        let id = self.g.find(id);
        let (_, _, n) = self.best.get(&id)?;
        let op = match n.op {
            ENodeOp::Var(i) => return Some(Expr::float(self.g.var_value(i))),
            ENodeOp::Lit(b) => return Some(Expr::float(f64::from_bits(b))),
            ENodeOp::Fused => return Some(Expr::float(self.g.value(id)?)),
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
            ENodeOp::Call(i) => Op::Call(lib.abstractions()[i as usize].name.as_str().into()),
        };
        let args = n.children.iter().map(|c| self.expr(*c, lib)).collect::<Option<Vec<_>>>()?;
        Some(Expr::new(op, args))
    }
}

/// Minimum-cost term of the root class.
pub fn extract(g: &EGraph, lib: &Library) -> (Expr, f64) {
    let ex = Extractor::new(g, &lib.config.token_weights);
    let e = ex.expr(g.root, lib).expect("root keeps its input term");
    (e, ex.cost(g.root).unwrap())
}
