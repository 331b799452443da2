use std::collections::HashMap;

use smallvec::SmallVec;

use crate::dsl::{Axis, Expr, Library, Op, Sort};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Id(pub u32);

impl Id {
    pub(crate) const NONE: Id = Id(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ENodeOp {
    Union,
    SymRef,
    SymTrans,
    Move,
    Rect,
    Add,
    Sub,
    Mul,
    Div,
    Axis(Axis),
    Int(u8),
    /// The i-th float occurrence of the input program.
    Var(u32),
    /// Float constant introduced by a rewrite, stored as bits.
    Lit(u64),
    /// Sum of two translation components produced by fusing moves. It is
    /// extracted as a single literal, so its children only carry the value.
    Fused,
    /// Abstraction call by library index.
    Call(u32),
}

impl ENodeOp {
    pub fn sort(self) -> Sort {
        match self {
            ENodeOp::Union | ENodeOp::SymRef | ENodeOp::SymTrans | ENodeOp::Move | ENodeOp::Rect | ENodeOp::Call(_) => {
                Sort::Shape
            }
            ENodeOp::Add | ENodeOp::Sub | ENodeOp::Mul | ENodeOp::Div | ENodeOp::Var(_) | ENodeOp::Lit(_) | ENodeOp::Fused => {
                Sort::Float
            }
            ENodeOp::Axis(_) => Sort::Axis,
            ENodeOp::Int(_) => Sort::Int,
        }
    }

    pub fn is_arith(self) -> bool {
        matches!(self, ENodeOp::Add | ENodeOp::Sub | ENodeOp::Mul | ENodeOp::Div)
    }

    pub fn lit(v: f64) -> Self {
        ENodeOp::Lit(v.to_bits())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ENode {
    pub op: ENodeOp,
    pub children: SmallVec<[Id; 4]>,
}

impl ENode {
    pub fn new(op: ENodeOp, children: &[Id]) -> Self {
        ENode { op, children: SmallVec::from_slice(children) }
    }

    pub fn leaf(op: ENodeOp) -> Self {
        ENode { op, children: SmallVec::new() }
    }
}

#[derive(Clone, Debug)]
pub struct EClass {
    pub nodes: Vec<ENode>,
    pub sort: Sort,
    pub value: Option<f64>,
}

/// E-graph with a class → value map for float classes.
#[derive(Clone, Debug)]
pub struct EGraph {
    parent: Vec<u32>,
    classes: Vec<Option<EClass>>,
    memo: HashMap<ENode, Id>,
    var_values: Vec<f64>,
    eps_val: f64,
    dirty: bool,
    /// Bumped on every new class or successful merge.
    pub version: u64,
    pub refused_merges: usize,
    node_count: usize,
    pub root: Id,
}

impl EGraph {
    pub fn new(eps_val: f64) -> Self {
        EGraph {
            parent: Vec::new(),
            classes: Vec::new(),
            memo: HashMap::new(),
            var_values: Vec::new(),
            eps_val,
            dirty: false,
            version: 0,
            refused_merges: 0,
            node_count: 0,
            root: Id::NONE,
        }
    }

    /// Builds the graph of a program. Every float occurrence becomes its own
    /// variable seeded with the literal's value.
    pub fn from_expr(p: &Expr, lib: &Library, eps_val: f64) -> EGraph {
        let mut g = EGraph::new(eps_val);
        g.root = g.add_expr(p, lib);
        g
    }

    fn add_expr(&mut self, e: &Expr, lib: &Library) -> Id {
        let op = match &e.op {
            Op::Float(v) => {
                let i = self.var_values.len() as u32;
                self.var_values.push(*v);
                return self.add(ENode::leaf(ENodeOp::Var(i)));
            }
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
            Op::Call(n) => ENodeOp::Call(lib.index_of(n).expect("call to a library abstraction") as u32),
            Op::Param(_) => panic!("parameter reference in a program"),
        };
        let kids: SmallVec<[Id; 4]> = e.args.iter().map(|a| self.add_expr(a, lib)).collect();
        self.add(ENode { op, children: kids })
    }

    pub fn var_value(&self, i: u32) -> f64 {
        self.var_values[i as usize]
    }

    pub fn find(&self, mut id: Id) -> Id {
        while self.parent[id.index()] != id.0 {
            id = Id(self.parent[id.index()]);
        }
        id
    }

    fn find_compress(&mut self, id: Id) -> Id {
        let root = self.find(id);
        let mut cur = id;
        while cur != root {
            let next = Id(self.parent[cur.index()]);
            self.parent[cur.index()] = root.0;
            cur = next;
        }
        root
    }

    pub fn class(&self, id: Id) -> &EClass {
        self.classes[self.find(id).index()].as_ref().expect("live class")
    }

    pub fn value(&self, id: Id) -> Option<f64> {
        self.class(id).value
    }

    pub fn class_ids(&self) -> impl Iterator<Item = Id> + '_ {
        self.classes.iter().enumerate().filter(|(_, c)| c.is_some()).map(|(i, _)| Id(i as u32))
    }

    pub fn num_classes(&self) -> usize {
        self.classes.iter().filter(|c| c.is_some()).count()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_count
    }

    /// Number of e-nodes whose operator satisfies `pred`.
    pub fn count_nodes(&self, pred: impl Fn(ENodeOp) -> bool) -> usize {
        self.classes.iter().flatten().flat_map(|c| c.nodes.iter()).filter(|n| pred(n.op)).count()
    }

    fn canonical(&self, n: &ENode) -> ENode {
        ENode { op: n.op, children: n.children.iter().map(|&c| self.find(c)).collect() }
    }

    fn node_value(&self, n: &ENode) -> Option<f64> {
        let v = |i: usize| self.value(n.children[i]);
        let out = match n.op {
            ENodeOp::Var(i) => self.var_values[i as usize],
            ENodeOp::Lit(b) => f64::from_bits(b),
            ENodeOp::Add | ENodeOp::Fused => v(0)? + v(1)?,
            ENodeOp::Sub => v(0)? - v(1)?,
            ENodeOp::Mul => v(0)? * v(1)?,
            ENodeOp::Div => v(0)? / v(1)?,
            _ => return None,
        };
        out.is_finite().then_some(out)
    }

    /// Adds a node (hash-consed) and returns its class.
    pub fn add(&mut self, node: ENode) -> Id {
        let node = self.canonical(&node);
        if let Some(&id) = self.memo.get(&node) {
            return self.find(id);
        }
        let id = Id(self.classes.len() as u32);
        let sort = node.op.sort();
        let value = self.node_value(&node);
        self.parent.push(id.0);
        self.classes.push(Some(EClass { nodes: vec![node.clone()], sort, value }));
        self.memo.insert(node, id);
        self.node_count += 1;
        self.version += 1;
        id
    }

    /// Merges two classes. Returns false when already equal or when their
    /// values disagree beyond tolerance, in which case the merge is refused.
    pub fn union(&mut self, a: Id, b: Id) -> bool {
        let a = self.find_compress(a);
        let b = self.find_compress(b);
        if a == b {
            return false;
        }
        let (va, vb) = (self.classes[a.index()].as_ref().unwrap().value, self.classes[b.index()].as_ref().unwrap().value);
        if let (Some(x), Some(y)) = (va, vb) {
            if (x - y).abs() > self.eps_val {
                self.refused_merges += 1;
                log::debug!("refused merge of classes valued {x} and {y}");
                return false;
            }
        }
        let (big, small) = {
            let na = self.classes[a.index()].as_ref().unwrap().nodes.len();
            let nb = self.classes[b.index()].as_ref().unwrap().nodes.len();
            if na >= nb {
                (a, b)
            } else {
                (b, a)
            }
        };
        debug_assert_eq!(
            self.classes[a.index()].as_ref().unwrap().sort,
            self.classes[b.index()].as_ref().unwrap().sort
        );
        let small_class = self.classes[small.index()].take().unwrap();
        self.parent[small.index()] = big.0;
        let bc = self.classes[big.index()].as_mut().unwrap();
        bc.nodes.extend(small_class.nodes);
        if bc.value.is_none() {
            bc.value = small_class.value;
        }
        self.dirty = true;
        self.version += 1;
        true
    }

    /// Restores canonical children, deduplicates nodes and merges congruent
    /// classes until stable.
    pub fn rebuild(&mut self) {
        if !self.dirty {
            return;
        }
        loop {
            for i in 0..self.classes.len() {
                if self.classes[i].is_none() {
                    continue;
                }
                let mut nodes = std::mem::take(&mut self.classes[i].as_mut().unwrap().nodes);
                for n in nodes.iter_mut() {
                    for c in n.children.iter_mut() {
                        *c = self.find(*c);
                    }
                }
                nodes.sort_unstable();
                nodes.dedup();
                self.classes[i].as_mut().unwrap().nodes = nodes;
            }
            self.memo.clear();
            let mut pending = Vec::new();
            for (i, c) in self.classes.iter().enumerate() {
                let Some(c) = c else { continue };
                for n in &c.nodes {
                    match self.memo.get(n) {
                        Some(&other) if other.index() != i => pending.push((other, Id(i as u32))),
                        Some(_) => {}
                        None => {
                            self.memo.insert(n.clone(), Id(i as u32));
                        }
                    }
                }
            }
            let mut merged = false;
            for (a, b) in pending {
                merged |= self.union(a, b);
            }
            if !merged {
                break;
            }
        }
        self.node_count = self.classes.iter().flatten().map(|c| c.nodes.len()).sum();
        self.dirty = false;
        if self.root != Id::NONE {
            self.root = self.find(self.root);
        }
    }

    /// Dummy valuation pass: gives a value to every float class that has a
    /// node with fully valued children. Runs to a fixpoint.
    pub fn compute_values(&mut self) {
        loop {
            let mut updates = Vec::new();
            for (i, c) in self.classes.iter().enumerate() {
                let Some(c) = c else { continue };
                if c.value.is_some() || c.sort != Sort::Float {
                    continue;
                }
                if let Some(v) = c.nodes.iter().find_map(|n| self.node_value(n)) {
                    updates.push((i, v));
                }
            }
            if updates.is_empty() {
                break;
            }
            for (i, v) in updates {
                self.classes[i].as_mut().unwrap().value = Some(v);
            }
        }
    }

    /// Whether every arithmetic node with valued children sits in a valued class.
    pub fn values_complete(&self) -> bool {
        self.classes.iter().flatten().all(|c| {
            c.value.is_some() || c.nodes.iter().all(|n| !n.op.is_arith() || self.node_value(n).is_none())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_expr;

    #[test]
    fn build_assigns_independent_variables() {
        let lib = Library::default();
        let g = EGraph::from_expr(&parse_expr("Rect(0.1,0.1)", &lib).unwrap(), &lib, 0.005);
        assert_eq!(g.num_classes(), 3);
        let vals: Vec<f64> = g.class_ids().filter_map(|c| g.value(c)).collect();
        assert_eq!(vals, vec![0.1, 0.1]);
    }

    #[test]
    fn congruence_after_union() {
        let mut g = EGraph::new(0.005);
        let a = g.add(ENode::leaf(ENodeOp::lit(1.0)));
        let b = g.add(ENode::leaf(ENodeOp::lit(1.001)));
        let fa = g.add(ENode::new(ENodeOp::Rect, &[a, a]));
        let fb = g.add(ENode::new(ENodeOp::Rect, &[b, b]));
        assert_ne!(g.find(fa), g.find(fb));
        assert!(g.union(a, b));
        g.rebuild();
        assert_eq!(g.find(fa), g.find(fb));
    }

    #[test]
    fn conflicting_values_refuse_merge() {
        let mut g = EGraph::new(0.005);
        let a = g.add(ENode::leaf(ENodeOp::lit(1.0)));
        let b = g.add(ENode::leaf(ENodeOp::lit(1.5)));
        assert!(!g.union(a, b));
        assert_eq!(g.refused_merges, 1);
    }

    #[test]
    fn values_propagate_through_arithmetic() {
        let mut g = EGraph::new(0.005);
        let a = g.add(ENode::leaf(ENodeOp::lit(0.25)));
        let m = g.add(ENode::leaf(ENodeOp::lit(-1.0)));
        let n = g.add(ENode::new(ENodeOp::Mul, &[a, m]));
        assert_eq!(g.value(n), Some(-0.25));
        assert!(g.values_complete());
    }
}
