use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Reflection / translation axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn token(self) -> &'static str {
        match self {
            Axis::X => "AX",
            Axis::Y => "AY",
        }
    }
}

/// Value sorts of the language.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sort {
    #[serde(rename = "SHAPE")]
    Shape,
    #[serde(rename = "FLOAT")]
    Float,
    #[serde(rename = "AXIS")]
    Axis,
    #[serde(rename = "INT")]
    Int,
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sort::Shape => "SHAPE",
            Sort::Float => "FLOAT",
            Sort::Axis => "AXIS",
            Sort::Int => "INT",
        })
    }
}

#[derive(Clone, Debug)]
pub enum Op {
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
    Float(f64),
    /// Parameter reference inside an abstraction body.
    Param(usize),
    Call(Arc<str>),
}

impl Op {
    /// Result sort and argument sorts for base operators. `None` for calls
    /// and parameters, whose types come from the library.
    pub fn signature(&self) -> Option<(Sort, &'static [Sort])> {
        use Sort::*;
        Some(match self {
            Op::Union => (Shape, &[Shape, Shape]),
            Op::SymRef => (Shape, &[Shape, Axis]),
            Op::SymTrans => (Shape, &[Shape, Axis, Int, Float]),
            Op::Move => (Shape, &[Shape, Float, Float]),
            Op::Rect => (Shape, &[Float, Float]),
            Op::Add | Op::Sub | Op::Mul | Op::Div => (Float, &[Float, Float]),
            Op::Axis(_) => (Axis, &[]),
            Op::Int(_) => (Int, &[]),
            Op::Float(_) => (Float, &[]),
            Op::Param(_) | Op::Call(_) => return None,
        })
    }

    pub fn name(&self) -> String {
        match self {
            Op::Union => "Union".into(),
            Op::SymRef => "SymRef".into(),
            Op::SymTrans => "SymTrans".into(),
            Op::Move => "Move".into(),
            Op::Rect => "Rect".into(),
            Op::Add => "Add".into(),
            Op::Sub => "Sub".into(),
            Op::Mul => "Mul".into(),
            Op::Div => "Div".into(),
            Op::Axis(a) => a.token().into(),
            Op::Int(k) => k.to_string(),
            Op::Float(v) => format_float(*v),
            Op::Param(k) => format!("P{k}"),
            Op::Call(n) => n.to_string(),
        }
    }

    pub fn is_float_fn(&self) -> bool {
        matches!(self, Op::Add | Op::Sub | Op::Mul | Op::Div)
    }

    pub fn is_shape_fn(&self) -> bool {
        matches!(self, Op::Union | Op::SymRef | Op::SymTrans | Op::Move | Op::Rect | Op::Call(_))
    }
}

impl PartialEq for Op {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Op::Float(a), Op::Float(b)) => a.to_bits() == b.to_bits(),
            (Op::Axis(a), Op::Axis(b)) => a == b,
            (Op::Int(a), Op::Int(b)) => a == b,
            (Op::Param(a), Op::Param(b)) => a == b,
            (Op::Call(a), Op::Call(b)) => a == b,
            _ => std::mem::discriminant(self) == std::mem::discriminant(other),
        }
    }
}

impl Eq for Op {}

impl Hash for Op {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Op::Float(v) => v.to_bits().hash(state),
            Op::Axis(a) => a.hash(state),
            Op::Int(k) => k.hash(state),
            Op::Param(k) => k.hash(state),
            Op::Call(n) => n.hash(state),
            _ => {}
        }
    }
}

/// Shortest round-trip decimal form.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v}")
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Expr {
    pub op: Op,
    pub args: Vec<Expr>,
}

impl Expr {
    pub fn new(op: Op, args: Vec<Expr>) -> Self {
        Expr { op, args }
    }

    pub fn leaf(op: Op) -> Self {
        Expr { op, args: Vec::new() }
    }

    pub fn float(v: f64) -> Self {
        Expr::leaf(Op::Float(v))
    }

    pub fn param(k: usize) -> Self {
        Expr::leaf(Op::Param(k))
    }

    pub fn axis(a: Axis) -> Self {
        Expr::leaf(Op::Axis(a))
    }

    pub fn int(k: u8) -> Self {
        Expr::leaf(Op::Int(k))
    }

    pub fn rect(w: f64, h: f64) -> Self {
        Expr::new(Op::Rect, vec![Expr::float(w), Expr::float(h)])
    }

    pub fn mv(s: Expr, x: Expr, y: Expr) -> Self {
        Expr::new(Op::Move, vec![s, x, y])
    }

    pub fn union(a: Expr, b: Expr) -> Self {
        Expr::new(Op::Union, vec![a, b])
    }

    pub fn symref(s: Expr, a: Axis) -> Self {
        Expr::new(Op::SymRef, vec![s, Expr::axis(a)])
    }

    pub fn symtrans(s: Expr, a: Axis, k: u8, d: Expr) -> Self {
        Expr::new(Op::SymTrans, vec![s, Expr::axis(a), Expr::int(k), d])
    }

    pub fn call(name: &str, args: Vec<Expr>) -> Self {
        Expr::new(Op::Call(Arc::from(name)), args)
    }

    /// Placed rectangle `Move(Rect(w, h), x, y)`.
    pub fn placed(w: f64, h: f64, x: f64, y: f64) -> Self {
        Expr::mv(Expr::rect(w, h), Expr::float(x), Expr::float(y))
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for a in &self.args {
            a.walk(f);
        }
    }

    pub fn size(&self) -> usize {
        1 + self.args.iter().map(Expr::size).sum::<usize>()
    }

    /// Names of all abstractions called anywhere in the expression.
    pub fn called(&self) -> Vec<Arc<str>> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Op::Call(n) = &e.op {
                out.push(n.clone());
            }
        });
        out
    }

    /// Prefix token sequence, used by the dream export.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |e| out.push(e.op.name()));
        out
    }

    pub fn map_floats(&self, f: &mut impl FnMut(f64) -> f64) -> Expr {
        match self.op {
            Op::Float(v) => Expr::float(f(v)),
            _ => Expr::new(self.op.clone(), self.args.iter().map(|a| a.map_floats(f)).collect()),
        }
    }

    /// Replaces `Param(k)` with `args[k]`.
    pub fn substitute(&self, args: &[Expr]) -> Expr {
        match self.op {
            Op::Param(k) => args[k].clone(),
            _ => Expr::new(self.op.clone(), self.args.iter().map(|a| a.substitute(args)).collect()),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.op.name())?;
        if !self.args.is_empty() || matches!(self.op, Op::Call(_)) {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}
