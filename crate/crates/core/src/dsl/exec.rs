use std::sync::Arc;

use super::expr::{Axis, Expr, Op};
use super::library::{Abstraction, Library};
use super::scene::Primitive;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("unbound parameter reference P{0}")]
    UnboundParam(usize),
    #[error("integer {0} out of [1,4]")]
    IntOutOfRange(u8),
    #[error("non-finite float")]
    NonFinite,
    #[error("unknown abstraction {0}")]
    UnknownAbstraction(String),
    #[error("{name} takes {expected} arguments, got {found}")]
    Arity { name: String, expected: usize, found: usize },
    #[error("ill-typed expression at {0}")]
    IllTyped(String),
}

/// Runtime value bound to a parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Float(f64),
    Axis(Axis),
    Int(u8),
}

struct Ctx<'a> {
    lib: &'a Library,
    env: &'a [Value],
}

impl Ctx<'_> {
    fn float(&self, e: &Expr) -> Result<f64, ExecError> {
        let v = match &e.op {
            Op::Float(v) => *v,
            Op::Param(k) => match self.env.get(*k) {
                Some(Value::Float(v)) => *v,
                Some(_) => return Err(ExecError::IllTyped(e.to_string())),
                None => return Err(ExecError::UnboundParam(*k)),
            },
            Op::Add => self.float(&e.args[0])? + self.float(&e.args[1])?,
            Op::Sub => self.float(&e.args[0])? - self.float(&e.args[1])?,
            Op::Mul => self.float(&e.args[0])? * self.float(&e.args[1])?,
            Op::Div => self.float(&e.args[0])? / self.float(&e.args[1])?,
            _ => return Err(ExecError::IllTyped(e.to_string())),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExecError::NonFinite)
        }
    }

    fn axis(&self, e: &Expr) -> Result<Axis, ExecError> {
        match &e.op {
            Op::Axis(a) => Ok(*a),
            Op::Param(k) => match self.env.get(*k) {
                Some(Value::Axis(a)) => Ok(*a),
                Some(_) => Err(ExecError::IllTyped(e.to_string())),
                None => Err(ExecError::UnboundParam(*k)),
            },
            _ => Err(ExecError::IllTyped(e.to_string())),
        }
    }

    fn int(&self, e: &Expr) -> Result<u8, ExecError> {
        let k = match &e.op {
            Op::Int(k) => *k,
            Op::Param(p) => match self.env.get(*p) {
                Some(Value::Int(k)) => *k,
                Some(_) => return Err(ExecError::IllTyped(e.to_string())),
                None => return Err(ExecError::UnboundParam(*p)),
            },
            _ => return Err(ExecError::IllTyped(e.to_string())),
        };
        if (1..=4).contains(&k) {
            Ok(k)
        } else {
            Err(ExecError::IntOutOfRange(k))
        }
    }

    fn value(&self, e: &Expr, a: &Abstraction, slot: usize) -> Result<Value, ExecError> {
        Ok(match a.params[slot] {
            super::Sort::Float => Value::Float(self.float(e)?),
            super::Sort::Axis => Value::Axis(self.axis(e)?),
            super::Sort::Int => Value::Int(self.int(e)?),
            super::Sort::Shape => return Err(ExecError::IllTyped(e.to_string())),
        })
    }

    fn shape(&self, e: &Expr, out: &mut Vec<Primitive>) -> Result<(), ExecError> {
        match &e.op {
            Op::Rect => {
                let w = self.float(&e.args[0])?;
                let h = self.float(&e.args[1])?;
                out.push(Primitive::new(w, h, 0.0, 0.0));
            }
            Op::Move => {
                let start = out.len();
                self.shape(&e.args[0], out)?;
                let dx = self.float(&e.args[1])?;
                let dy = self.float(&e.args[2])?;
                for p in &mut out[start..] {
                    p.x += dx;
                    p.y += dy;
                }
            }
            Op::Union => {
                self.shape(&e.args[0], out)?;
                self.shape(&e.args[1], out)?;
            }
            Op::SymRef => {
                let start = out.len();
                self.shape(&e.args[0], out)?;
                let axis = self.axis(&e.args[1])?;
                let end = out.len();
                for i in start..end {
                    let mut p = out[i];
                    match axis {
                        Axis::X => p.x = -p.x,
                        Axis::Y => p.y = -p.y,
                    }
                    out.push(p);
                }
            }
            Op::SymTrans => {
                let start = out.len();
                self.shape(&e.args[0], out)?;
                let axis = self.axis(&e.args[1])?;
                let k = self.int(&e.args[2])?;
                let d = self.float(&e.args[3])?;
                let end = out.len();
                for i in 1..=k {
                    let off = i as f64 * (d / k as f64);
                    for j in start..end {
                        let mut p = out[j];
                        match axis {
                            Axis::X => p.x += off,
                            Axis::Y => p.y += off,
                        }
                        out.push(p);
                    }
                }
            }
            Op::Call(name) => {
                let a = self
                    .lib
                    .get(name)
                    .ok_or_else(|| ExecError::UnknownAbstraction(name.to_string()))?;
                if a.params.len() != e.args.len() {
                    return Err(ExecError::Arity {
                        name: name.to_string(),
                        expected: a.params.len(),
                        found: e.args.len(),
                    });
                }
                let env = e
                    .args
                    .iter()
                    .enumerate()
                    .map(|(i, arg)| self.value(arg, a, i))
                    .collect::<Result<Vec<_>, _>>()?;
                Ctx { lib: self.lib, env: &env }.shape(&a.body, out)?;
            }
            _ => return Err(ExecError::IllTyped(e.to_string())),
        }
        Ok(())
    }
}

/// Evaluates a closed SHAPE expression to its primitive multiset.
pub fn execute(e: &Expr, lib: &Library) -> Result<Vec<Primitive>, ExecError> {
    execute_with_env(e, lib, &[])
}

/// Evaluates a body with parameter values bound.
pub fn execute_with_env(e: &Expr, lib: &Library, env: &[Value]) -> Result<Vec<Primitive>, ExecError> {
    let mut out = Vec::new();
    Ctx { lib, env }.shape(e, &mut out)?;
    Ok(out)
}

/// Replaces every abstraction call by its body with arguments substituted,
/// recursively, so the result holds only base operators.
pub fn inline(e: &Expr, lib: &Library) -> Result<Expr, ExecError> {
    let args = e.args.iter().map(|a| inline(a, lib)).collect::<Result<Vec<_>, _>>()?;
    match &e.op {
        Op::Call(name) => {
            let a = lib.get(name).ok_or_else(|| ExecError::UnknownAbstraction(name.to_string()))?;
            if a.params.len() != args.len() {
                return Err(ExecError::Arity { name: name.to_string(), expected: a.params.len(), found: args.len() });
            }
            let body = inline(&a.body, lib)?;
            Ok(body.substitute(&args))
        }
        op => Ok(Expr::new(op.clone(), args)),
    }
}

/// Inlines calls to `name` only, then folds the constant arithmetic that
/// substituting literal arguments leaves behind.
pub fn inline_call(e: &Expr, lib: &Library, name: &str) -> Option<Expr> {
    let a = lib.get(name)?;
    let only = |n: &str| n == name;
    Some(fold_constants(&inline_with(e, a, &only)))
}

/// Replaces closed arithmetic subtrees by their value.
pub fn fold_constants(e: &Expr) -> Expr {
    let args: Vec<Expr> = e.args.iter().map(fold_constants).collect();
    if e.op.is_float_fn() {
        if let [Expr { op: Op::Float(x), .. }, Expr { op: Op::Float(y), .. }] = args.as_slice() {
            let v = match e.op {
                Op::Add => x + y,
                Op::Sub => x - y,
                Op::Mul => x * y,
                _ => x / y,
            };
            if v.is_finite() {
                let r = (v * 1e9).round() / 1e9;
                return Expr::float(if r == 0.0 { 0.0 } else { r });
            }
        }
    }
    Expr::new(e.op.clone(), args)
}

/// Inlines only calls to `a` (selected by `pick`), leaving other calls intact.
pub(crate) fn inline_with(e: &Expr, a: &Arc<Abstraction>, pick: &dyn Fn(&str) -> bool) -> Expr {
    let args: Vec<Expr> = e.args.iter().map(|x| inline_with(x, a, pick)).collect();
    match &e.op {
        Op::Call(name) if pick(name) => a.body.substitute(&args),
        op => Expr::new(op.clone(), args),
    }
}
