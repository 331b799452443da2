//! The shape language: expressions, parsing, execution and libraries.

mod exec;
mod expr;
mod library;
mod parse;
mod scene;

pub use exec::{execute, execute_with_env, fold_constants, inline, inline_call, ExecError, Value};
pub use expr::{Axis, Expr, Op, Sort};
pub use library::{Abstraction, Library, LibraryError, LibraryFile};
pub use parse::{parse_expr, parse_expr_in_body, ParseError};
pub use scene::{read_corpus, write_corpus, CorpusError, Primitive, Scene, MAX_PRIMS};

/// Splits a program into its top-level expressions by flattening unions.
pub fn split_union(e: &Expr) -> Vec<Expr> {
    let mut out = Vec::new();
    fn walk(e: &Expr, out: &mut Vec<Expr>) {
        if matches!(e.op, Op::Union) {
            walk(&e.args[0], out);
            walk(&e.args[1], out);
        } else {
            out.push(e.clone());
        }
    }
    walk(e, &mut out);
    out
}

/// Left-leaning union fold: `Union(Union(e1, e2), e3)`.
pub fn fold_union(exprs: Vec<Expr>) -> Option<Expr> {
    let mut it = exprs.into_iter();
    let first = it.next()?;
    Some(it.fold(first, |acc, e| Expr::new(Op::Union, vec![acc, e])))
}
