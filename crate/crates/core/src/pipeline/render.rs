//! SVG output. The canvas spans [-1.1, 1.1] on both axes with y up.

use std::fmt::Write;

use crate::dsl::{execute, ExecError, Expr, Library, Op, Primitive};

const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7"];

/// Operands of the top-level union chain, left to right.
pub fn top_level(e: &Expr) -> Vec<&Expr> {
    let mut out = Vec::new();
    fn go<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
        if e.op == Op::Union {
            for a in &e.args {
                go(a, out);
            }
        } else {
            out.push(e);
        }
    }
    go(e, &mut out);
    out
}

/// One rect per primitive; `groups[i]` picks the palette color.
pub fn svg(prims: &[Primitive], groups: &[usize]) -> String {
    let mut s = String::new();
    s.push_str("<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"-1.1 -1.1 2.2 2.2\" width=\"440\" height=\"440\">\n");
    s.push_str("<g transform=\"scale(1,-1)\">\n");
    for (i, p) in prims.iter().enumerate() {
        let color = PALETTE[groups.get(i).copied().unwrap_or(0) % PALETTE.len()];
        let _ = writeln!(
            s,
            "<rect x=\"{:.4}\" y=\"{:.4}\" width=\"{:.4}\" height=\"{:.4}\" fill=\"{color}\" fill-opacity=\"0.7\" stroke=\"#222\" stroke-width=\"0.005\"/>",
            p.x - p.w / 2.0,
            p.y - p.h / 2.0,
            p.w,
            p.h
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

pub fn render_scene(prims: &[Primitive]) -> String {
    svg(prims, &vec![0; prims.len()])
}

/// Colors primitives by the top-level expression that produced them.
pub fn render_expr(e: &Expr, lib: &Library) -> Result<String, ExecError> {
    let mut prims = Vec::new();
    let mut groups = Vec::new();
    for (g, part) in top_level(e).into_iter().enumerate() {
        let out = execute(part, lib)?;
        groups.extend(std::iter::repeat_n(g, out.len()));
        prims.extend(out);
    }
    Ok(svg(&prims, &groups))
}
