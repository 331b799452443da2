use super::expr::{Axis, Expr, Op, Sort};
use super::library::Library;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at {}: {msg}", fmt_pos(*pos))]
    Syntax { pos: Option<usize>, msg: String },
    #[error("type error at {pos}: {expected} expected, {found} found")]
    Type { pos: usize, expected: Sort, found: Sort },
    #[error("unknown function {name} at {pos}")]
    UnknownFunction { pos: usize, name: String },
    #[error("{name} at {pos} takes {expected} arguments, got {found}")]
    Arity { pos: usize, name: String, expected: usize, found: usize },
    #[error("parameter reference {name} at {pos} outside an abstraction body")]
    ParamOutsideBody { pos: usize, name: String },
}

fn fmt_pos(p: Option<usize>) -> String {
    match p {
        Some(p) => format!("offset {p}"),
        None => "end-of-input".into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64, bool),
    LParen,
    RParen,
    Comma,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                out.push((pos, Tok::LParen));
                i += 1
            }
            ')' => {
                out.push((pos, Tok::RParen));
                i += 1
            }
            ',' => {
                out.push((pos, Tok::Comma));
                i += 1
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                    s.push(chars[i].1);
                    i += 1;
                }
                out.push((pos, Tok::Ident(s)));
            }
            c if c.is_ascii_digit() || c == '-' || c == '\u{2212}' || c == '.' || c == '+' => {
                let mut s = String::new();
                if c == '\u{2212}' {
                    s.push('-');
                    i += 1;
                }
                while i < chars.len() {
                    let d = chars[i].1;
                    let prev = s.chars().last();
                    let sign_ok = (d == '-' || d == '+') && (s.is_empty() || matches!(prev, Some('e' | 'E')));
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || sign_ok {
                        s.push(d);
                        i += 1;
                    } else {
                        break;
                    }
                }
                let v: f64 = s
                    .parse()
                    .map_err(|_| ParseError::Syntax { pos: Some(pos), msg: format!("bad number {s:?}") })?;
                let integral = !s.contains(['.', 'e', 'E']);
                out.push((pos, Tok::Num(v, integral)));
            }
            other => {
                return Err(ParseError::Syntax { pos: Some(pos), msg: format!("unexpected character {other:?}") })
            }
        }
    }
    Ok(out)
}

/// Untyped tree produced by the first pass.
struct Raw {
    pos: usize,
    head: Tok,
    args: Option<Vec<Raw>>,
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    i: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|t| &t.1)
    }

    fn pos(&self) -> Option<usize> {
        self.toks.get(self.i).map(|t| t.0)
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(x) if *x == t => {
                self.i += 1;
                Ok(())
            }
            _ => Err(ParseError::Syntax { pos: self.pos(), msg: format!("expected {what}") }),
        }
    }

    fn term(&mut self) -> Result<Raw, ParseError> {
        let Some((pos, tok)) = self.toks.get(self.i).cloned() else {
            return Err(ParseError::Syntax { pos: None, msg: "expected a term".into() });
        };
        self.i += 1;
        match tok {
            Tok::Num(..) => Ok(Raw { pos, head: tok, args: None }),
            Tok::Ident(_) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.i += 1;
                    let mut args = Vec::new();
                    if self.peek() == Some(&Tok::RParen) {
                        self.i += 1;
                    } else {
                        loop {
                            args.push(self.term()?);
                            match self.peek() {
                                Some(Tok::Comma) => self.i += 1,
                                _ => {
                                    self.expect(Tok::RParen, "',' or ')'")?;
                                    break;
                                }
                            }
                        }
                    }
                    Ok(Raw { pos, head: tok, args: Some(args) })
                } else {
                    Ok(Raw { pos, head: tok, args: None })
                }
            }
            _ => Err(ParseError::Syntax { pos: Some(pos), msg: "expected a term".into() }),
        }
    }
}

struct Typer<'a> {
    lib: &'a Library,
    params: Option<&'a [Sort]>,
}

impl Typer<'_> {
    fn check(&self, raw: &Raw, expected: Sort) -> Result<Expr, ParseError> {
        let pos = raw.pos;
        let mismatch = |found: Sort| Err(ParseError::Type { pos, expected, found });
        match &raw.head {
            Tok::Num(v, integral) => {
                if raw.args.is_some() {
                    return Err(ParseError::Syntax { pos: Some(pos), msg: "number applied to arguments".into() });
                }
                match expected {
                    Sort::Float => Ok(Expr::float(*v)),
                    Sort::Int if *integral && *v >= 0.0 && *v <= 255.0 => Ok(Expr::int(*v as u8)),
                    _ => mismatch(Sort::Float),
                }
            }
            Tok::Ident(name) => {
                let args = raw.args.as_deref().unwrap_or(&[]);
                let (op, result, sorts): (Op, Sort, Vec<Sort>) = match name.as_str() {
                    "AX" | "AY" => {
                        let a = if name == "AX" { Axis::X } else { Axis::Y };
                        (Op::Axis(a), Sort::Axis, vec![])
                    }
                    "Union" | "SymRef" | "SymTrans" | "Move" | "Rect" | "Add" | "Sub" | "Mul" | "Div" => {
                        let op = match name.as_str() {
                            "Union" => Op::Union,
                            "SymRef" => Op::SymRef,
                            "SymTrans" => Op::SymTrans,
                            "Move" => Op::Move,
                            "Rect" => Op::Rect,
                            "Add" => Op::Add,
                            "Sub" => Op::Sub,
                            "Mul" => Op::Mul,
                            _ => Op::Div,
                        };
                        let (r, s) = op.signature().expect("base op");
                        (op, r, s.to_vec())
                    }
                    _ => {
                        if let Some(k) = param_index(name) {
                            let Some(params) = self.params else {
                                return Err(ParseError::ParamOutsideBody { pos, name: name.clone() });
                            };
                            let Some(&s) = params.get(k) else {
                                return Err(ParseError::UnknownFunction { pos, name: name.clone() });
                            };
                            (Op::Param(k), s, vec![])
                        } else if let Some(a) = self.lib.get(name) {
                            (Op::Call(a.name.as_str().into()), Sort::Shape, a.params.clone())
                        } else {
                            return Err(ParseError::UnknownFunction { pos, name: name.clone() });
                        }
                    }
                };
                if result != expected {
                    return mismatch(result);
                }
                if args.len() != sorts.len() {
                    return Err(ParseError::Arity {
                        pos,
                        name: name.clone(),
                        expected: sorts.len(),
                        found: args.len(),
                    });
                }
                let args = args
                    .iter()
                    .zip(&sorts)
                    .map(|(a, s)| self.check(a, *s))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Expr::new(op, args))
            }
            _ => unreachable!("raw heads are numbers or identifiers"),
        }
    }
}

fn param_index(name: &str) -> Option<usize> {
    let d = name.strip_prefix('P')?;
    if d.is_empty() || !d.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    d.parse().ok()
}

fn parse_raw(text: &str) -> Result<Raw, ParseError> {
    let mut p = Parser { toks: lex(text)?, i: 0 };
    let raw = p.term()?;
    if p.i != p.toks.len() {
        return Err(ParseError::Syntax { pos: p.pos(), msg: "trailing input".into() });
    }
    Ok(raw)
}

/// Parses a closed SHAPE expression.
pub fn parse_expr(text: &str, lib: &Library) -> Result<Expr, ParseError> {
    let raw = parse_raw(text)?;
    Typer { lib, params: None }.check(&raw, Sort::Shape)
}

/// Parses an abstraction body whose parameters have the given sorts.
pub fn parse_expr_in_body(text: &str, lib: &Library, params: &[Sort]) -> Result<Expr, ParseError> {
    let raw = parse_raw(text)?;
    Typer { lib, params: Some(params) }.check(&raw, Sort::Shape)
}
