use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// An axis-aligned rectangle given by width, height and center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Primitive {
    pub w: f64,
    pub h: f64,
    pub x: f64,
    pub y: f64,
}

impl Primitive {
    pub fn new(w: f64, h: f64, x: f64, y: f64) -> Self {
        Primitive { w, h, x, y }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.h, self.x, self.y]
    }

    /// Mean absolute difference over (w, h, x, y).
    pub fn distance(&self, o: &Primitive) -> f64 {
        ((self.w - o.w).abs() + (self.h - o.h).abs() + (self.x - o.x).abs() + (self.y - o.y).abs())
            / 4.0
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        (px - self.x).abs() <= self.w / 2.0 && (py - self.y).abs() <= self.h / 2.0
    }
}

impl From<[f64; 4]> for Primitive {
    fn from(a: [f64; 4]) -> Self {
        Primitive::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Primitive> for [f64; 4] {
    fn from(p: Primitive) -> Self {
        p.as_array()
    }
}

/// Upper bound on primitives per scene.
pub const MAX_PRIMS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub prims: Vec<Primitive>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: malformed scene: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: scene {id} has no primitives")]
    Empty { line: usize, id: String },
    #[error("line {line}: scene {id} has {n} primitives (limit 16)")]
    TooMany { line: usize, id: String, n: usize },
    #[error("line {line}: scene {id} has a non-finite or non-positive primitive")]
    BadPrimitive { line: usize, id: String },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SceneLine {
    Full { id: Option<serde_json::Value>, prims: Vec<Primitive> },
    Bare(Vec<Primitive>),
}

/// Reads a JSONL corpus. Lines are either `{"id": .., "prims": [[w,h,x,y], ..]}`
/// or a bare array of primitives; missing ids become the line index.
pub fn read_corpus(path: &Path) -> Result<Vec<Scene>, CorpusError> {
    let f = File::open(path).map_err(|e| CorpusError::Io { path: path.display().to_string(), source: e })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io { path: path.display().to_string(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SceneLine = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: i + 1, msg: e.to_string() })?;
        let (id, prims) = match parsed {
            SceneLine::Full { id, prims } => {
                let id = match id {
                    Some(serde_json::Value::String(s)) => s,
                    Some(v) => v.to_string(),
                    None => out.len().to_string(),
                };
                (id, prims)
            }
            SceneLine::Bare(prims) => (out.len().to_string(), prims),
        };
        if prims.is_empty() {
            return Err(CorpusError::Empty { line: i + 1, id });
        }
        if prims.len() > MAX_PRIMS {
            return Err(CorpusError::TooMany { line: i + 1, id, n: prims.len() });
        }
        if prims.iter().any(|p| !p.is_finite() || p.w <= 0.0 || p.h <= 0.0) {
            return Err(CorpusError::BadPrimitive { line: i + 1, id });
        }
        out.push(Scene { id, prims });
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, scenes: &[Scene]) -> Result<(), CorpusError> {
    let io = |e| CorpusError::Io { path: path.display().to_string(), source: e };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for s in scenes {
        let line = serde_json::to_string(s).expect("scene serializes");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_round_trip_and_bare_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let scenes = vec![Scene { id: "a".into(), prims: vec![Primitive::new(0.1, 0.2, 0.3, -0.4)] }];
        write_corpus(&p, &scenes).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), scenes);

        std::fs::write(&p, "[[0.5,0.5,0,0],[0.1,0.1,0.2,0.2]]\n").unwrap();
        let s = read_corpus(&p).unwrap();
        assert_eq!(s[0].id, "0");
        assert_eq!(s[0].prims.len(), 2);

        std::fs::write(&p, "{\"id\":\"x\",\"prims\":[]}\n").unwrap();
        assert!(matches!(read_corpus(&p), Err(CorpusError::Empty { .. })));
        std::fs::write(&p, "{\"id\":\"x\",\"prims\":[[0,1,0,0]]}\n").unwrap();
        assert!(matches!(read_corpus(&p), Err(CorpusError::BadPrimitive { .. })));
    }
}
