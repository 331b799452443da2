use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::exec::inline_with;
use super::expr::{Expr, Op, Sort};
use super::parse::{parse_expr_in_body, ParseError};
use crate::objective::ObjectiveConfig;

/// A learned function: typed slots and a body over `P0..Pn`.
#[derive(Clone, Debug, PartialEq)]
pub struct Abstraction {
    pub name: String,
    pub params: Vec<Sort>,
    pub body: Expr,
    pub omega: f64,
}

impl Abstraction {
    pub fn float_slots(&self) -> usize {
        self.params.iter().filter(|s| **s == Sort::Float).count()
    }

    /// Checks slot references and that every FLOAT slot occurs bare somewhere
    /// in the body, which the e-graph rewrite needs to bind it.
    pub fn validate(&self) -> Result<(), LibraryError> {
        let mut bare = vec![false; self.params.len()];
        let mut bad = None;
        fn walk(e: &Expr, parent_arith: bool, bare: &mut [bool], bad: &mut Option<usize>) {
            if let Op::Param(k) = e.op {
                if k >= bare.len() {
                    *bad = Some(k);
                } else if !parent_arith {
                    bare[k] = true;
                }
            }
            let arith = e.op.is_float_fn();
            for a in &e.args {
                walk(a, arith, bare, bad);
            }
        }
        walk(&self.body, false, &mut bare, &mut bad);
        if let Some(k) = bad {
            return Err(LibraryError::UnboundSlot { name: self.name.clone(), slot: k });
        }
        for (k, s) in self.params.iter().enumerate() {
            if !bare[k] {
                if *s == Sort::Float {
                    return Err(LibraryError::NotInvertible { name: self.name.clone(), slot: k });
                }
                // discrete slots must at least be referenced
                return Err(LibraryError::UnusedSlot { name: self.name.clone(), slot: k });
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LibraryError {
    #[error("duplicate abstraction name {0}")]
    Duplicate(String),
    #[error("unknown abstraction {0}")]
    Unknown(String),
    #[error("abstraction {name}: parameter P{slot} is not declared")]
    UnboundSlot { name: String, slot: usize },
    #[error("abstraction {name}: FLOAT slot P{slot} never appears outside arithmetic")]
    NotInvertible { name: String, slot: usize },
    #[error("abstraction {name}: slot P{slot} is never used")]
    UnusedSlot { name: String, slot: usize },
    #[error("abstraction {name}: body: {source}")]
    Body { name: String, source: ParseError },
    #[error("abstraction {name}: omega must be positive")]
    BadOmega { name: String },
    #[error("library io: {0}")]
    Io(#[from] std::io::Error),
    #[error("library json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Base operators are implicit; this holds the learned abstractions in
/// insertion order plus the objective weights. Cloning is cheap.
#[derive(Clone, Debug)]
pub struct Library {
    abstractions: Vec<Arc<Abstraction>>,
    index: HashMap<String, usize>,
    pub config: ObjectiveConfig,
    /// Names of semantic rewrites enabled for refactoring.
    pub semantic_rewrites: Vec<String>,
    next_id: usize,
}

impl Default for Library {
    fn default() -> Self {
        Library::new(ObjectiveConfig::default())
    }
}

impl Library {
    pub fn new(config: ObjectiveConfig) -> Self {
        Library {
            abstractions: Vec::new(),
            index: HashMap::new(),
            config,
            semantic_rewrites: crate::egraph::semantic::catalogue_names(),
            next_id: 0,
        }
    }

    pub fn abstractions(&self) -> &[Arc<Abstraction>] {
        &self.abstractions
    }

    pub fn len(&self) -> usize {
        self.abstractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abstractions.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Abstraction>> {
        self.index.get(name).map(|&i| &self.abstractions[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn omega_sum(&self) -> f64 {
        self.abstractions.iter().map(|a| a.omega).sum()
    }

    /// Next unused `Abs_k` name.
    pub fn fresh_name(&self) -> String {
        let mut k = self.next_id;
        while self.index.contains_key(&format!("Abs_{k}")) {
            k += 1;
        }
        format!("Abs_{k}")
    }

    pub fn add(&mut self, a: Abstraction) -> Result<(), LibraryError> {
        if self.index.contains_key(&a.name) {
            return Err(LibraryError::Duplicate(a.name));
        }
        a.validate()?;
        if a.omega.is_nan() || a.omega <= 0.0 {
            return Err(LibraryError::BadOmega { name: a.name });
        }
        for n in a.body.called() {
            if !self.index.contains_key(&*n) {
                return Err(LibraryError::Unknown(n.to_string()));
            }
        }
        if let Some(k) = a.name.strip_prefix("Abs_").and_then(|s| s.parse::<usize>().ok()) {
            self.next_id = self.next_id.max(k + 1);
        }
        self.index.insert(a.name.clone(), self.abstractions.len());
        self.abstractions.push(Arc::new(a));
        Ok(())
    }

    /// Removes an abstraction. Bodies of other abstractions that call it get
    /// the call inlined so the library stays closed.
    pub fn remove(&mut self, name: &str) -> Result<Arc<Abstraction>, LibraryError> {
        let i = self.index_of(name).ok_or_else(|| LibraryError::Unknown(name.to_string()))?;
        let removed = self.abstractions.remove(i);
        let only = |n: &str| n == name;
        for a in self.abstractions.iter_mut() {
            if a.body.called().iter().any(|n| &**n == name) {
                let body = inline_with(&a.body, &removed, &only);
                let mut na = (**a).clone();
                na.body = body;
                *a = Arc::new(na);
            }
        }
        self.reindex();
        Ok(removed)
    }

    /// Replaces the omega of an abstraction (used when a dependency was inlined).
    pub fn set_omega(&mut self, name: &str, omega: f64) {
        if let Some(i) = self.index_of(name) {
            let mut a = (*self.abstractions[i]).clone();
            a.omega = omega;
            self.abstractions[i] = Arc::new(a);
        }
    }

    fn reindex(&mut self) {
        self.index = self.abstractions.iter().enumerate().map(|(i, a)| (a.name.clone(), i)).collect();
    }

    pub fn to_file(&self) -> LibraryFile {
        LibraryFile {
            abstractions: self
                .abstractions
                .iter()
                .map(|a| AbstractionRecord {
                    name: a.name.clone(),
                    params: a.params.clone(),
                    body: a.body.to_string(),
                    omega: a.omega,
                })
                .collect(),
            next_id: self.next_id,
            config: Some(self.config.clone()),
            semantic_rewrites: Some(self.semantic_rewrites.clone()),
        }
    }

    pub fn from_file(file: &LibraryFile) -> Result<Library, LibraryError> {
        let mut lib = Library::new(file.config.clone().unwrap_or_default());
        if let Some(r) = &file.semantic_rewrites {
            lib.semantic_rewrites = r.clone();
        }
        for rec in &file.abstractions {
            let body = parse_expr_in_body(&rec.body, &lib, &rec.params)
                .map_err(|e| LibraryError::Body { name: rec.name.clone(), source: e })?;
            lib.add(Abstraction { name: rec.name.clone(), params: rec.params.clone(), body, omega: rec.omega })?;
        }
        lib.next_id = lib.next_id.max(file.next_id);
        Ok(lib)
    }

    pub fn save(&self, path: &Path) -> Result<(), LibraryError> {
        let s = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, s + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Library, LibraryError> {
        let s = std::fs::read_to_string(path)?;
        let f: LibraryFile = serde_json::from_str(&s)?;
        Library::from_file(&f)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AbstractionRecord {
    pub name: String,
    pub params: Vec<Sort>,
    pub body: String,
    pub omega: f64,
}

/// On-disk library document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LibraryFile {
    pub abstractions: Vec<AbstractionRecord>,
    #[serde(default)]
    pub next_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ObjectiveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_rewrites: Option<Vec<String>>,
}
