//! External proposer speaking line-delimited JSON over stdin/stdout.
//!
//! Request: `{"prims": [[w,h,x,y], ...], "batch": n, "time_budget": secs}`.
//! Response: `{"expressions": ["...", ...]}` or `{"error": "..."}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Proposer, ProposerError, StepBudget};
use crate::dsl::{parse_expr, Expr, Library, Primitive};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Request {
    pub prims: Vec<Primitive>,
    pub batch: usize,
    pub time_budget: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct Response {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expressions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Conn {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Conn {
    fn spawn(cmd: &str) -> std::io::Result<Conn> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Conn { child, stdin, stdout })
    }

    fn roundtrip(&mut self, req: &Request) -> Result<Response, ProposerError> {
        let mut line = serde_json::to_string(req).map_err(|e| ProposerError::Protocol(e.to_string()))?;
        line.push('\n');
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.flush()?;
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply)? == 0 {
            return Err(ProposerError::Protocol("proposer closed its output".into()));
        }
        serde_json::from_str(reply.trim()).map_err(|e| ProposerError::Protocol(format!("{e}: {}", reply.trim())))
    }
}

impl Drop for Conn {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Pool of independent server processes; each scene worker takes whichever
/// connection is free. Reads block until the server answers.
pub struct SubprocessProposer {
    pool: Vec<Mutex<Conn>>,
    /// Expressions dropped because they did not parse.
    dropped: std::sync::atomic::AtomicUsize,
}

impl SubprocessProposer {
    pub fn spawn(cmd: &str) -> Result<Self, ProposerError> {
        Self::spawn_pool(cmd, 1)
    }

    pub fn spawn_pool(cmd: &str, n: usize) -> Result<Self, ProposerError> {
        let pool = (0..n.max(1)).map(|_| Conn::spawn(cmd).map(Mutex::new)).collect::<Result<_, _>>()?;
        Ok(SubprocessProposer { pool, dropped: Default::default() })
    }

    pub fn dropped(&self) -> usize {
        self.dropped.load(std::sync::atomic::Ordering::Relaxed)
    }

    fn request(&self, req: &Request) -> Result<Response, ProposerError> {
        for c in &self.pool {
            if let Ok(mut conn) = c.try_lock() {
                return conn.roundtrip(req);
            }
        }
        let mut conn = self.pool[0].lock().unwrap_or_else(|e| e.into_inner());
        conn.roundtrip(req)
    }
}

impl Proposer for SubprocessProposer {
    fn name(&self) -> &str {
        "subprocess"
    }

    fn propose(&self, canvas: &[Primitive], lib: &Library, budget: &StepBudget) -> Result<Vec<Expr>, ProposerError> {
        let req = Request { prims: canvas.to_vec(), batch: budget.batch, time_budget: budget.time.as_secs_f64() };
        let resp = self.request(&req)?;
        if let Some(e) = resp.error {
            return Err(ProposerError::Remote(e));
        }
        let texts = resp.expressions.ok_or_else(|| ProposerError::Protocol("response has neither field".into()))?;
        let mut out = Vec::with_capacity(texts.len());
        for t in texts {
            match parse_expr(&t, lib) {
                Ok(e) => out.push(e),
                Err(err) => {
                    log::debug!("dropping proposal {t:?}: {err}");
                    self.dropped.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                }
            }
        }
        Ok(out)
    }
}
