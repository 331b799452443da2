//! Round orchestration: dream, wake, proposal and integration over a corpus,
//! with per-round artifacts, post-hoc inference and rendering.

pub mod render;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dream::{dream_phase, DreamConfig};
use crate::dsl::{execute, parse_expr, read_corpus, CorpusError, Expr, Library, LibraryError, Scene};
use crate::egraph::{scheme_registry, Budget, RefactorConfig, RewriteScheme};
use crate::integration::{evaluate_variant, integrate, IntegrationConfig, LogEntry, State};
use crate::objective::{match_primitives, program_cost, MatchMode};
use crate::proposal::{propose, CandidateAbstraction, ProposalConfig};
use crate::registry::UnknownStrategy;
use crate::wake::{combine, naive_program, proposer_registry, wake_solve, ExprCache, Proposer, ProposerError, StepBudget, WakeConfig};

/// Flat run configuration. Every key has a desk-scale default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    pub rounds: usize,
    pub seed: u64,
    pub workers: usize,
    pub proposer: String,
    /// Shell command for the subprocess proposer.
    pub proposer_command: Option<String>,
    pub wake_batch: usize,
    pub wake_max_candidates: usize,
    pub wake_step_secs: f64,
    /// Dream targets per function; 0 skips the dream phase.
    pub n_d: usize,
    pub n_a: usize,
    pub proposal_iters: usize,
    pub cluster_size: usize,
    pub min_structure_freq: f64,
    pub scheme: String,
    pub refactor_rounds: usize,
    pub refactor_max_nodes: usize,
    pub refactor_secs: f64,
    pub gate_subsample: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let wake = WakeConfig::default();
        let refactor = RefactorConfig::default();
        let proposal = ProposalConfig::default();
        RunConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            out_dir: PathBuf::from("out"),
            rounds: 3,
            seed: 0,
            workers: 1,
            proposer: wake.proposer,
            proposer_command: None,
            wake_batch: wake.batch,
            wake_max_candidates: wake.max_candidates,
            wake_step_secs: wake.step_time.as_secs_f64(),
            n_d: 2000,
            n_a: IntegrationConfig::default().n_a,
            proposal_iters: proposal.iters,
            cluster_size: proposal.cluster_size,
            min_structure_freq: proposal.min_structure_freq,
            scheme: "conditional".into(),
            refactor_rounds: refactor.budget.rounds,
            refactor_max_nodes: refactor.budget.max_nodes,
            refactor_secs: refactor.budget.time.as_secs_f64(),
            gate_subsample: IntegrationConfig::default().subsample,
        }
    }
}

impl RunConfig {
    pub fn wake(&self) -> WakeConfig {
        WakeConfig {
            proposer: self.proposer.clone(),
            batch: self.wake_batch,
            max_candidates: self.wake_max_candidates,
            step_time: Duration::from_secs_f64(self.wake_step_secs),
            command: self.proposer_command.clone(),
        }
    }

    pub fn refactor(&self) -> RefactorConfig {
        RefactorConfig {
            budget: Budget {
                rounds: self.refactor_rounds,
                max_nodes: self.refactor_max_nodes,
                time: Duration::from_secs_f64(self.refactor_secs),
            },
            ..RefactorConfig::default()
        }
    }

    pub fn integration(&self) -> IntegrationConfig {
        IntegrationConfig { n_a: self.n_a, subsample: self.gate_subsample, refactor: self.refactor(), ..Default::default() }
    }

    pub fn proposal(&self, round: usize) -> ProposalConfig {
        ProposalConfig {
            iters: self.proposal_iters,
            cluster_size: self.cluster_size,
            min_structure_freq: self.min_structure_freq,
            seed: sub_seed(self.seed, round, 2),
            ..ProposalConfig::default()
        }
    }

    pub fn dream(&self) -> DreamConfig {
        DreamConfig { per_function: self.n_d, ..DreamConfig::default() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Proposer(#[from] ProposerError),
    #[error(transparent)]
    Strategy(#[from] UnknownStrategy),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

/// Sizes the global worker pool. Only the first call takes effect.
pub fn set_workers(n: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
        log::debug!("worker pool already set: {e}");
    }
}

/// Per-phase seed derived from the root seed.
pub fn sub_seed(seed: u64, round: usize, phase: u64) -> u64 {
    let mut z = seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ phase.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub phase: String,
    pub f: f64,
    pub library_size: usize,
}

/// Refactored programs must reproduce their input exactly; every program
/// must match its scene within the per-primitive threshold. Wake may trade
/// scene error for tokens, so `max_error` is reported, not bounded.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Soundness {
    pub checked: usize,
    pub violations: usize,
    /// Largest summed primitive distance of a matching program.
    pub max_error: f64,
    pub refactored: usize,
    pub drifted: usize,
    pub max_drift: f64,
}

impl Soundness {
    pub fn check(&mut self, programs: &[Expr], scenes: &[Scene], lib: &Library) {
        for (p, s) in programs.iter().zip(scenes) {
            self.checked += 1;
            let ok = execute(p, lib)
                .ok()
                .and_then(|out| match_primitives(&out, &s.prims, lib.config.max_prim_error, MatchMode::Program).ok().flatten());
            match ok {
                Some(m) => self.max_error = self.max_error.max(m.error),
                None => {
                    log::error!("program for scene {} does not reproduce it: {p}", s.id);
                    self.violations += 1;
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenes: usize,
    pub rounds: usize,
    pub naive_f: f64,
    pub final_f: f64,
    pub reduction: f64,
    pub accepted: usize,
    pub library: Vec<String>,
    pub seconds: f64,
    pub soundness: Soundness,
    pub proposer_errors: usize,
    pub round_seconds: Vec<f64>,
}

/// What the proposal phase saw in one round.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub wake_programs: Vec<Expr>,
    pub candidates: Vec<CandidateAbstraction>,
    pub log: Vec<LogEntry>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: State,
    pub trace: Vec<TraceRow>,
    pub rounds: Vec<RoundRecord>,
    pub summary: RunSummary,
}

#[derive(Serialize, Deserialize)]
struct ProgramLine {
    scene: String,
    program: String,
    cost: f64,
}

pub fn write_programs(path: &Path, state: &State, scenes: &[Scene]) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for ((p, c), s) in state.programs.iter().zip(&state.costs).zip(scenes) {
        let line = ProgramLine { scene: s.id.clone(), program: p.to_string(), cost: *c };
        writeln!(w, "{}", serde_json::to_string(&line).expect("serializable")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a program file written by a run, in scene order.
pub fn read_programs(path: &Path, lib: &Library) -> Result<Vec<(String, Expr)>, PipelineError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: ProgramLine =
            serde_json::from_str(&line).map_err(|e| PipelineError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let p = parse_expr(&l.program, lib)
            .map_err(|e| PipelineError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push((l.scene, p));
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let bad = || PipelineError::Invalid(format!("{}:{}: malformed trace row", path.display(), i + 1));
        if parts.len() != 4 {
            return Err(bad());
        }
        rows.push(TraceRow {
            round: parts[0].parse().map_err(|_| bad())?,
            phase: parts[1].to_string(),
            f: parts[2].parse().map_err(|_| bad())?,
            library_size: parts[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<(), PipelineError> {
    let mut s = String::from("round,phase,f,library_size\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.round, r.phase, r.f, r.library_size));
    }
    fs::write(path, s).map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for it in items {
        writeln!(w, "{}", serde_json::to_string(it).expect("serializable")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn naive_state(scenes: &[Scene], lib: Library) -> Result<State, PipelineError> {
    let programs = scenes
        .iter()
        .map(|s| naive_program(s).ok_or_else(|| PipelineError::Invalid(format!("scene {} is empty", s.id))))
        .collect::<Result<Vec<_>, _>>()?;
    State::new(lib, programs, scenes).ok_or_else(|| PipelineError::Invalid("naive program does not match its scene".into()))
}

fn proposer(cfg: &RunConfig) -> Result<Arc<dyn Proposer>, PipelineError> {
    Ok(proposer_registry(&cfg.wake())?.get(&cfg.proposer)?)
}

fn scheme(name: &str) -> Result<Arc<dyn RewriteScheme>, PipelineError> {
    Ok(scheme_registry().get(name)?)
}

/// One wake pass over every scene. Programs only change when the combined
/// result is cheaper. Returns the number of proposer errors.
pub fn wake_phase(
    state: &mut State,
    caches: &mut [ExprCache],
    scenes: &[Scene],
    proposer: &dyn Proposer,
    budget: &StepBudget,
) -> usize {
    let lib = &state.lib;
    let results: Vec<_> = scenes
        .par_iter()
        .zip(caches.par_iter_mut())
        .zip(state.programs.par_iter())
        .map(|((s, cache), prev)| {
            cache.absorb(prev, s, lib);
            let woken = wake_solve(s, lib, proposer, budget)?;
            for st in &woken.steps {
                cache.insert(st);
            }
            match combine(Some(prev), &woken.program, cache, s, lib) {
                Ok(c) => Some((c.program, c.cost, woken.proposer_errors)),
                Err(e) => {
                    log::warn!("combine failed on scene {}: {e}", s.id);
                    None
                }
            }
        })
        .collect();
    let mut errors = 0;
    for (i, r) in results.into_iter().enumerate() {
        if let Some((p, c, e)) = r {
            errors += e;
            if c < state.costs[i] - 1e-12 {
                state.programs[i] = p;
                state.costs[i] = c;
            }
        }
    }
    errors
}

/// Runs `cfg.rounds` rounds and writes artifacts under `cfg.out_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, PipelineError> {
    let scenes = read_corpus(&cfg.corpus)?;
    run_on(cfg, &scenes)
}

pub fn run_on(cfg: &RunConfig, scenes: &[Scene]) -> Result<RunOutput, PipelineError> {
    let start = Instant::now();
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let proposer = proposer(cfg)?;
    let scheme = scheme(&cfg.scheme)?;
    let budget = StepBudget::from(&cfg.wake());
    let icfg = cfg.integration();

    let mut state = naive_state(scenes, Library::default())?;
    let naive_f = state.f();
    let mut trace = vec![TraceRow { round: 0, phase: "naive".into(), f: naive_f, library_size: 0 }];
    let mut rounds = Vec::new();
    let mut soundness = Soundness::default();
    let mut caches = vec![ExprCache::default(); scenes.len()];
    let mut proposer_errors = 0;
    let mut round_seconds = Vec::new();
    state.lib.save(&out.join("library_r0.json"))?;
    write_programs(&out.join("programs_r0.jsonl"), &state, scenes)?;
    write_trace(&out.join("f_trace.csv"), &trace)?;

    for r in 1..=cfg.rounds {
        let t0 = Instant::now();
        if cfg.n_d > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, r, 0));
            let dreams = dream_phase(&state.lib, scenes, &cfg.dream(), &mut rng);
            let path = out.join(format!("dreams_r{r}.jsonl"));
            let n = dreams.export(&path).map_err(|e| PipelineError::Invalid(e.to_string()))?;
            log::info!("round {r}: {n} dream records, {} functions failed", dreams.failed.len());
        }

        proposer_errors += wake_phase(&mut state, &mut caches, scenes, proposer.as_ref(), &budget);
        let f = state.f();
        log::info!("round {r}: wake F {f:.4}");
        trace.push(TraceRow { round: r, phase: "wake".into(), f, library_size: state.lib.len() });
        soundness.check(&state.programs, scenes, &state.lib);

        let candidates = propose(&state.programs, &state.lib, &cfg.proposal(r));
        log::info!("round {r}: {} candidates", candidates.len());
        write_jsonl(
            &out.join(format!("candidates_r{r}.jsonl")),
            &candidates
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "body": c.abstraction.body.to_string(),
                        "params": c.abstraction.params,
                        "frequency": c.frequency,
                        "gain": c.gain,
                        "score": c.score,
                        "coverage": c.coverage.len(),
                    })
                })
                .collect::<Vec<_>>(),
        )?;

        let wake_programs = state.programs.clone();
        let res = integrate(state, scenes, &candidates, scheme.as_ref(), &icfg);
        state = res.state;
        for (f, n) in res.trace.iter().zip(&res.sizes).skip(1) {
            trace.push(TraceRow { round: r, phase: "integrate".into(), f: *f, library_size: *n });
        }
        soundness.check(&state.programs, scenes, &state.lib);
        soundness.violations += res.unsound;
        soundness.refactored += res.refactored;
        soundness.drifted += res.drifted;
        soundness.max_drift = soundness.max_drift.max(res.max_drift);
        log::info!("round {r}: F {:.4}, library {}", state.f(), state.lib.len());

        state.lib.save(&out.join(format!("library_r{r}.json")))?;
        write_programs(&out.join(format!("programs_r{r}.jsonl")), &state, scenes)?;
        write_jsonl(&out.join(format!("integration_r{r}.jsonl")), &res.log)?;
        write_trace(&out.join("f_trace.csv"), &trace)?;
        rounds.push(RoundRecord { wake_programs, candidates, log: res.log });
        round_seconds.push(t0.elapsed().as_secs_f64());
    }

    let final_f = state.f();
    let summary = RunSummary {
        scenes: scenes.len(),
        rounds: cfg.rounds,
        naive_f,
        final_f,
        reduction: if naive_f > 0.0 { 1.0 - final_f / naive_f } else { 0.0 },
        accepted: rounds.iter().flat_map(|r| &r.log).filter(|e| e.decision == "accepted" && e.kind != "remove").count(),
        library: state.lib.abstractions().iter().map(|a| format!("{} = {}", a.name, a.body)).collect(),
        seconds: start.elapsed().as_secs_f64(),
        soundness,
        proposer_errors,
        round_seconds,
    };
    let path = out.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("serializable")).map_err(io_err(&path))?;
    Ok(RunOutput { state, trace, rounds, summary })
}

#[derive(Clone, Debug, Serialize)]
pub struct PhiResult {
    #[serde(skip)]
    pub state: State,
    pub f: f64,
    /// Mean number of abstraction calls per program.
    pub mean_calls: f64,
    pub soundness: Soundness,
}

/// One wake pass from naive programs under a frozen library.
pub fn wake_all(lib: &Library, scenes: &[Scene], cfg: &RunConfig) -> Result<State, PipelineError> {
    let proposer = proposer(cfg)?;
    let budget = StepBudget::from(&cfg.wake());
    let mut state = naive_state(scenes, lib.clone())?;
    let mut caches = vec![ExprCache::default(); scenes.len()];
    wake_phase(&mut state, &mut caches, scenes, proposer.as_ref(), &budget);
    Ok(state)
}

/// Wake then refactor every scene under a frozen library.
pub fn phi(lib: &Library, scenes: &[Scene], cfg: &RunConfig) -> Result<PhiResult, PipelineError> {
    let scheme = scheme(&cfg.scheme)?;
    let state = wake_all(lib, scenes, cfg)?;
    let (state, stats) = evaluate_variant(lib, &state, scenes, scheme.as_ref(), &cfg.refactor(), None);
    let mut soundness = Soundness::default();
    soundness.check(&state.programs, scenes, lib);
    soundness.violations += stats.unsound;
    soundness.refactored += stats.refactored;
    soundness.drifted += stats.drifted;
    soundness.max_drift = stats.max_drift;
    let calls: usize = state.programs.iter().map(|p| p.called().len()).sum();
    let mean_calls = calls as f64 / state.programs.len().max(1) as f64;
    Ok(PhiResult { f: state.f(), mean_calls, soundness, state })
}

/// Recomputes F from persisted files.
pub fn recompute_f(lib_path: &Path, programs_path: &Path, scenes: &[Scene]) -> Result<f64, PipelineError> {
    let lib = Library::load(lib_path)?;
    let progs = read_programs(programs_path, &lib)?;
    if progs.len() != scenes.len() {
        return Err(PipelineError::Invalid(format!("{} programs for {} scenes", progs.len(), scenes.len())));
    }
    let by_id: BTreeMap<&str, &Scene> = scenes.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut sum = 0.0;
    for (id, p) in &progs {
        let s = by_id.get(id.as_str()).ok_or_else(|| PipelineError::Invalid(format!("unknown scene {id}")))?;
        sum += program_cost(p, s, &lib).ok_or_else(|| PipelineError::Invalid(format!("program for {id} is invalid")))?;
    }
    Ok(sum / progs.len().max(1) as f64 + lib.omega_sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(0, 1, 0), sub_seed(0, 1, 1));
        assert_ne!(sub_seed(0, 1, 0), sub_seed(0, 2, 0));
        assert_eq!(sub_seed(5, 3, 2), sub_seed(5, 3, 2));
    }

    #[test]
    fn config_defaults_roundtrip() {
        let c = RunConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
        assert!(serde_json::from_str::<RunConfig>(r#"{"roundz": 3}"#).is_err());
        assert_eq!(c.n_d, 2000);
        assert_eq!(c.n_a, 20);
    }
}
