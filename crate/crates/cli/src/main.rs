use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};

use shapelib::dream::corpus::gen_synthetic_corpus;
use shapelib::dsl::{execute, parse_expr, read_corpus, write_corpus, Library, Scene};
use shapelib::egraph::bench::bench_cell;
use shapelib::egraph::{scheme_registry, Refactorer};
use shapelib::pipeline::render::{render_expr, render_scene};
use shapelib::pipeline::{self, read_programs, read_trace, PipelineError, RunConfig, RunSummary};
use shapelib::proposal::{propose, report};

const CONFIG_ENV: &str = "SHAPELIB_CONFIG";

#[derive(Parser)]
#[command(name = "shapelib", version, about = "Library learning over 2D rectangle scenes")]
struct Cli {
    /// Run configuration (flat TOML).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set rounds=1`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic corpus.
    GenData {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the latent template programs.
        #[arg(long)]
        latents: Option<PathBuf>,
    },
    /// Run library learning rounds.
    Run {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Wake every scene under a library and write programs.
    Wake {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lib: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Propose candidate abstractions from a program file.
    Propose {
        #[arg(long)]
        programs: PathBuf,
        #[arg(long)]
        lib: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Refactor one expression under a library.
    Refactor {
        #[arg(long)]
        lib: PathBuf,
        expr: String,
    },
    /// Post-hoc inference with a frozen library.
    Phi {
        #[arg(long)]
        lib: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a scene or an expression to SVG.
    Render {
        /// Corpus file; renders scene `--index`.
        #[arg(long, conflicts_with = "expr")]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        expr: Option<String>,
        #[arg(long)]
        lib: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time conditional vs naive abstraction rewriting.
    BenchRewrites {
        #[arg(long, value_delimiter = ',', default_values_t = vec![8usize, 16, 32])]
        params: Vec<usize>,
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
        /// Memory guard; a cell that hits it counts as not saturated.
        #[arg(long, default_value_t = 10_000_000)]
        max_nodes: usize,
    },
    /// Summarize a run directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

/// Failure categories; the process exit code is the discriminant.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Category {
    Config = 3,
    Input = 4,
    Io = 5,
    Runtime = 6,
}

struct Failure {
    category: Category,
    err: anyhow::Error,
}

fn fail(category: Category) -> impl FnOnce(anyhow::Error) -> Failure {
    move |err| Failure { category, err }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let category = match &e {
            PipelineError::Corpus(_) | PipelineError::Library(_) | PipelineError::Invalid(_) => Category::Input,
            PipelineError::Io { .. } => Category::Io,
            PipelineError::Strategy(_) => Category::Config,
            PipelineError::Proposer(_) => Category::Runtime,
        };
        Failure { category, err: e.into() }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error ({:?}): {:#}", f.category, f.err);
            ExitCode::from(f.category as u8)
        }
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, Failure> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))
                .map_err(fail(Category::Config))?;
            text.parse::<toml::Table>().context("parsing config").map_err(fail(Category::Config))?
        }
        None => toml::Table::new(),
    };
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("override `{kv}` is not KEY=VALUE"))
            .map_err(fail(Category::Config))?;
        // bare words are strings
        let value = format!("v = {v}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(v.to_string()));
        table.insert(k.trim().to_string(), value);
    }
    toml::Value::Table(table).try_into().context("invalid config").map_err(fail(Category::Config))
}

fn load_lib(path: Option<&Path>) -> Result<Library, Failure> {
    match path {
        Some(p) => Ok(Library::load(p).map_err(PipelineError::from)?),
        None => Ok(Library::default()),
    }
}

fn load_corpus(path: &Path) -> Result<Vec<Scene>, Failure> {
    Ok(read_corpus(path).map_err(PipelineError::from)?)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(fail(Category::Io))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    match cli.cmd {
        Cmd::GenData { n, seed, out, latents } => {
            let (scenes, lat) = gen_synthetic_corpus(n, seed);
            write_corpus(&out, &scenes).map_err(PipelineError::from)?;
            if let Some(p) = latents {
                let lines: Vec<String> = lat.iter().map(|l| serde_json::to_string(l).expect("serializable")).collect();
                write(&p, &(lines.join("\n") + "\n"))?;
            }
            println!("wrote {} scenes to {}", scenes.len(), out.display());
        }
        Cmd::Run { corpus, out, rounds, seed, workers } => {
            if let Some(c) = corpus {
                cfg.corpus = c;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            pipeline::set_workers(cfg.workers);
            let out = pipeline::run(&cfg)?;
            let s = &out.summary;
            println!(
                "F {:.4} -> {:.4} ({:.1}% reduction), {} abstractions accepted, {:.1}s",
                s.naive_f,
                s.final_f,
                100.0 * s.reduction,
                s.accepted,
                s.seconds
            );
            for a in &s.library {
                println!("  {a}");
            }
        }
        Cmd::Wake { corpus, lib, out } => {
            pipeline::set_workers(cfg.workers);
            let scenes = load_corpus(&corpus)?;
            let lib = load_lib(lib.as_deref())?;
            let r = pipeline::wake_all(&lib, &scenes, &cfg)?;
            pipeline::write_programs(&out, &r, &scenes)?;
            println!("F {:.4} over {} scenes", r.f(), scenes.len());
        }
        Cmd::Propose { programs, lib, top } => {
            let lib = load_lib(lib.as_deref())?;
            let progs: Vec<_> = read_programs(&programs, &lib)?.into_iter().map(|(_, p)| p).collect();
            let cands = propose(&progs, &lib, &cfg.proposal(1));
            let n = cands.len().min(top);
            print!("{}", report(&cands[..n]));
        }
        Cmd::Refactor { lib, expr } => {
            let lib = load_lib(Some(&lib))?;
            let e = parse_expr(&expr, &lib).context("parsing expression").map_err(fail(Category::Input))?;
            let scheme = scheme_registry().get(&cfg.scheme).map_err(PipelineError::from)?;
            let r = Refactorer::new(&lib, scheme.as_ref(), &cfg.refactor());
            let out = r.refactor(&e).context("refactoring").map_err(fail(Category::Input))?;
            println!("{}", out.program);
            eprintln!("cost {:.3} -> {:.3}", out.input_cost, out.output_cost);
        }
        Cmd::Phi { lib, corpus, out } => {
            pipeline::set_workers(cfg.workers);
            let lib = load_lib(Some(&lib))?;
            let scenes = load_corpus(&corpus)?;
            let r = pipeline::phi(&lib, &scenes, &cfg)?;
            if let Some(o) = out {
                pipeline::write_programs(&o, &r.state, &scenes)?;
            }
            println!(
                "{}",
                serde_json::json!({"f": r.f, "mean_calls": r.mean_calls, "violations": r.soundness.violations})
            );
        }
        Cmd::Render { corpus, index, expr, lib, out } => {
            let svg = match (corpus, expr) {
                (Some(c), None) => {
                    let scenes = load_corpus(&c)?;
                    let s = scenes
                        .get(index)
                        .ok_or_else(|| anyhow::anyhow!("corpus has {} scenes", scenes.len()))
                        .map_err(fail(Category::Input))?;
                    render_scene(&s.prims)
                }
                (None, Some(text)) => {
                    let lib = load_lib(lib.as_deref())?;
                    let e = parse_expr(&text, &lib).context("parsing expression").map_err(fail(Category::Input))?;
                    execute(&e, &lib).context("executing expression").map_err(fail(Category::Input))?;
                    render_expr(&e, &lib).context("rendering").map_err(fail(Category::Input))?
                }
                _ => return Err(fail(Category::Config)(anyhow::anyhow!("give exactly one of --corpus or --expr"))),
            };
            write(&out, &svg)?;
        }
        Cmd::BenchRewrites { params, timeout, max_nodes } => {
            let reg = scheme_registry();
            println!("{:>8} {:>12} {:>12}", "params", "conditional", "naive");
            for n in params {
                if n < 4 || n % 4 != 0 {
                    return Err(fail(Category::Config)(anyhow::anyhow!("param counts must be multiples of 4")));
                }
                let cells: Vec<_> = ["conditional", "naive"]
                    .iter()
                    .map(|s| {
                        let scheme = reg.get(s).expect("registered");
                        bench_cell(n, scheme.as_ref(), Duration::from_secs_f64(timeout), max_nodes)
                    })
                    .collect();
                println!("{:>8} {:>12} {:>12}", n, cells[0].display(), cells[1].display());
            }
        }
        Cmd::Report { dir } => {
            let trace = read_trace(&dir.join("f_trace.csv"))?;
            let path = dir.join("summary.json");
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(fail(Category::Io))?;
            let s: RunSummary = serde_json::from_str(&text).context("parsing summary").map_err(fail(Category::Input))?;
            println!("scenes {}  rounds {}  time {:.1}s", s.scenes, s.rounds, s.seconds);
            println!("F naive {:.4}  final {:.4}  reduction {:.1}%", s.naive_f, s.final_f, 100.0 * s.reduction);
            println!("accepted {}  soundness violations {}", s.accepted, s.soundness.violations);
            println!("library:");
            for a in &s.library {
                println!("  {a}");
            }
            println!("trace:");
            for r in &trace {
                println!("  r{} {:<10} {:.4}  |L|={}", r.round, r.phase, r.f, r.library_size);
            }
        }
    }
    Ok(())
}
