use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dagconf::concrete::ConcreteTrace;
use dagconf::config::HarnessConfig;
use dagconf::conftest::{sim_for_model, BatchOutcome, ConfReport, Harness, StopReason};
use dagconf::mapping::{abstract_trace, replay_check};
use dagconf::metrics::MetricsRecord;
use dagconf::sim::{RunSummary, Simulation};
use dagconf::trace::{Trace, TraceStore};
use dagconf::violations::ViolationId;

/// Conformance testing of a DAG consensus implementation against its model.
#[derive(Parser)]
#[command(name = "dagconf", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Harness configuration (TOML); defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; also the simulator seed for sim-run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Activate one historic violation, V1..V10.
    #[arg(long, global = true)]
    seeded_violation: Option<ViolationId>,
    /// Trace-hash store (FMDSE_STORE takes precedence).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Output directory, or output file for abstract and metrics.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run grid cells and replays on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Args, Clone, Copy)]
struct Grid {
    /// Fuzz the first P configured parameters with K values each.
    #[arg(long, value_name = "P/K", value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
}

#[derive(Args, Clone, Copy)]
struct Walks {
    /// Random walks per Workflow II batch.
    #[arg(short = 'n', long)]
    walks: Option<usize>,
    /// Maximum walk depth.
    #[arg(short = 'd', long)]
    depth: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the simulator once; writes trace, run summary and metrics.
    SimRun,
    /// One Workflow I batch: grid-fuzz the simulator.
    FuzzImpl {
        #[command(flatten)]
        grid: Grid,
        #[arg(long, default_value_t = 0)]
        iteration: usize,
    },
    /// One Workflow II batch: random walks of the model, replayed.
    FuzzModel {
        #[command(flatten)]
        walks: Walks,
        #[arg(long, default_value_t = 0)]
        iteration: usize,
    },
    /// Alternate both workflows until a violation, exhaustion or the budget.
    Conftest {
        #[arg(long)]
        budget: Option<usize>,
        /// Record every violation and keep going.
        #[arg(long)]
        all_violations: bool,
        #[command(flatten)]
        grid: Grid,
        #[command(flatten)]
        walks: Walks,
    },
    /// Replay a model trace in the simulator.
    Replay { trace: PathBuf },
    /// Abstract a concrete simulator trace into a model trace.
    Abstract { concrete: PathBuf },
    /// Recompute metrics from a run summary.
    Metrics { run: PathBuf },
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (p, k) = s.split_once('/').ok_or("expected P/K, e.g. 3/2")?;
    let p = p.parse().map_err(|_| format!("bad parameter count {p:?}"))?;
    let k: usize = k.parse().map_err(|_| format!("bad value count {k:?}"))?;
    if k == 0 {
        return Err("K must be positive".into());
    }
    Ok((p, k))
}

fn load_config(c: &Common) -> Result<HarnessConfig> {
    let mut cfg = match &c.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.workflow.seed = s;
        cfg.sim.seed = s;
    }
    if let Some(v) = c.seeded_violation {
        cfg.seeded_violation = Some(v);
    }
    if let Some(s) = &c.store {
        cfg.workflow.store = Some(s.clone());
    }
    if c.sequential {
        cfg.workflow.parallel = false;
    }
    Ok(cfg)
}

fn apply_grid(cfg: &mut HarnessConfig, g: Grid) -> Result<()> {
    if let Some((p, k)) = g.grid {
        if p > cfg.fuzz.parameters.len() {
            bail!("--grid {p}/{k}: only {} parameters are configured for fuzzing", cfg.fuzz.parameters.len());
        }
        cfg.fuzz.parameters.truncate(p);
        cfg.workflow.grid_values = k;
    }
    Ok(())
}

fn apply_walks(cfg: &mut HarnessConfig, w: Walks) {
    if let Some(n) = w.walks {
        cfg.workflow.walks = n;
    }
    if let Some(d) = w.depth {
        cfg.workflow.depth = d;
    }
}

fn out_dir(c: &Common, default: &str) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn open_store(cfg: &HarnessConfig) -> Result<TraceStore> {
    Ok(TraceStore::open_default(cfg.workflow.store.as_deref())?)
}

/// Writes a single-batch result as a report, with the new traces next to it.
fn batch_report(h: &Harness, out: BatchOutcome, dir: &Path, store: &TraceStore) -> Result<u8> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, t) in out.traces.iter().enumerate() {
        t.save(&dir.join(format!("trace-{i}.jsonl")))?;
    }
    let stop = if !out.violations.is_empty() {
        StopReason::Violation
    } else if out.summary.new_traces == 0 {
        StopReason::Exhausted
    } else {
        StopReason::Budget
    };
    let mut report = ConfReport {
        seeded_violation: h.cfg.seeded_violation.map(|v| v.to_string()),
        batches: vec![out.summary],
        violations: out.violations,
        stop,
        stored: store.len(),
    };
    finish(&mut report, dir)
}

fn finish(report: &mut ConfReport, dir: &Path) -> Result<u8> {
    report.write(dir)?;
    for v in &report.violations {
        println!(
            "{} violation ({:?} workflow, iteration {}) at step {}: {}",
            v.classification,
            v.workflow,
            v.iteration,
            v.step.map_or("init".to_string(), |s| s.to_string()),
            v.reason
        );
        println!("  fix site: {}", v.fix_site);
    }
    let traces: usize = report.batches.iter().map(|b| b.new_traces).sum();
    println!(
        "{} batch(es), {traces} new trace(s), {} violation(s), stopped: {:?}; report in {}",
        report.batches.len(),
        report.violations.len(),
        report.stop,
        dir.join("report.json").display()
    );
    Ok(report.exit_code() as u8)
}

fn run(cli: Cli) -> Result<u8> {
    let c = &cli.common;
    let mut cfg = load_config(c)?;
    match cli.cmd {
        Cmd::SimRun => {
            let dir = out_dir(c, "sim-run");
            let (_, flags) = cfg.flags();
            let run = Simulation::run(&cfg.sim, flags)?;
            let metrics = MetricsRecord::compute(&run.summary);
            write(&dir.join("trace.jsonl"), run.trace.to_jsonl())?;
            write(&dir.join("run.json"), run.summary.to_json())?;
            write(&dir.join("metrics.json"), metrics.to_json(&cfg.metrics.enabled))?;
            println!(
                "{} concrete steps, {} vertices, round {}; output in {}",
                run.trace.steps.len(),
                metrics.vertex_count,
                metrics.round_reached,
                dir.display()
            );
            Ok(0)
        }
        Cmd::FuzzImpl { grid, iteration } => {
            apply_grid(&mut cfg, grid)?;
            let h = Harness::new(cfg)?;
            let mut store = open_store(&h.cfg)?;
            let out = h.workflow_i(iteration, &mut store)?;
            batch_report(&h, out, &out_dir(c, "fuzz-impl"), &store)
        }
        Cmd::FuzzModel { walks, iteration } => {
            apply_walks(&mut cfg, walks);
            let h = Harness::new(cfg)?;
            let mut store = open_store(&h.cfg)?;
            let out = h.workflow_ii(iteration, &mut store)?;
            batch_report(&h, out, &out_dir(c, "fuzz-model"), &store)
        }
        Cmd::Conftest {
            budget,
            all_violations,
            grid,
            walks,
        } => {
            if let Some(b) = budget {
                cfg.workflow.budget = b;
            }
            apply_grid(&mut cfg, grid)?;
            apply_walks(&mut cfg, walks);
            let mut h = Harness::new(cfg)?;
            h.all_violations = all_violations;
            let mut store = open_store(&h.cfg)?;
            let mut report = h.conf_test(&mut store)?;
            finish(&mut report, &out_dir(c, "conftest"))
        }
        Cmd::Replay { trace } => {
            let t = Trace::load(&trace)?;
            let h = Harness::new(cfg)?;
            let model = h.cfg.model_config()?;
            let sim = sim_for_model(&model, &h.cfg.sim)?;
            let r = replay_check(&t, &model, &sim, h.sim_flags(), h.mapper())?;
            let dir = out_dir(c, "replay");
            write(&dir.join("replay.concrete.jsonl"), r.concrete.to_jsonl())?;
            match r.divergence {
                None => {
                    println!("replayed all {} steps", t.steps.len());
                    Ok(0)
                }
                Some(d) => {
                    write(&dir.join("divergence.json"), serde_json::to_string_pretty(&d)? + "\n")?;
                    println!(
                        "divergence {:?} at step {}: {}",
                        d.kind,
                        d.step.map_or("init".to_string(), |s| s.to_string()),
                        d.detail
                    );
                    for line in &d.diff {
                        println!("  {line}");
                    }
                    Ok(1)
                }
            }
        }
        Cmd::Abstract { concrete } => {
            let ct = ConcreteTrace::load(&concrete)?;
            let mapper = cfg.mapping.compile()?;
            let t = abstract_trace(&ct, &mapper)?;
            match &c.out {
                Some(p) => write(p, t.to_jsonl())?,
                None => print!("{}", t.to_jsonl()),
            }
            Ok(0)
        }
        Cmd::Metrics { run } => {
            let summary = RunSummary::load(&run).with_context(|| format!("reading {}", run.display()))?;
            let json = MetricsRecord::compute(&summary).to_json(&cfg.metrics.enabled);
            match &c.out {
                Some(p) => write(p, json)?,
                None => print!("{json}"),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
