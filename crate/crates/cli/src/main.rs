//! `edgebatch` — train, evaluate, sweep and replay schedulers on the
//! simulated edge inference platform.
//!
//! Configuration comes from a TOML file (see `configs/`); flags override
//! file values. Every run is fully determined by (config, checkpoint,
//! seed). Errors exit nonzero with a single machine-parsable line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use edgebatch::config::{RunConfig, SchedulerKind};
use edgebatch::runs;

#[derive(Parser)]
#[command(name = "edgebatch", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Run configuration file (TOML). Defaults to the built-in toy config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Scheduler: sac | static | edf | ga.
    #[arg(long)]
    scheduler: Option<String>,
    /// Evaluation slots; overrides the config file.
    #[arg(long)]
    slots: Option<u64>,
    /// Agent checkpoint (sac evaluation / resume).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory; overrides the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Admission predictor: on | off.
    #[arg(long)]
    predictor: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the soft actor-critic scheduler.
    Train(CommonOpts),
    /// Evaluate the configured scheduler greedily.
    Evaluate(CommonOpts),
    /// Exhaustive (b, m_c) grid sweep per model.
    Sweep(CommonOpts),
    /// Deterministic replay: evaluate and export the consumed trace.
    Replay(CommonOpts),
}

fn load_config(opts: &CommonOpts) -> anyhow::Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::toy(0),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = Some(seed);
    }
    if let Some(s) = &opts.scheduler {
        cfg.scheduler = s.parse::<SchedulerKind>()?;
    }
    if let Some(slots) = opts.slots {
        cfg.slots = slots;
    }
    if let Some(out) = &opts.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    match opts.predictor.as_deref() {
        Some("on") => cfg.predictor = true,
        Some("off") => cfg.predictor = false,
        Some(other) => anyhow::bail!("error: field=predictor expected on|off, got {other}"),
        None => {}
    }
    Ok(cfg)
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(opts) => {
            let cfg = load_config(opts)?;
            let arts = runs::cmd_train(&cfg, opts.checkpoint.as_deref())?;
            if let Some(summary) = &arts.summary {
                println!(
                    "trained: episodes={} mean_utility={:.4} violation_rate={:.4} out={}",
                    cfg.episodes,
                    summary.mean_utility,
                    summary.violation_rate,
                    arts.out_dir.display()
                );
            } else {
                println!("trained: out={}", arts.out_dir.display());
            }
        }
        Command::Evaluate(opts) => {
            let cfg = load_config(opts)?;
            let arts = runs::cmd_evaluate(&cfg, opts.checkpoint.as_deref())?;
            match &arts.summary {
                Some(s) => println!(
                    "evaluated: slots={} mean_utility={:.4} mean_latency_ms={:.3} violation_rate={:.4} out={}",
                    s.slots,
                    s.mean_utility,
                    s.mean_latency_ms,
                    s.violation_rate,
                    arts.out_dir.display()
                ),
                None => println!("evaluated: no activity; out={}", arts.out_dir.display()),
            }
        }
        Command::Sweep(opts) => {
            let cfg = load_config(opts)?;
            let (arts, result) = runs::cmd_sweep(&cfg)?;
            for (i, (b, m_c)) in result.best.iter().enumerate() {
                let name = result
                    .table
                    .iter()
                    .find(|r| r.b == *b && r.m_c == *m_c)
                    .map(|r| r.model.clone());
                let _ = name;
                println!("best[{i}]: b={b} m_c={m_c}");
            }
            println!("sweep: {} grid points; out={}", result.table.len(), arts.out_dir.display());
        }
        Command::Replay(opts) => {
            let cfg = load_config(opts)?;
            let arts = runs::cmd_replay(&cfg, opts.checkpoint.as_deref())?;
            println!("replayed: out={}", arts.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
