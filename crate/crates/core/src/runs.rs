//! End-to-end run operations behind the CLI subcommands: training,
//! evaluation, the grid sweep and deterministic replay. Every operation is
//! a pure function of (config, checkpoint, seed) to output bytes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::baselines::{edf_decisions, ga_optimize, static_sweep, SweepResult};
use crate::config::{RunConfig, SchedulerKind};
use crate::env::{run_policy, static_decisions, PlatformSim};
use crate::interference::Predictor;
use crate::profiler::{aggregate, Summary};
use crate::sacsched::{sac_decisions, train_episode, SacAgent, SelectMode, TrainLogRecord};
use crate::workload::{generate_arrivals, ArrivalProcess, TraceRecord};
use crate::{Error, Result};

/// Arrival horizon handed to open-ended runs; slots, not the trace, bound
/// them.
pub const RUN_HORIZON_SECS: f64 = 1e7;

/// Serialize records as line-delimited JSON.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, item: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(item)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Artifact paths produced by a run.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub out_dir: PathBuf,
    pub summary: Option<Summary>,
}

fn new_sim(cfg: &RunConfig) -> Result<(PlatformSim, crate::config::ResolvedConfig)> {
    let resolved = cfg.resolve()?;
    let proc = resolved.arrival_process(RUN_HORIZON_SECS);
    let sim = PlatformSim::new(resolved.catalog.clone(), resolved.platform.clone(), proc)?;
    Ok((sim, resolved))
}

fn catalog_names(resolved: &crate::config::ResolvedConfig) -> Vec<String> {
    resolved
        .catalog
        .profiles()
        .iter()
        .map(|p| p.name.clone())
        .collect()
}

/// Train the soft actor-critic scheduler; writes the agent checkpoint, the
/// training log, per-slot metrics and a summary. Resumable: when
/// `resume_from` is given, training continues the checkpoint's step and
/// episode counters.
pub fn cmd_train(cfg: &RunConfig, resume_from: Option<&Path>) -> Result<Artifacts> {
    if cfg.scheduler != SchedulerKind::Sac {
        return Err(Error::config("scheduler", "train requires scheduler = sac"));
    }
    let (mut sim, resolved) = new_sim(cfg)?;
    let names = catalog_names(&resolved);
    let mut agent = match resume_from {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::config("checkpoint", format!("{}: {e}", path.display())))?;
            let agent = SacAgent::from_checkpoint(&text, &names)?;
            if agent.state_dim() != sim.state_dim() {
                return Err(Error::DimensionMismatch {
                    expected: sim.state_dim(),
                    got: agent.state_dim(),
                });
            }
            agent
        }
        None => SacAgent::new(sim.state_dim(), &cfg.sac, resolved.seed),
    };
    let mut predictor = if cfg.predictor {
        Some(Predictor::new(
            resolved.catalog.len(),
            &cfg.predictor_params,
            resolved.seed,
        ))
    } else {
        None
    };

    let mut action_rng = crate::rng::stream(resolved.seed, "action");
    let mut update_rng = crate::rng::stream(resolved.seed, "replay");
    let mut log: Vec<TrainLogRecord> = Vec::new();
    let first_episode = agent.episodes_done;
    for episode in first_episode..first_episode + cfg.episodes {
        sim.reset_episode(episode)?;
        let stats = train_episode(
            &mut agent,
            &mut sim,
            predictor.as_mut(),
            cfg.sac.episode_slots,
            &mut action_rng,
            &mut update_rng,
        )?;
        log.extend(stats.log);
    }

    let out = PathBuf::from(&cfg.out);
    write_text(&out.join("agent.json"), &agent.to_checkpoint(&names))?;
    if let Some(p) = &predictor {
        write_text(&out.join("predictor.json"), &p.to_checkpoint())?;
    }
    write_jsonl(&out.join("training.jsonl"), &log)?;
    let records = sim.take_records();
    write_jsonl(&out.join("metrics.jsonl"), &records)?;
    let summary = aggregate(&records).ok();
    if let Some(s) = &summary {
        write_json(&out.join("summary.json"), s)?;
    }
    Ok(Artifacts { out_dir: out, summary })
}

/// Greedy evaluation of the configured scheduler over `cfg.slots` slots;
/// writes per-slot metrics, the event log and a summary.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Artifacts> {
    let (mut sim, resolved) = new_sim(cfg)?;
    let names = catalog_names(&resolved);
    let mut predictor = if cfg.predictor {
        Some(Predictor::new(
            resolved.catalog.len(),
            &cfg.predictor_params,
            resolved.seed,
        ))
    } else {
        None
    };

    match cfg.scheduler {
        SchedulerKind::Sac => {
            let path = checkpoint.ok_or_else(|| {
                Error::config("checkpoint", "required when scheduler = sac")
            })?;
            let text = fs::read_to_string(path)
                .map_err(|e| Error::config("checkpoint", format!("{}: {e}", path.display())))?;
            let agent = SacAgent::from_checkpoint(&text, &names)?;
            if agent.state_dim() != sim.state_dim() {
                return Err(Error::DimensionMismatch {
                    expected: sim.state_dim(),
                    got: agent.state_dim(),
                });
            }
            let mut rng = crate::rng::stream(resolved.seed, "eval");
            run_policy(&mut sim, predictor.as_mut(), cfg.slots, |sim, states| {
                sac_decisions(agent_ref(&agent), sim, states, SelectMode::Eval, &mut rng)
                    .expect("checkpoint dimensions validated")
            })?;
        }
        SchedulerKind::Static => {
            let config = resolved.static_config.clone();
            run_policy(&mut sim, predictor.as_mut(), cfg.slots, |sim, _| {
                static_decisions(&config, sim)
            })?;
        }
        SchedulerKind::Edf => {
            run_policy(&mut sim, predictor.as_mut(), cfg.slots, |sim, _| {
                edf_decisions(sim)
            })?;
        }
        SchedulerKind::Ga => {
            let (best, history) = ga_optimize(
                &resolved.catalog,
                &resolved.platform,
                resolved.rate,
                &resolved.mix,
                resolved.seed,
                &cfg.ga,
            )?;
            let out = PathBuf::from(&cfg.out);
            write_json(&out.join("ga_history.json"), &history)?;
            write_json(&out.join("ga_best.json"), &best)?;
            run_policy(&mut sim, predictor.as_mut(), cfg.slots, |sim, _| {
                static_decisions(&best, sim)
            })?;
        }
    }

    let out = PathBuf::from(&cfg.out);
    let records = sim.take_records();
    let events = sim.take_events();
    write_jsonl(&out.join("metrics.jsonl"), &records)?;
    write_jsonl(&out.join("events.jsonl"), &events)?;
    let summary = aggregate(&records).ok();
    if let Some(s) = &summary {
        write_json(&out.join("summary.json"), s)?;
    }
    Ok(Artifacts { out_dir: out, summary })
}

// Borrow helper: the closure lives shorter than the agent, keep it obvious.
fn agent_ref(agent: &SacAgent) -> &SacAgent {
    agent
}

/// Run the exhaustive static sweep and write the grid table.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<(Artifacts, SweepResult)> {
    let resolved = cfg.resolve()?;
    let result = static_sweep(
        &resolved.catalog,
        &resolved.platform,
        resolved.rate,
        &resolved.mix,
        resolved.seed,
        cfg.sweep_slots,
    )?;
    let out = PathBuf::from(&cfg.out);
    write_jsonl(&out.join("sweep.jsonl"), &result.table)?;
    let best: Vec<(String, u32, u32)> = resolved
        .catalog
        .profiles()
        .iter()
        .zip(&result.best)
        .map(|(p, (b, m))| (p.name.clone(), *b, *m))
        .collect();
    write_json(&out.join("sweep_best.json"), &best)?;
    Ok((
        Artifacts { out_dir: out, summary: None },
        result,
    ))
}

/// Deterministic replay: export the arrival trace the run consumes, then
/// evaluate the configured scheduler on it (static/EDF paths only need the
/// config; sac accepts a checkpoint).
pub fn cmd_replay(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Artifacts> {
    let resolved = cfg.resolve()?;
    let artifacts = cmd_evaluate(cfg, checkpoint)?;
    // The evaluation consumed a prefix of the arrival stream; regenerate the
    // same stream up to a horizon derived from the emitted events.
    let events_path = artifacts.out_dir.join("events.jsonl");
    let horizon_us = fs::read_to_string(&events_path)?
        .lines()
        .filter_map(|l| serde_json::from_str::<crate::simcore::EventRecord>(l).ok())
        .map(|e| e.time_us)
        .max()
        .unwrap_or(0);
    let proc = ArrivalProcess {
        horizon_secs: (horizon_us as f64 / 1e6).max(1e-3),
        ..resolved.arrival_process(0.0)
    };
    let trace = generate_arrivals(&proc, &resolved.catalog)?;
    let records: Vec<TraceRecord> = trace
        .iter()
        .map(|r| TraceRecord {
            id: r.id,
            model: resolved.catalog.profile(r.model).name.clone(),
            arrival_us: r.arrival_us,
            slo_ms: r.slo_ms,
        })
        .collect();
    write_jsonl(&artifacts.out_dir.join("trace.jsonl"), &records)?;
    Ok(artifacts)
}
