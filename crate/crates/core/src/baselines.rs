//! Comparison schedulers: the exhaustive static sweep (also the oracle the
//! learned scheduler is graded against), an EDF batcher, and a genetic
//! optimizer over static configurations. All of them run through the same
//! simulator and utility as the learned scheduler.

use serde::{Deserialize, Serialize};

use crate::config::GaParams;
use crate::env::{run_policy, static_decisions, Decision, PlatformSim};
use crate::profiler::aggregate;
use crate::sacsched::{Action, BATCH_GRID, CONCURRENCY_MAX, N_ACTIONS};
use crate::simcore::{batch_inference_time, PlatformSpec};
use crate::time::ms_to_us;
use crate::workload::{ArrivalProcess, Catalog};
use crate::{Error, Result};

/// Mean utility reported for a grid point that never dispatched anything.
const NO_ACTIVITY_UTILITY: f64 = -10.0;

/// One sweep measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub model: String,
    pub b: u32,
    pub m_c: u32,
    pub mean_utility: f64,
    pub violation_rate: f64,
    pub overflow_fraction: f64,
}

/// Result of [`static_sweep`]: the per-model argmax and the full table.
#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Best (b, m_c) per catalog model, lowest-lexicographic on ties.
    pub best: Vec<(u32, u32)>,
    pub table: Vec<SweepRecord>,
}

/// Horizon given to sweep and fitness simulations; long enough that slots,
/// not the trace, bound every run.
const SIM_HORIZON_SECS: f64 = 1e7;

fn run_static_point(
    catalog: &Catalog,
    spec: &PlatformSpec,
    proc: &ArrivalProcess,
    config: &[(u32, u32)],
    slots: u64,
) -> Result<(f64, f64, f64)> {
    let mut sim = PlatformSim::new(catalog.clone(), spec.clone(), proc.clone())?;
    run_policy(&mut sim, None, slots, |sim, _| static_decisions(config, sim))?;
    let records = sim.records();
    if records.is_empty() {
        return Ok((NO_ACTIVITY_UTILITY, 0.0, 0.0));
    }
    let summary = aggregate(records)?;
    let overflow_fraction =
        records.iter().filter(|r| r.overflow).count() as f64 / records.len() as f64;
    Ok((summary.mean_utility, summary.violation_rate, overflow_fraction))
}

/// Evaluate every (b, m_c) for every model independently: each model runs
/// alone on the platform at its share of the arrival rate, with the same
/// seed for every grid point. Ties resolve to the lowest (b, m_c).
pub fn static_sweep(
    catalog: &Catalog,
    spec: &PlatformSpec,
    rate: f64,
    mix: &[f64],
    seed: u64,
    slots: u64,
) -> Result<SweepResult> {
    let mut table = Vec::with_capacity(catalog.len() * N_ACTIONS);
    let mut best = Vec::with_capacity(catalog.len());
    for (model, profile) in catalog.profiles().iter().enumerate() {
        let model_rate = rate * mix.get(model).copied().unwrap_or(0.0);
        let sub_catalog = Catalog::new(vec![profile.clone()])?;
        let mut best_point = (BATCH_GRID[0], 1u32);
        let mut best_utility = f64::NEG_INFINITY;
        if model_rate <= 0.0 {
            best.push(best_point);
            continue;
        }
        let proc = ArrivalProcess {
            rate: model_rate,
            mix: vec![1.0],
            seed,
            horizon_secs: SIM_HORIZON_SECS,
        };
        for b in BATCH_GRID {
            for m_c in 1..=CONCURRENCY_MAX {
                let (mean_utility, violation_rate, overflow_fraction) =
                    run_static_point(&sub_catalog, spec, &proc, &[(b, m_c)], slots)?;
                if mean_utility > best_utility {
                    best_utility = mean_utility;
                    best_point = (b, m_c);
                }
                table.push(SweepRecord {
                    model: profile.name.clone(),
                    b,
                    m_c,
                    mean_utility,
                    violation_rate,
                    overflow_fraction,
                });
            }
        }
        best.push(best_point);
    }
    Ok(SweepResult { best, table })
}

/// EDF decision rule: serve the queue whose head deadline is earliest with
/// a single m_c = 1 batch, sized to the largest grid batch predicted (at
/// factor 1) to still meet that head deadline.
pub fn edf_decisions(sim: &PlatformSim) -> Vec<Option<Decision>> {
    let now = sim.clock().now_us;
    let chosen = sim
        .queues()
        .iter()
        .enumerate()
        .filter_map(|(m, q)| q.head_deadline_us().map(|d| (d, m)))
        .min();
    let Some((_, model)) = chosen else {
        return vec![None; sim.queues().len()];
    };
    let queue = &sim.queues()[model];
    let head = &queue.pending()[0];
    let profile = sim.catalog().profile(model);
    let overhead = sim.spec().overhead_us();
    let waited = now - head.arrival_us;
    let mut b = 1u32;
    for candidate in BATCH_GRID {
        let t_m = ms_to_us(batch_inference_time(profile, candidate, 1.0));
        if waited + overhead + t_m <= head.slo_us() {
            b = candidate;
        }
    }
    let b = b.min(queue.len() as u32).max(1);
    // Snap down to the grid (queue lengths between grid points).
    let b = BATCH_GRID
        .iter()
        .rev()
        .find(|g| **g <= b)
        .copied()
        .unwrap_or(1);
    let mut decisions = vec![None; sim.queues().len()];
    let flat = Action::encode(b, 1).expect("grid point");
    decisions[model] = Some(Decision {
        action: Action::decode(model, flat),
        max_batches: Some(1),
    });
    decisions
}

/// A population member: one flat action index per model.
type Genome = Vec<usize>;

fn genome_to_config(genome: &Genome) -> Vec<(u32, u32)> {
    genome
        .iter()
        .map(|flat| {
            let a = Action::decode(0, *flat);
            (a.b, a.m_c)
        })
        .collect()
}

/// Best-of-generation trace from [`ga_optimize`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaHistory {
    pub best_fitness: Vec<f64>,
}

/// Genetic search over static configurations: tournament selection (k=2),
/// single-point crossover on the per-model gene vector, per-gene resampling
/// mutation, elitism of one. Fitness is the mean utility of a fixed-seed
/// simulation, so evaluation is deterministic.
pub fn ga_optimize(
    catalog: &Catalog,
    spec: &PlatformSpec,
    rate: f64,
    mix: &[f64],
    seed: u64,
    params: &GaParams,
) -> Result<(Vec<(u32, u32)>, GaHistory)> {
    if params.population < 4 || params.population % 2 != 0 {
        return Err(Error::InvalidPopulation(params.population));
    }
    let mut rng = crate::rng::stream(seed, "ga");
    use rand::Rng;

    let n_genes = catalog.len();
    let proc = ArrivalProcess {
        rate,
        mix: mix.to_vec(),
        seed,
        horizon_secs: SIM_HORIZON_SECS,
    };
    let fitness = |genome: &Genome| -> Result<f64> {
        let config = genome_to_config(genome);
        let (mean_utility, _, _) =
            run_static_point(catalog, spec, &proc, &config, params.fitness_slots)?;
        Ok(mean_utility)
    };

    let mut population: Vec<Genome> = (0..params.population)
        .map(|_| (0..n_genes).map(|_| rng.gen_range(0..N_ACTIONS)).collect())
        .collect();
    let mut scores: Vec<f64> = population
        .iter()
        .map(|g| fitness(g))
        .collect::<Result<_>>()?;
    let mut history = GaHistory { best_fitness: Vec::new() };

    for _ in 0..params.generations {
        let elite_idx = argmax(&scores);
        history.best_fitness.push(scores[elite_idx]);

        let mut next: Vec<Genome> = vec![population[elite_idx].clone()];
        while next.len() < params.population {
            let p1 = tournament(&scores, &mut rng);
            let p2 = tournament(&scores, &mut rng);
            let cut = rng.gen_range(0..n_genes.max(1));
            let mut child: Genome = population[p1][..cut]
                .iter()
                .chain(population[p2][cut..].iter())
                .copied()
                .collect();
            for gene in child.iter_mut() {
                if rng.gen::<f64>() < params.mutation_rate {
                    *gene = rng.gen_range(0..N_ACTIONS);
                }
            }
            next.push(child);
        }
        population = next;
        scores = population
            .iter()
            .map(|g| fitness(g))
            .collect::<Result<_>>()?;
    }
    let best_idx = argmax(&scores);
    history.best_fitness.push(scores[best_idx]);
    Ok((genome_to_config(&population[best_idx]), history))
}

fn tournament<R: rand::Rng>(scores: &[f64], rng: &mut R) -> usize {
    let a = rng.gen_range(0..scores.len());
    let b = rng.gen_range(0..scores.len());
    if scores[a] >= scores[b] {
        a
    } else {
        b
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}
