//! Scratch experiment for baseline-ordering training (not part of the
//! test suite).
use edgebatch::baselines::{edf_decisions, ga_optimize};
use edgebatch::config::{GaParams, RunConfig};
use edgebatch::env::{run_policy, static_decisions, PlatformSim};
use edgebatch::profiler::aggregate;
use edgebatch::sacsched::{sac_decisions, train_episode, SacAgent, SelectMode};

fn eval_mean<F>(cfg: &RunConfig, eval_episode: u64, slots: u64, decide: F) -> f64
where
    F: FnMut(
        &PlatformSim,
        &[Vec<f64>],
    ) -> Vec<Option<edgebatch::env::Decision>>,
{
    let resolved = cfg.resolve().unwrap();
    let mut sim = PlatformSim::new(
        resolved.catalog.clone(),
        resolved.platform.clone(),
        resolved.arrival_process(edgebatch::runs::RUN_HORIZON_SECS),
    )
    .unwrap();
    sim.reset_episode(eval_episode).unwrap();
    run_policy(&mut sim, None, slots, decide).unwrap();
    aggregate(sim.records()).map(|s| s.mean_utility).unwrap_or(-10.0)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let episodes: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let seeds: Vec<u64> = args[2..].iter().filter_map(|s| s.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![201, 202] } else { seeds };
    let ga_params = GaParams {
        population: 16,
        generations: 20,
        mutation_rate: 0.1,
        fitness_slots: 150,
    };
    for seed in seeds {
        let t0 = std::time::Instant::now();
        let mut cfg = RunConfig::default_workload(seed);
        cfg.sac.hidden = vec![64, 32];
        cfg.sac.batch_size = 256;
        cfg.sac.episode_slots = 256;
        let resolved = cfg.resolve().unwrap();
        let mut sim = PlatformSim::new(
            resolved.catalog.clone(),
            resolved.platform.clone(),
            resolved.arrival_process(edgebatch::runs::RUN_HORIZON_SECS),
        )
        .unwrap();
        let mut agent = SacAgent::new(sim.state_dim(), &cfg.sac, seed);
        let mut action_rng = edgebatch::rng::stream(seed, "action");
        let mut update_rng = edgebatch::rng::stream(seed, "replay");
        for ep in 0..episodes {
            sim.reset_episode(ep).unwrap();
            train_episode(&mut agent, &mut sim, None, 256, &mut action_rng, &mut update_rng)
                .unwrap();
        }
        let train_t = t0.elapsed();

        let mut eval_rng = edgebatch::rng::stream(seed, "eval");
        let sac_u = eval_mean(&cfg, 777, 800, |sim, states| {
            sac_decisions(&agent, sim, states, SelectMode::Eval, &mut eval_rng).unwrap()
        });
        let edf_u = eval_mean(&cfg, 777, 800, |sim, _| edf_decisions(sim));
        let (ga_best, _) = ga_optimize(
            &resolved.catalog,
            &resolved.platform,
            resolved.rate,
            &resolved.mix,
            seed,
            &ga_params,
        )
        .unwrap();
        let ga_u = eval_mean(&cfg, 777, 800, |sim, _| static_decisions(&ga_best, sim));
        println!(
            "seed {seed}: sac {sac_u:.3} edf {edf_u:.3} ga {ga_u:.3} (ga_best {ga_best:?}) train {train_t:?} total {:?}",
            t0.elapsed()
        );
    }
}
