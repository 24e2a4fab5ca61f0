//! Run configuration: one structured text file plus flag overrides (flags
//! win). Catalog and platform documents can be file paths or the shipped
//! builtins (`builtin:default`, `builtin:toy`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::simcore::PlatformSpec;
use crate::workload::{load_catalog, ArrivalProcess, Catalog};
use crate::{Error, Result};

pub const DEFAULT_CATALOG_TOML: &str = include_str!("../assets/catalog_default.toml");
pub const DEFAULT_PLATFORM_TOML: &str = include_str!("../assets/platform_default.toml");
pub const TOY_CATALOG_TOML: &str = include_str!("../assets/catalog_toy.toml");
pub const TOY_PLATFORM_TOML: &str = include_str!("../assets/platform_toy.toml");

/// Scheduler selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Sac,
    Static,
    Edf,
    Ga,
}

impl std::str::FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sac" => Ok(SchedulerKind::Sac),
            "static" => Ok(SchedulerKind::Static),
            "edf" => Ok(SchedulerKind::Edf),
            "ga" => Ok(SchedulerKind::Ga),
            other => Err(Error::config("scheduler", format!("unknown scheduler {other}"))),
        }
    }
}

/// Soft actor-critic hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacParams {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    pub alpha_init: f64,
    pub auto_alpha: bool,
    /// Target entropy as a fraction of ln |A|.
    pub target_entropy_factor: f64,
    /// Scheduling slots per training episode.
    pub episode_slots: u64,
}

impl Default for SacParams {
    fn default() -> Self {
        SacParams {
            gamma: 0.99,
            tau: 0.005,
            lr: 1e-3,
            batch_size: 512,
            replay_capacity: 1_000_000,
            hidden: vec![128, 64],
            alpha_init: 1.0,
            auto_alpha: true,
            target_entropy_factor: 0.98,
            episode_slots: 256,
        }
    }
}

/// Genetic-algorithm parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaParams {
    pub population: usize,
    pub generations: u32,
    pub mutation_rate: f64,
    /// Slots per fitness evaluation.
    pub fitness_slots: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population: 16,
            generations: 30,
            mutation_rate: 0.1,
            fitness_slots: 200,
        }
    }
}

/// Interference-predictor parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorParams {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Rolling sample window.
    pub window: usize,
    /// Samples required before the veto can fire.
    pub warmup_samples: usize,
    /// Veto when predicted latency exceeds this fraction of the batch min SLO.
    pub veto_slo_fraction: f64,
}

impl Default for PredictorParams {
    fn default() -> Self {
        PredictorParams {
            hidden: vec![32, 16],
            lr: 1e-3,
            window: 2000,
            warmup_samples: 500,
            veto_slo_fraction: 0.9,
        }
    }
}

/// A full run description as parsed from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Catalog document: a path or `builtin:{default,toy}`.
    pub catalog: String,
    /// Platform document: a path or `builtin:{default,toy}`.
    pub platform: String,
    pub scheduler: SchedulerKind,
    /// Root seed; required (no wall-clock seeding).
    pub seed: Option<u64>,
    /// Aggregate arrival rate, requests/second.
    pub rate: f64,
    /// Per-model arrival weights; uniform when absent.
    #[serde(default)]
    pub mix: BTreeMap<String, f64>,
    /// Evaluation slots.
    pub slots: u64,
    /// Training episodes (sac only).
    #[serde(default = "default_episodes")]
    pub episodes: u64,
    /// Output directory.
    pub out: String,
    #[serde(default)]
    pub predictor: bool,
    #[serde(default)]
    pub sac: SacParams,
    #[serde(default)]
    pub ga: GaParams,
    #[serde(default)]
    pub predictor_params: PredictorParams,
    /// Per-model (b, m_c) for the static scheduler.
    #[serde(default)]
    pub static_config: BTreeMap<String, (u32, u32)>,
    /// Slots per grid point for `sweep`.
    #[serde(default = "default_sweep_slots")]
    pub sweep_slots: u64,
}

fn default_episodes() -> u64 {
    10
}

fn default_sweep_slots() -> u64 {
    400
}

impl RunConfig {
    /// A toy-workload config used by tests and as a quick-start example.
    /// The arrival rate saturates the single model so the feasible grid
    /// points separate cleanly in utility.
    pub fn toy(seed: u64) -> Self {
        RunConfig {
            catalog: "builtin:toy".into(),
            platform: "builtin:toy".into(),
            scheduler: SchedulerKind::Sac,
            seed: Some(seed),
            rate: 300.0,
            mix: BTreeMap::new(),
            slots: 400,
            episodes: 6,
            out: "runs/toy".into(),
            predictor: false,
            sac: SacParams::default(),
            ga: GaParams::default(),
            predictor_params: PredictorParams::default(),
            static_config: BTreeMap::new(),
            sweep_slots: 400,
        }
    }

    /// The shipped six-model default workload.
    pub fn default_workload(seed: u64) -> Self {
        RunConfig {
            catalog: "builtin:default".into(),
            platform: "builtin:default".into(),
            scheduler: SchedulerKind::Sac,
            seed: Some(seed),
            rate: 30.0,
            mix: BTreeMap::new(),
            slots: 1000,
            episodes: 10,
            out: "runs/default".into(),
            predictor: false,
            sac: SacParams::default(),
            ga: GaParams::default(),
            predictor_params: PredictorParams::default(),
            static_config: BTreeMap::new(),
            sweep_slots: 400,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Validate and resolve into the concrete pieces a run needs.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let seed = self
            .seed
            .ok_or_else(|| Error::config("seed", "required; no wall-clock seeding"))?;
        if !(self.rate > 0.0) {
            return Err(Error::config("rate", "must be > 0"));
        }
        if self.slots == 0 {
            return Err(Error::config("slots", "must be >= 1"));
        }
        let catalog = load_source(&self.catalog, "catalog", load_catalog)?;
        let platform = load_source(&self.platform, "platform", |text| {
            let spec: PlatformSpec = toml::from_str(text)?;
            spec.validate()?;
            Ok(spec)
        })?;

        let mix = if self.mix.is_empty() {
            vec![1.0 / catalog.len() as f64; catalog.len()]
        } else {
            let mut mix = vec![0.0; catalog.len()];
            for (name, w) in &self.mix {
                let idx = catalog
                    .index_of(name)
                    .map_err(|_| Error::config("mix", format!("unknown model {name}")))?;
                mix[idx] = *w;
            }
            let total: f64 = mix.iter().sum();
            if total <= 0.0 {
                return Err(Error::config("mix", "weights must sum to a positive value"));
            }
            mix.iter_mut().for_each(|w| *w /= total);
            mix
        };

        let mut static_config = vec![(1u32, 1u32); catalog.len()];
        for (name, bm) in &self.static_config {
            let idx = catalog
                .index_of(name)
                .map_err(|_| Error::config("static", format!("unknown model {name}")))?;
            static_config[idx] = *bm;
        }

        if self.ga.population < 4 || self.ga.population % 2 != 0 {
            return Err(Error::config("ga.population", "must be even and >= 4"));
        }

        Ok(ResolvedConfig {
            catalog,
            platform,
            seed,
            rate: self.rate,
            mix,
            static_config,
        })
    }
}

/// Catalog, platform and arrival pieces resolved from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub catalog: Catalog,
    pub platform: PlatformSpec,
    pub seed: u64,
    pub rate: f64,
    pub mix: Vec<f64>,
    pub static_config: Vec<(u32, u32)>,
}

impl ResolvedConfig {
    pub fn arrival_process(&self, horizon_secs: f64) -> ArrivalProcess {
        ArrivalProcess {
            rate: self.rate,
            mix: self.mix.clone(),
            seed: self.seed,
            horizon_secs,
        }
    }
}

fn load_source<T>(source: &str, field: &str, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
    let text: String = match source {
        "builtin:default" => match field {
            "catalog" => DEFAULT_CATALOG_TOML.to_string(),
            _ => DEFAULT_PLATFORM_TOML.to_string(),
        },
        "builtin:toy" => match field {
            "catalog" => TOY_CATALOG_TOML.to_string(),
            _ => TOY_PLATFORM_TOML.to_string(),
        },
        path => std::fs::read_to_string(path)
            .map_err(|e| Error::config(field, format!("{path}: {e}")))?,
    };
    parse(&text).map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config(field, other.to_string()),
    })
}
