//! The simulated serving loop: per-model queues fed by a Poisson arrival
//! stream, slot-by-slot execution through [`crate::simcore`], reward and
//! metric bookkeeping, and the state encoding consumed by the scheduler.
//!
//! A slot is one scheduling round: arrivals up to the clock are enqueued,
//! every model with pending work may receive one (b, m_c) decision, the
//! queue drains into batches of `b` that execute on `m_c` instances, and
//! the clock advances to the latest completion.

use serde::{Deserialize, Serialize};

use crate::batching::ModelQueue;
use crate::interference::{predictor_features, Predictor, PredictorSample};
use crate::profiler::{utility, SlotRecord, OVERFLOW_PENALTY, UTILITY_CLIP};
use crate::sacsched::{Action, CONCURRENCY_MAX};
use crate::simcore::{execute_slot, Dispatch, EventRecord, PlatformSpec, SimClock};
use crate::time::Micros;
use crate::workload::{ArrivalGen, ArrivalProcess, Catalog, Request};
use crate::Result;

/// Queue length is clipped at this value in the state encoding.
pub const QLEN_CLIP: f64 = 64.0;
/// Clock advance for a slot in which nothing executed, µs.
pub const IDLE_TICK_US: Micros = 1_000;
/// Most batches one decision may pull in a single slot. Leftovers stay
/// queued for the next slot; without this bound an under-provisioned
/// action makes slot durations grow without limit.
pub const DRAIN_CAP: u32 = 64;

/// One model's decision for a slot. By default the queue drains into up to
/// [`DRAIN_CAP`] batches (batches beyond `m_c` serialize); a scheduler may
/// cap the pull further.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    pub max_batches: Option<u32>,
}

impl From<Action> for Decision {
    fn from(action: Action) -> Self {
        Decision { action, max_batches: None }
    }
}

/// Per-model result of one committed slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSlotOutcome {
    pub action: Action,
    /// Requests dispatched (executed + dropped).
    pub total: u64,
    pub executed: u64,
    pub violations: u64,
    /// True when any of the model's pools was rejected for memory.
    pub overflowed: bool,
    pub reward: f64,
    /// Mean end-to-end latency over executed requests, ms (0 when none).
    pub mean_latency_ms: f64,
    pub slo_sum_ms: f64,
    /// Slot budget `slo_sum / m_c`, ms.
    pub slot_budget_ms: f64,
    pub throughput_rps: f64,
}

/// Everything a driver learns from one committed slot.
#[derive(Debug, Clone)]
pub struct SlotResult {
    pub slot_index: u64,
    pub per_model: Vec<Option<ModelSlotOutcome>>,
    pub mem_util: f64,
    pub active_instances: u32,
    pub any_executed: bool,
    pub predictor_samples: Vec<PredictorSample>,
}

impl SlotResult {
    /// Mean reward over the models that acted this slot.
    pub fn mean_reward(&self) -> Option<f64> {
        let rewards: Vec<f64> = self
            .per_model
            .iter()
            .flatten()
            .map(|o| o.reward)
            .collect();
        if rewards.is_empty() {
            None
        } else {
            Some(rewards.iter().sum::<f64>() / rewards.len() as f64)
        }
    }
}

/// Deterministic single-platform simulation.
pub struct PlatformSim {
    catalog: Catalog,
    spec: PlatformSpec,
    proc: ArrivalProcess,
    queues: Vec<ModelQueue>,
    clock: SimClock,
    arrivals: ArrivalGen,
    pending_arrival: Option<Request>,
    episode: u64,
    slot_index: u64,
    // Platform view exposed to the next slot's states and admission checks.
    last_mem_util: f64,
    last_active_frac: f64,
    last_utility: f64,
    // Conservation ledger.
    generated: u64,
    executed: u64,
    dropped: u64,
    records: Vec<SlotRecord>,
    events: Vec<EventRecord>,
    max_slo_ms: f64,
    max_input_dim: f64,
}

impl PlatformSim {
    pub fn new(catalog: Catalog, spec: PlatformSpec, proc: ArrivalProcess) -> Result<Self> {
        let rng = crate::rng::indexed_stream(proc.seed, "arrivals", 0);
        let arrivals = ArrivalGen::new(&proc, &catalog, rng)?;
        let queues = catalog
            .profiles()
            .iter()
            .enumerate()
            .map(|(i, p)| ModelQueue::new(i, &p.name, p.slo_ms))
            .collect();
        let max_slo_ms = catalog.max_slo_ms();
        let max_input_dim = catalog.max_input_dim() as f64;
        Ok(PlatformSim {
            catalog,
            spec,
            proc,
            queues,
            clock: SimClock::default(),
            arrivals,
            pending_arrival: None,
            episode: 0,
            slot_index: 0,
            last_mem_util: 0.0,
            last_active_frac: 0.0,
            last_utility: 0.0,
            generated: 0,
            executed: 0,
            dropped: 0,
            records: Vec::new(),
            events: Vec::new(),
            max_slo_ms,
            max_input_dim,
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn spec(&self) -> &PlatformSpec {
        &self.spec
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn queues(&self) -> &[ModelQueue] {
        &self.queues
    }

    pub fn slot_index(&self) -> u64 {
        self.slot_index
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    /// Fraction of memory free going into the current slot.
    pub fn mem_avail(&self) -> f64 {
        (1.0 - self.last_mem_util).clamp(0.0, 1.0)
    }

    /// Fraction of instance capacity free going into the current slot.
    pub fn compute_avail(&self) -> f64 {
        (1.0 - self.last_active_frac).clamp(0.0, 1.0)
    }

    /// Length of one model's state block plus the platform features.
    pub fn state_dim(&self) -> usize {
        self.catalog.len() + 7
    }

    /// State for a decision about `model`: the model one-hot, its input
    /// size, SLO and queue features, then memory utilization, active
    /// instances and the previous slot's utility.
    pub fn observe(&self, model: usize) -> Vec<f64> {
        let n = self.catalog.len();
        let mut s = vec![0.0; self.state_dim()];
        s[model] = 1.0;
        let p = self.catalog.profile(model);
        let m = self.queues[model].head_metrics(self.clock.now_us);
        s[n] = p.input_dim as f64 / self.max_input_dim;
        s[n + 1] = p.slo_ms / self.max_slo_ms;
        s[n + 2] = (m.length as f64).min(QLEN_CLIP) / QLEN_CLIP;
        s[n + 3] = (m.head_age_ms / self.max_slo_ms).clamp(0.0, 1.0);
        s[n + 4] = self.last_mem_util.clamp(0.0, 1.0);
        s[n + 5] = self.last_active_frac.clamp(0.0, 1.0);
        s[n + 6] = self.last_utility.clamp(-UTILITY_CLIP, UTILITY_CLIP) / UTILITY_CLIP;
        s
    }

    fn pull_arrivals(&mut self) {
        loop {
            if self.pending_arrival.is_none() {
                self.pending_arrival = self.arrivals.next();
            }
            match &self.pending_arrival {
                Some(r) if r.arrival_us <= self.clock.now_us => {
                    let r = self.pending_arrival.take().unwrap();
                    self.generated += 1;
                    self.queues[r.model]
                        .enqueue(r)
                        .expect("generator labels requests with their queue");
                }
                _ => break,
            }
        }
    }

    /// Start a slot: enqueue due arrivals; if the platform is idle, jump to
    /// the next arrival. Returns one state per model, or `None` when the
    /// trace is exhausted and all queues are empty.
    pub fn begin_slot(&mut self) -> Option<Vec<Vec<f64>>> {
        self.pull_arrivals();
        if self.queues.iter().all(|q| q.is_empty()) {
            if self.pending_arrival.is_none() {
                self.pending_arrival = self.arrivals.next();
            }
            match &self.pending_arrival {
                Some(r) => {
                    self.clock.advance_to(r.arrival_us);
                    self.pull_arrivals();
                }
                None => return None,
            }
        }
        Some((0..self.catalog.len()).map(|m| self.observe(m)).collect())
    }

    /// The requests a decision of batch size `b` would take first.
    pub fn peek_batch(&self, model: usize, b: u32) -> &[Request] {
        let pending = self.queues[model].pending();
        &pending[..pending.len().min(b as usize)]
    }

    /// Execute one slot under `decisions` (one optional decision per model;
    /// models with empty queues are skipped regardless).
    pub fn commit_slot(&mut self, decisions: &[Option<Decision>]) -> Result<SlotResult> {
        debug_assert_eq!(decisions.len(), self.catalog.len());
        let slot_index = self.slot_index;
        self.slot_index += 1;
        let mem_avail = self.mem_avail();
        let compute_avail = self.compute_avail();

        // Drain queues into per-model dispatch groups, catalog order.
        let mut dispatches: Vec<Dispatch> = Vec::new();
        let mut acting: Vec<(usize, Action)> = Vec::new();
        for (model, decision) in decisions.iter().enumerate() {
            let Some(decision) = decision else { continue };
            let action = decision.action;
            debug_assert_eq!(action.model, model);
            if self.queues[model].is_empty() {
                continue;
            }
            acting.push((model, action));
            let cap = decision.max_batches.unwrap_or(DRAIN_CAP).min(DRAIN_CAP);
            let mut formed = 0;
            while !self.queues[model].is_empty() && formed < cap {
                let batch = self.queues[model].form_batch(action.b);
                dispatches.push(Dispatch::new(model, batch, action.b, action.m_c));
                formed += 1;
            }
        }

        if dispatches.is_empty() {
            // Nothing to run; burn a scheduling tick so the loop progresses.
            self.clock.advance_to(self.clock.now_us + IDLE_TICK_US);
            self.last_mem_util = 0.0;
            self.last_active_frac = 0.0;
            self.last_utility = 0.0;
            return Ok(SlotResult {
                slot_index,
                per_model: vec![None; self.catalog.len()],
                mem_util: 0.0,
                active_instances: 0,
                any_executed: false,
                predictor_samples: Vec::new(),
            });
        }

        let dispatch_models: Vec<usize> = dispatches.iter().map(|d| d.model).collect();
        let outcomes = execute_slot(&mut self.clock, dispatches, &self.catalog, &self.spec)?;

        // Slot-level pressure from what was admitted.
        let mem_reserved: f64 = outcomes.iter().map(|o| o.mem_used_mb).sum();
        let mem_util = (mem_reserved / self.spec.mem_capacity_mb).clamp(0.0, 1.0);
        let mut active_instances = 0u32;
        for (model, action) in &acting {
            let admitted = outcomes
                .iter()
                .zip(&dispatch_models)
                .any(|(o, m)| m == model && !o.overflowed);
            if admitted {
                active_instances += action.m_c;
            }
        }

        // Merge outcomes per model and settle rewards.
        let mut per_model: Vec<Option<ModelSlotOutcome>> = vec![None; self.catalog.len()];
        let mut samples = Vec::new();
        let mut reward_sum = 0.0;
        let mut reward_count = 0u32;
        for (model, action) in &acting {
            let mut total = 0u64;
            let mut executed = 0u64;
            let mut violations = 0u64;
            let mut overflowed = false;
            let mut latency_sum_us: i128 = 0;
            let mut slo_sum_ms = 0.0;
            for (o, m) in outcomes.iter().zip(&dispatch_models) {
                if m != model {
                    continue;
                }
                total += o.requests.len() as u64;
                executed += o.executed() as u64;
                violations += o.slo_violations.len() as u64;
                overflowed |= o.overflowed;
                latency_sum_us += o
                    .per_request_latency_us
                    .values()
                    .map(|v| *v as i128)
                    .sum::<i128>();
                slo_sum_ms += o.requests.iter().map(|r| r.slo_ms).sum::<f64>();
            }
            self.executed += executed;
            self.dropped += total - executed;

            let slot_budget_ms = slo_sum_ms / f64::from(action.m_c);
            let mean_latency_ms = if executed > 0 {
                latency_sum_us as f64 / 1000.0 / executed as f64
            } else {
                0.0
            };
            let throughput_rps = if slot_budget_ms > 0.0 {
                executed as f64 / (slot_budget_ms / 1000.0)
            } else {
                0.0
            };
            let reward = if overflowed {
                OVERFLOW_PENALTY
            } else {
                utility(throughput_rps, mean_latency_ms, slo_sum_ms, action.m_c)
                    .expect("executed slot has positive inputs")
            };
            reward_sum += reward;
            reward_count += 1;

            if executed > 0 && !overflowed {
                samples.push(PredictorSample {
                    features: predictor_features(
                        mem_avail,
                        compute_avail,
                        action.b,
                        action.m_c,
                        *model,
                        self.catalog.len(),
                    ),
                    label_ms: mean_latency_ms,
                });
            }

            self.records.push(SlotRecord {
                slot_index,
                model: self.catalog.profile(*model).name.clone(),
                b: action.b,
                m_c: action.m_c,
                throughput: throughput_rps,
                mean_latency: mean_latency_ms,
                utility: reward,
                violations,
                total,
                mem_util,
                overflow: overflowed,
            });
            per_model[*model] = Some(ModelSlotOutcome {
                action: *action,
                total,
                executed,
                violations,
                overflowed,
                reward,
                mean_latency_ms,
                slo_sum_ms,
                slot_budget_ms,
                throughput_rps,
            });
        }

        let any_executed = outcomes.iter().any(|o| !o.overflowed);
        if !any_executed {
            self.clock.advance_to(self.clock.now_us + IDLE_TICK_US);
        }

        for (o, m) in outcomes.iter().zip(&dispatch_models) {
            self.events.push(EventRecord {
                time_us: o.completion_us,
                event_kind: if o.overflowed { "overflow" } else { "exec" }.to_string(),
                model: self.catalog.profile(*m).name.clone(),
                batch_size: o.requests.len(),
                m_c: acting
                    .iter()
                    .find(|(am, _)| am == m)
                    .map(|(_, a)| a.m_c)
                    .unwrap_or(1),
                t_m_us: o.inference_us,
                mem_used_mb: o.mem_used_mb,
                violated_ids: o.slo_violations.iter().copied().collect(),
            });
        }

        self.last_mem_util = mem_util;
        self.last_active_frac =
            f64::from(active_instances) / (self.catalog.len() as f64 * f64::from(CONCURRENCY_MAX));
        self.last_utility = if reward_count > 0 {
            reward_sum / f64::from(reward_count)
        } else {
            0.0
        };

        Ok(SlotResult {
            slot_index,
            per_model,
            mem_util,
            active_instances,
            any_executed,
            predictor_samples: samples,
        })
    }

    /// Fresh episode: empty queues, zeroed clock, a new arrival sub-stream.
    pub fn reset_episode(&mut self, episode: u64) -> Result<()> {
        let rng = crate::rng::indexed_stream(self.proc.seed, "arrivals", episode);
        self.arrivals = ArrivalGen::new(&self.proc, &self.catalog, rng)?;
        self.pending_arrival = None;
        self.episode = episode;
        self.clock = SimClock::default();
        for q in self.queues.iter_mut() {
            let model = q.model();
            let p = self.catalog.profile(model);
            *q = ModelQueue::new(model, &p.name, p.slo_ms);
        }
        self.last_mem_util = 0.0;
        self.last_active_frac = 0.0;
        self.last_utility = 0.0;
        Ok(())
    }

    /// (generated, executed, dropped, still queued).
    pub fn conservation(&self) -> (u64, u64, u64, u64) {
        let queued: u64 = self.queues.iter().map(|q| q.len() as u64).sum();
        (self.generated, self.executed, self.dropped, queued)
    }

    pub fn records(&self) -> &[SlotRecord] {
        &self.records
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn take_records(&mut self) -> Vec<SlotRecord> {
        std::mem::take(&mut self.records)
    }

    pub fn take_events(&mut self) -> Vec<EventRecord> {
        std::mem::take(&mut self.events)
    }
}

/// Wraps a simulation with the optional admission layer so every scheduler
/// shares one slot pipeline: observe, decide, veto, execute, learn labels.
pub struct Driver<'a> {
    pub sim: &'a mut PlatformSim,
    pub predictor: Option<&'a mut Predictor>,
}

impl<'a> Driver<'a> {
    pub fn new(sim: &'a mut PlatformSim, predictor: Option<&'a mut Predictor>) -> Self {
        Driver { sim, predictor }
    }

    /// Run one slot with `decide` supplying raw per-model decisions.
    /// Returns `None` when the trace is exhausted.
    pub fn step<F>(&mut self, decide: F) -> Result<Option<(Vec<Vec<f64>>, SlotResult)>>
    where
        F: FnOnce(&PlatformSim, &[Vec<f64>]) -> Vec<Option<Decision>>,
    {
        let Some(states) = self.sim.begin_slot() else {
            return Ok(None);
        };
        let mut decisions = decide(self.sim, &states);
        if let Some(pred) = self.predictor.as_deref_mut() {
            for decision in decisions.iter_mut() {
                let Some(d) = decision else { continue };
                let model = d.action.model;
                if self.sim.queues()[model].is_empty() {
                    continue;
                }
                let batch = self.sim.peek_batch(model, d.action.b);
                let admit = pred.admission_check(
                    batch,
                    &d.action,
                    self.sim.mem_avail(),
                    self.sim.compute_avail(),
                    self.sim.catalog().len(),
                )?;
                if !admit {
                    let flat = Action::encode(1, 1).expect("(1,1) is on the grid");
                    d.action = Action::decode(model, flat);
                }
            }
        }
        let result = self.sim.commit_slot(&decisions)?;
        if let Some(pred) = self.predictor.as_deref_mut() {
            for sample in &result.predictor_samples {
                pred.observe(sample.clone())?;
            }
        }
        Ok(Some((states, result)))
    }
}

/// Drive `slots` slots of a decision rule; used by evaluation, the static
/// sweep and GA fitness so baselines share the scheduler's exact pipeline.
pub fn run_policy<F>(
    sim: &mut PlatformSim,
    predictor: Option<&mut Predictor>,
    slots: u64,
    mut decide: F,
) -> Result<u64>
where
    F: FnMut(&PlatformSim, &[Vec<f64>]) -> Vec<Option<Decision>>,
{
    let mut driver = Driver::new(sim, predictor);
    let mut ran = 0;
    for _ in 0..slots {
        match driver.step(&mut decide)? {
            Some(_) => ran += 1,
            None => break,
        }
    }
    Ok(ran)
}

/// Decision rule applying a fixed per-model (b, m_c) table.
pub fn static_decisions(config: &[(u32, u32)], sim: &PlatformSim) -> Vec<Option<Decision>> {
    config
        .iter()
        .enumerate()
        .map(|(model, (b, m_c))| {
            if sim.queues()[model].is_empty() {
                None
            } else {
                Action::encode(*b, *m_c)
                    .map(|flat| Decision::from(Action::decode(model, flat)))
            }
        })
        .collect()
}
