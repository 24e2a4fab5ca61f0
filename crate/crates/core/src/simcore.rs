//! Deterministic execution model of the edge platform: memory ledger,
//! interference-inflated batch latency, concurrent instances, and the
//! per-request latency decomposition
//! `t_r = t_t + t_s + t_w + t_m + t_o` (all integer microseconds).
//!
//! A slot executes a list of dispatches. Each dispatch is one batch bound
//! to a model's instance pool of `m_c` concurrent instances; same-model
//! batches beyond the pool width serialize. Memory for a pool is reserved
//! up front from the configured batch size (buffers are sized for `b`, not
//! for the batch that happens to be in flight), so a pool that cannot fit
//! is rejected atomically and its requests are dropped and penalized.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::time::{ms_to_us, Micros};
use crate::workload::{Catalog, ModelProfile, Request};
use crate::{Error, Result};

/// Platform description: memory capacity, fixed network/serialization
/// costs, and the interference calibration constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSpec {
    /// Total device memory, MB.
    pub mem_capacity_mb: f64,
    /// Request transmission time, ms per request.
    pub net_in_ms_per_req: f64,
    /// Request serialization time, ms per request.
    pub serialize_ms_per_req: f64,
    /// Result transmission time, ms.
    pub net_out_ms: f64,
    /// Interference strength per extra active instance.
    pub interference_kappa: f64,
    /// Memory-pressure amplification of interference.
    pub interference_beta: f64,
    /// Exponent on the extra-instance count.
    pub interference_power: f64,
}

impl Default for PlatformSpec {
    fn default() -> Self {
        PlatformSpec {
            mem_capacity_mb: 8192.0,
            net_in_ms_per_req: 2.0,
            serialize_ms_per_req: 0.1,
            net_out_ms: 1.0,
            interference_kappa: 0.08,
            interference_beta: 2.0,
            interference_power: 1.0,
        }
    }
}

impl PlatformSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, "must be non-negative"))
            }
        };
        if !(self.mem_capacity_mb > 0.0) {
            return Err(Error::config("mem_capacity_mb", "must be > 0"));
        }
        check(self.net_in_ms_per_req >= 0.0, "net_in_ms_per_req")?;
        check(self.serialize_ms_per_req >= 0.0, "serialize_ms_per_req")?;
        check(self.net_out_ms >= 0.0, "net_out_ms")?;
        check(self.interference_kappa >= 0.0, "interference_kappa")?;
        check(self.interference_beta >= 0.0, "interference_beta")?;
        if !(self.interference_power >= 1.0) {
            return Err(Error::config("interference_power", "must be >= 1"));
        }
        Ok(())
    }

    /// Fixed per-request overhead t_t + t_s + t_o, µs.
    pub fn overhead_us(&self) -> Micros {
        ms_to_us(self.net_in_ms_per_req)
            + ms_to_us(self.serialize_ms_per_req)
            + ms_to_us(self.net_out_ms)
    }
}

/// Monotone simulated clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    pub now_us: Micros,
    pub event_count: u64,
}

impl SimClock {
    pub fn advance_to(&mut self, t_us: Micros) {
        debug_assert!(t_us >= self.now_us);
        self.now_us = self.now_us.max(t_us);
    }

    pub fn tick_event(&mut self) {
        self.event_count += 1;
    }
}

/// Memory reserved by one instance pool: `m_c` instances, each holding the
/// model weights plus activation buffers sized for a full batch of `b`.
pub fn memory_footprint(profile: &ModelProfile, b: u32, m_c: u32) -> f64 {
    f64::from(m_c) * (profile.weight_mem_mb + f64::from(b) * profile.act_mem_per_item_mb)
}

/// Latency inflation from co-located instances:
/// `1 + kappa * (n_active - 1)^p * (1 + beta * mem_util)`.
/// A single active instance never interferes with itself.
pub fn interference_factor(spec: &PlatformSpec, n_active: u32, mem_util: f64) -> f64 {
    debug_assert!(n_active >= 1);
    debug_assert!((0.0..=1.0).contains(&mem_util));
    1.0 + spec.interference_kappa
        * f64::from(n_active - 1).powf(spec.interference_power)
        * (1.0 + spec.interference_beta * mem_util)
}

/// Batch execution time in ms: affine in batch size, inflated by the
/// interference factor.
pub fn batch_inference_time(profile: &ModelProfile, b: u32, factor: f64) -> f64 {
    debug_assert!(b >= 1);
    debug_assert!(factor >= 1.0);
    (profile.base_latency_ms + profile.per_item_cost_ms * f64::from(b)) * factor
}

/// One batch bound to a model's instance pool.
#[derive(Debug, Clone)]
pub struct Dispatch {
    /// Catalog index.
    pub model: usize,
    pub batch: Vec<Request>,
    /// Configured batch size (pool buffers are sized for this).
    pub b_cfg: u32,
    /// Instance-pool width.
    pub m_c: u32,
}

impl Dispatch {
    pub fn new(model: usize, batch: Vec<Request>, b_cfg: u32, m_c: u32) -> Self {
        Dispatch { model, batch, b_cfg, m_c }
    }
}

/// Result of executing (or rejecting) one dispatch.
#[derive(Debug, Clone)]
pub struct ExecutionOutcome {
    pub model: usize,
    /// End-to-end latency per request id, µs. Empty when overflowed.
    pub per_request_latency_us: BTreeMap<u64, Micros>,
    /// Queueing component per request id, µs.
    pub queue_us: BTreeMap<u64, Micros>,
    /// Inference time of this batch, µs.
    pub inference_us: Micros,
    /// Memory reserved by this dispatch's pool, MB (charged on the first
    /// dispatch of a pool; 0 for batches reusing an already-charged pool).
    pub mem_used_mb: f64,
    pub overflowed: bool,
    pub slo_violations: BTreeSet<u64>,
    /// Completion time of this batch, µs (slot start when overflowed).
    pub completion_us: Micros,
    /// The requests this dispatch carried (executed or dropped).
    pub requests: Vec<Request>,
}

impl ExecutionOutcome {
    pub fn executed(&self) -> usize {
        self.per_request_latency_us.len()
    }

    pub fn mean_latency_ms(&self) -> Option<f64> {
        if self.per_request_latency_us.is_empty() {
            return None;
        }
        let sum: i128 = self.per_request_latency_us.values().map(|v| *v as i128).sum();
        Some(sum as f64 / 1000.0 / self.per_request_latency_us.len() as f64)
    }
}

/// Event-log record, one line per dispatch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventRecord {
    pub time_us: Micros,
    pub event_kind: String,
    pub model: String,
    pub batch_size: usize,
    pub m_c: u32,
    pub t_m_us: Micros,
    pub mem_used_mb: f64,
    pub violated_ids: Vec<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct PoolKey {
    model: usize,
    b_cfg: u32,
    m_c: u32,
}

/// Execute one scheduling slot.
///
/// Dispatches are admitted in order against the memory ledger; a pool that
/// would push reserved memory past capacity is rejected atomically (its
/// batches overflow, zero requests execute). Admitted batches run on their
/// pool's `m_c` instances starting at the slot start; same-pool batches
/// beyond `m_c` serialize behind the earliest-free instance. The clock
/// advances to the latest completion.
pub fn execute_slot(
    clock: &mut SimClock,
    dispatches: Vec<Dispatch>,
    catalog: &Catalog,
    spec: &PlatformSpec,
) -> Result<Vec<ExecutionOutcome>> {
    let slot_start = clock.now_us;
    for d in &dispatches {
        if d.model >= catalog.len() {
            return Err(Error::UnknownModel(format!("#{}", d.model)));
        }
        debug_assert!(!d.batch.is_empty(), "empty batch dispatched");
        debug_assert!(d.m_c >= 1);
    }

    // Pass 1: memory admission, pool-at-a-time in dispatch order.
    let mut reserved = 0.0f64;
    let mut pool_admitted: Vec<(PoolKey, bool, f64)> = Vec::new();
    let mut admitted = vec![false; dispatches.len()];
    let mut charged = vec![0.0f64; dispatches.len()];
    for (i, d) in dispatches.iter().enumerate() {
        let key = PoolKey { model: d.model, b_cfg: d.b_cfg, m_c: d.m_c };
        match pool_admitted.iter().find(|(k, _, _)| *k == key) {
            Some((_, ok, _)) => admitted[i] = *ok,
            None => {
                let charge = memory_footprint(catalog.profile(d.model), d.b_cfg, d.m_c);
                let ok = reserved + charge <= spec.mem_capacity_mb;
                if ok {
                    reserved += charge;
                    charged[i] = charge;
                }
                pool_admitted.push((key, ok, charge));
                admitted[i] = ok;
            }
        }
    }

    // Pass 2: platform-wide interference from what was actually admitted.
    let n_active: u32 = pool_admitted
        .iter()
        .filter(|(_, ok, _)| *ok)
        .map(|(k, _, _)| k.m_c)
        .sum();
    let mem_util = (reserved / spec.mem_capacity_mb).clamp(0.0, 1.0);
    let factor = if n_active >= 1 {
        interference_factor(spec, n_active, mem_util)
    } else {
        1.0
    };

    // Pass 3: timing. Each pool tracks its instances' next-free times.
    let overhead_us = spec.overhead_us();
    let mut instance_free: BTreeMap<(usize, u32, u32), Vec<Micros>> = BTreeMap::new();
    let mut outcomes = Vec::with_capacity(dispatches.len());
    let mut latest = slot_start;

    for (i, d) in dispatches.into_iter().enumerate() {
        clock.tick_event();
        if !admitted[i] {
            let ids: BTreeSet<u64> = d.batch.iter().map(|r| r.id).collect();
            outcomes.push(ExecutionOutcome {
                model: d.model,
                per_request_latency_us: BTreeMap::new(),
                queue_us: BTreeMap::new(),
                inference_us: 0,
                mem_used_mb: 0.0,
                overflowed: true,
                slo_violations: ids,
                completion_us: slot_start,
                requests: d.batch,
            });
            continue;
        }

        let profile = catalog.profile(d.model);
        let t_m_us = ms_to_us(batch_inference_time(profile, d.batch.len() as u32, factor));
        let free = instance_free
            .entry((d.model, d.b_cfg, d.m_c))
            .or_insert_with(|| vec![slot_start; d.m_c as usize]);
        // Earliest-free instance; ties resolve to the lowest index.
        let (slot_idx, _) = free
            .iter()
            .enumerate()
            .min_by_key(|(idx, t)| (**t, *idx))
            .expect("pool has at least one instance");
        let start = free[slot_idx];
        let completion = start + t_m_us;
        free[slot_idx] = completion;
        latest = latest.max(completion);

        let mut lat = BTreeMap::new();
        let mut queue = BTreeMap::new();
        let mut violations = BTreeSet::new();
        for r in &d.batch {
            let t_w = start - r.arrival_us;
            debug_assert!(t_w >= 0, "request dispatched before arrival");
            let t_r = overhead_us + t_w + t_m_us;
            if t_r > r.slo_us() {
                violations.insert(r.id);
            }
            lat.insert(r.id, t_r);
            queue.insert(r.id, t_w);
        }
        outcomes.push(ExecutionOutcome {
            model: d.model,
            per_request_latency_us: lat,
            queue_us: queue,
            inference_us: t_m_us,
            mem_used_mb: charged[i],
            overflowed: false,
            slo_violations: violations,
            completion_us: completion,
            requests: d.batch,
        });
    }

    clock.advance_to(latest);
    Ok(outcomes)
}

/// Reserved memory and active-instance count a slot's admitted pools would
/// report; convenience for state features.
pub fn slot_pressure(outcomes: &[ExecutionOutcome], dispatch_m_c: &[u32]) -> (f64, u32) {
    let mem: f64 = outcomes.iter().map(|o| o.mem_used_mb).sum();
    let active: u32 = outcomes
        .iter()
        .zip(dispatch_m_c)
        .filter(|(o, _)| !o.overflowed && o.mem_used_mb > 0.0)
        .map(|(_, m)| *m)
        .sum();
    (mem, active)
}
