//! Per-slot performance records and the throughput/latency utility. Every
//! reported metric — and the scheduler's reward — goes through this module,
//! so there is exactly one utility implementation in the crate.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Bounds for the utility/reward; `ln` of a tiny normalized latency is
/// unbounded, and bounded rewards keep the critic stable.
pub const UTILITY_CLIP: f64 = 10.0;

/// Reward assigned to a dispatch rejected for memory overflow.
pub const OVERFLOW_PENALTY: f64 = -10.0;

/// The throughput/latency trade-off:
/// `U = ln(T * slo_sum / (L * m_c))`, clipped to [-10, 10].
///
/// `T` is the slot throughput (requests/s), `L` the mean end-to-end
/// latency (ms), and `slo_sum / m_c` (ms) the slot's latency budget, so the
/// denominator is the budget-normalized latency.
pub fn utility(throughput_rps: f64, mean_latency_ms: f64, slo_sum_ms: f64, m_c: u32) -> Result<f64> {
    if !(throughput_rps > 0.0) {
        return Err(Error::NonPositiveInput("throughput"));
    }
    if !(mean_latency_ms > 0.0) {
        return Err(Error::NonPositiveInput("latency"));
    }
    if !(slo_sum_ms > 0.0) {
        return Err(Error::NonPositiveInput("slo_sum"));
    }
    if m_c == 0 {
        return Err(Error::NonPositiveInput("m_c"));
    }
    let u = (throughput_rps * slo_sum_ms / (mean_latency_ms * f64::from(m_c))).ln();
    Ok(u.clamp(-UTILITY_CLIP, UTILITY_CLIP))
}

/// One scheduling decision's measured performance for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot_index: u64,
    pub model: String,
    pub b: u32,
    pub m_c: u32,
    /// Requests per second in this slot.
    pub throughput: f64,
    /// Mean end-to-end latency, ms.
    pub mean_latency: f64,
    pub utility: f64,
    pub violations: u64,
    pub total: u64,
    pub mem_util: f64,
    pub overflow: bool,
}

/// Windowed roll-up of slot records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub slots: u64,
    pub mean_utility: f64,
    pub mean_latency_ms: f64,
    pub violation_rate: f64,
    pub total_requests: u64,
    pub total_violations: u64,
    /// Completed requests per model, catalog order preserved by name.
    pub completed_per_model: Vec<(String, u64)>,
}

/// Aggregate `records` over one window. Violation rate is total violations
/// over total requests; per-model throughput stacks completed requests.
pub fn aggregate(records: &[SlotRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut total = 0u64;
    let mut violations = 0u64;
    let mut utility_sum = 0.0;
    let mut latency_weighted = 0.0;
    let mut completed_total = 0u64;
    let mut per_model: Vec<(String, u64)> = Vec::new();
    for r in records {
        total += r.total;
        violations += r.violations;
        utility_sum += r.utility;
        let completed = if r.overflow { 0 } else { r.total };
        latency_weighted += r.mean_latency * completed as f64;
        completed_total += completed;
        match per_model.iter_mut().find(|(m, _)| m == &r.model) {
            Some((_, c)) => *c += completed,
            None => per_model.push((r.model.clone(), completed)),
        }
    }
    Ok(Summary {
        slots: records.len() as u64,
        mean_utility: utility_sum / records.len() as f64,
        mean_latency_ms: if completed_total > 0 {
            latency_weighted / completed_total as f64
        } else {
            0.0
        },
        violation_rate: if total > 0 {
            violations as f64 / total as f64
        } else {
            0.0
        },
        total_requests: total,
        total_violations: violations,
        completed_per_model: per_model,
    })
}
