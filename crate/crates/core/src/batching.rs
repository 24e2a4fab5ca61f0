//! Per-model request queues with SLO-priority ordering and batch formation.
//!
//! A queue keeps pending requests ordered by (slo, arrival, id): the
//! tighter the SLO the higher the priority, ties served in arrival order.
//! Batches are formed eagerly at each scheduling decision by pulling from
//! the head.

use crate::time::{us_to_ms, Micros};
use crate::workload::Request;
use crate::{Error, Result};

/// Queue-snapshot features consumed by the scheduler state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadMetrics {
    pub length: usize,
    /// Age of the head request, ms; 0 when empty.
    pub head_age_ms: f64,
    /// SLO of the head request, ms; the catalog SLO when empty.
    pub min_slo_ms: f64,
}

/// SLO-priority request queue for one model. Stored as a head-indexed
/// vector so deep backlogs drain in O(batch) instead of shifting the tail.
#[derive(Debug, Clone)]
pub struct ModelQueue {
    model: usize,
    model_name: String,
    catalog_slo_ms: f64,
    buf: Vec<Request>,
    head: usize,
}

impl ModelQueue {
    pub fn new(model: usize, model_name: &str, catalog_slo_ms: f64) -> Self {
        ModelQueue {
            model,
            model_name: model_name.to_string(),
            catalog_slo_ms,
            buf: Vec::new(),
            head: 0,
        }
    }

    pub fn model(&self) -> usize {
        self.model
    }

    pub fn len(&self) -> usize {
        self.buf.len() - self.head
    }

    pub fn is_empty(&self) -> bool {
        self.head == self.buf.len()
    }

    pub fn pending(&self) -> &[Request] {
        &self.buf[self.head..]
    }

    fn key(r: &Request) -> (Micros, Micros, u64) {
        (r.slo_us(), r.arrival_us, r.id)
    }

    /// Insert preserving (slo asc, arrival asc, id asc).
    pub fn enqueue(&mut self, r: Request) -> Result<()> {
        if r.model != self.model {
            return Err(Error::ModelMismatch {
                queue: self.model_name.clone(),
                request: format!("#{}", r.model),
            });
        }
        let key = Self::key(&r);
        let pos = self.buf[self.head..].partition_point(|q| Self::key(q) <= key);
        if self.head + pos == self.buf.len() {
            self.buf.push(r);
        } else {
            self.buf.insert(self.head + pos, r);
        }
        Ok(())
    }

    /// Remove up to `b` head requests as one batch. An empty queue yields
    /// an empty batch; the scheduler may act on empty queues.
    pub fn form_batch(&mut self, b: u32) -> Vec<Request> {
        let take = (b as usize).min(self.len());
        let batch: Vec<Request> = self.buf[self.head..self.head + take].to_vec();
        self.head += take;
        // Reclaim consumed prefix once it dominates the buffer.
        if self.head > 1024 && self.head * 2 >= self.buf.len() {
            self.buf.drain(..self.head);
            self.head = 0;
        }
        batch
    }

    pub fn head_metrics(&self, now_us: Micros) -> HeadMetrics {
        match self.pending().first() {
            Some(head) => HeadMetrics {
                length: self.len(),
                head_age_ms: us_to_ms((now_us - head.arrival_us).max(0)),
                min_slo_ms: head.slo_ms,
            },
            None => HeadMetrics {
                length: 0,
                head_age_ms: 0.0,
                min_slo_ms: self.catalog_slo_ms,
            },
        }
    }

    /// Earliest absolute deadline among pending requests, µs.
    pub fn head_deadline_us(&self) -> Option<Micros> {
        self.pending().first().map(|r| r.deadline_us())
    }
}
