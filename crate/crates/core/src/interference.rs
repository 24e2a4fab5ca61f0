//! Latency predictor used for admission control: a small network maps the
//! platform's free resources and a proposed (b, m_c) to the expected mean
//! request latency, trained online from executed-slot feedback. Actions
//! whose prediction would breach the batch's tightest SLO are vetoed and
//! replaced by the safe (1, 1) fallback.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::PredictorParams;
use crate::nnkernel::Mlp;
use crate::sacsched::{Action, BATCH_GRID, CONCURRENCY_MAX};
use crate::workload::Request;
use crate::{Error, Result};

/// One training example: platform/action features and the observed mean
/// per-request latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSample {
    pub features: Vec<f64>,
    pub label_ms: f64,
}

/// Feature layout: [mem available, compute available, m_c/8, b/128,
/// one-hot model]; all entries in [0, 1].
pub fn predictor_features(
    mem_avail: f64,
    compute_avail: f64,
    b: u32,
    m_c: u32,
    model: usize,
    n_models: usize,
) -> Vec<f64> {
    let mut f = Vec::with_capacity(4 + n_models);
    f.push(mem_avail.clamp(0.0, 1.0));
    f.push(compute_avail.clamp(0.0, 1.0));
    f.push(f64::from(m_c) / f64::from(CONCURRENCY_MAX));
    f.push(f64::from(b) / f64::from(*BATCH_GRID.last().unwrap()));
    for i in 0..n_models {
        f.push(if i == model { 1.0 } else { 0.0 });
    }
    f
}

pub fn predictor_feature_dim(n_models: usize) -> usize {
    4 + n_models
}

/// Running label statistics; the network learns standardized targets and
/// predictions are mapped back to ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Default for LabelStats {
    fn default() -> Self {
        LabelStats { count: 0, mean: 0.0, m2: 0.0 }
    }
}

impl LabelStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            return 1.0;
        }
        (self.m2 / (self.count - 1) as f64).sqrt().max(1e-6)
    }
}

/// Floor on predictions, ms.
pub const PREDICTION_FLOOR_MS: f64 = 0.01;

/// Predicted mean latency in ms: the de-standardized network output,
/// floored at [`PREDICTION_FLOOR_MS`].
pub fn predict_latency(net: &Mlp, stats: &LabelStats, features: &[f64]) -> Result<f64> {
    let z = net.forward(features)?[0];
    Ok((z * stats.std() + stats.mean).max(PREDICTION_FLOOR_MS))
}

/// Online latency predictor with a rolling sample window. Every fifth
/// sample is held out; the rest train the network one minibatch per
/// arriving sample.
#[derive(Debug, Clone)]
pub struct Predictor {
    net: Mlp,
    params: PredictorParams,
    stats: LabelStats,
    window: VecDeque<(PredictorSample, bool)>,
    seen: u64,
    rng: ChaCha12Rng,
}

/// Fraction of window samples held out (1 in `HOLDOUT_EVERY`).
pub const HOLDOUT_EVERY: u64 = 5;

impl Predictor {
    pub fn new(n_models: usize, params: &PredictorParams, seed: u64) -> Self {
        let mut dims = vec![predictor_feature_dim(n_models)];
        dims.extend(&params.hidden);
        dims.push(1);
        Predictor {
            net: Mlp::new(&dims, seed ^ 0x1f),
            params: params.clone(),
            stats: LabelStats::default(),
            window: VecDeque::new(),
            seen: 0,
            rng: crate::rng::stream(seed, "predictor"),
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn stats(&self) -> &LabelStats {
        &self.stats
    }

    pub fn samples_seen(&self) -> u64 {
        self.seen
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        predict_latency(&self.net, &self.stats, features)
    }

    /// Ingest one observed sample: update label statistics, append to the
    /// rolling window and take one training step on a window minibatch.
    pub fn observe(&mut self, sample: PredictorSample) -> Result<()> {
        if !sample.label_ms.is_finite() || sample.label_ms <= 0.0 {
            return Err(Error::NonFinite("predictor label"));
        }
        let holdout = self.seen % HOLDOUT_EVERY == HOLDOUT_EVERY - 1;
        self.seen += 1;
        self.stats.push(sample.label_ms);
        self.window.push_back((sample, holdout));
        while self.window.len() > self.params.window {
            self.window.pop_front();
        }
        self.train_minibatch(32)
    }

    fn train_minibatch(&mut self, k: usize) -> Result<()> {
        let train: Vec<usize> = self
            .window
            .iter()
            .enumerate()
            .filter(|(_, (_, holdout))| !holdout)
            .map(|(i, _)| i)
            .collect();
        if train.is_empty() {
            return Ok(());
        }
        let mut xs = Vec::with_capacity(k);
        let mut grads = Vec::with_capacity(k);
        let std = self.stats.std();
        let mean = self.stats.mean;
        for _ in 0..k.min(train.len()) {
            let idx = train[self.rng.gen_range(0..train.len())];
            let (sample, _) = &self.window[idx];
            let z = self.net.forward(&sample.features)?[0];
            let target = (sample.label_ms - mean) / std;
            // d/dz of (z - target)^2 / 2, averaged over the minibatch later.
            grads.push(vec![(z - target) / k as f64]);
            xs.push(sample.features.clone());
        }
        self.net.backward_step(&xs, &grads, self.params.lr)
    }

    /// Run several full passes over an explicit training set (offline
    /// protocol used by evaluation experiments).
    pub fn fit_offline(&mut self, train: &[PredictorSample], epochs: usize) -> Result<()> {
        for s in train {
            if !s.label_ms.is_finite() || s.label_ms <= 0.0 {
                return Err(Error::NonFinite("predictor label"));
            }
            self.stats.push(s.label_ms);
            self.seen += 1;
        }
        let std = self.stats.std();
        let mean = self.stats.mean;
        let mut order: Vec<usize> = (0..train.len()).collect();
        for _ in 0..epochs {
            // Fisher-Yates with the predictor's own stream.
            for i in (1..order.len()).rev() {
                let j = self.rng.gen_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(32) {
                let xs: Vec<Vec<f64>> =
                    chunk.iter().map(|i| train[*i].features.clone()).collect();
                let mut grads = Vec::with_capacity(chunk.len());
                for i in chunk {
                    let z = self.net.forward(&train[*i].features)?[0];
                    let target = (train[*i].label_ms - mean) / std;
                    grads.push(vec![(z - target) / chunk.len() as f64]);
                }
                self.net.backward_step(&xs, &grads, self.params.lr)?;
            }
        }
        Ok(())
    }

    /// Mean relative error on the window's holdout split.
    pub fn holdout_error(&self) -> Result<f64> {
        let holdout: Vec<&PredictorSample> = self
            .window
            .iter()
            .filter(|(_, h)| *h)
            .map(|(s, _)| s)
            .collect();
        mean_relative_error(&holdout, |f| self.predict(f))
    }

    /// Admission decision for a proposed action: admit until warm, then
    /// veto when the predicted latency exceeds the configured fraction of
    /// the tightest SLO in the would-be batch.
    pub fn admission_check(
        &self,
        batch: &[Request],
        action: &Action,
        mem_avail: f64,
        compute_avail: f64,
        n_models: usize,
    ) -> Result<bool> {
        if self.seen < self.params.warmup_samples as u64 {
            return Ok(true);
        }
        let Some(min_slo) = batch.iter().map(|r| r.slo_ms).fold(None, |acc: Option<f64>, s| {
            Some(acc.map_or(s, |a| a.min(s)))
        }) else {
            return Ok(true);
        };
        let features = predictor_features(
            mem_avail,
            compute_avail,
            action.b,
            action.m_c,
            action.model,
            n_models,
        );
        let predicted = self.predict(&features)?;
        Ok(predicted <= self.params.veto_slo_fraction * min_slo)
    }

    pub fn to_checkpoint(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            net: &'a Mlp,
            stats: LabelStats,
            seen: u64,
        }
        serde_json::to_string(&Doc { net: &self.net, stats: self.stats, seen: self.seen })
            .expect("predictor serializes")
    }
}

/// Mean relative error of `predict` over `samples`.
pub fn mean_relative_error<'a, F>(
    samples: &[&'a PredictorSample],
    predict: F,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if samples.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    let mut total = 0.0;
    for s in samples {
        let p = predict(&s.features)?;
        total += (p - s.label_ms).abs() / s.label_ms;
    }
    Ok(total / samples.len() as f64)
}
