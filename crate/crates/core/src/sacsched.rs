//! Maximum-entropy scheduler: a discrete soft actor-critic over the
//! (batch size, concurrency) grid with twin Q-networks, Polyak-averaged
//! targets, auto-tuned temperature and a FIFO replay buffer.
//!
//! One shared-parameter agent makes one decision per model per slot in
//! catalog order; the model's one-hot in the state conditions the policy.

use serde::{Deserialize, Serialize};

use crate::config::SacParams;
use crate::nnkernel::{softmax, Gradients, Mlp, ScalarAdam};
use crate::profiler::{utility, OVERFLOW_PENALTY};
use crate::simcore::ExecutionOutcome;
use crate::workload::Request;
use crate::{Error, Result};

/// Selectable batch sizes.
pub const BATCH_GRID: [u32; 8] = [1, 2, 4, 8, 16, 32, 64, 128];
/// Concurrency ranges over 1..=CONCURRENCY_MAX.
pub const CONCURRENCY_MAX: u32 = 8;
/// |A| = |B| x |C|.
pub const N_ACTIONS: usize = BATCH_GRID.len() * CONCURRENCY_MAX as usize;

/// One scheduling decision: batch size and instance count for a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    /// Catalog index of the model this decision applies to.
    pub model: usize,
    pub b: u32,
    pub m_c: u32,
    pub flat_index: usize,
}

impl Action {
    /// Decode a flat index in [0, |A|) for `model`.
    pub fn decode(model: usize, flat_index: usize) -> Action {
        debug_assert!(flat_index < N_ACTIONS);
        let b = BATCH_GRID[flat_index / CONCURRENCY_MAX as usize];
        let m_c = (flat_index % CONCURRENCY_MAX as usize) as u32 + 1;
        Action { model, b, m_c, flat_index }
    }

    /// Flat index of a (b, m_c) pair, if on the grid.
    pub fn encode(b: u32, m_c: u32) -> Option<usize> {
        let bi = BATCH_GRID.iter().position(|x| *x == b)?;
        if !(1..=CONCURRENCY_MAX).contains(&m_c) {
            return None;
        }
        Some(bi * CONCURRENCY_MAX as usize + (m_c as usize - 1))
    }
}

/// Replay-buffer record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO ring buffer.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    buf: Vec<Transition>,
    capacity: usize,
    head: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer { buf: Vec::new(), capacity, head: 0, pushed: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        self.pushed += 1;
        if self.buf.len() < self.capacity {
            self.buf.push(t);
        } else {
            // Overwrite the oldest entry.
            self.buf[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    /// Oldest-first iteration order (for FIFO property checks).
    pub fn iter_fifo(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.buf.split_at(self.head.min(self.buf.len()));
        older.iter().chain(newer.iter())
    }

    pub fn sample<'a, R: rand::Rng>(&'a self, rng: &mut R, k: usize) -> Vec<&'a Transition> {
        (0..k).map(|_| &self.buf[rng.gen_range(0..self.buf.len())]).collect()
    }
}

/// Action-selection mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    /// Sample from the policy distribution.
    Train,
    /// Greedy: argmax probability, lowest flat index on ties.
    Eval,
}

/// Reward for one executed (or rejected) dispatch: the utility of its
/// measured throughput and latency against the slot budget, or the flat
/// overflow penalty.
pub fn reward(
    outcome: &ExecutionOutcome,
    batch: &[Request],
    _b: u32,
    m_c: u32,
    slot_ms: f64,
) -> f64 {
    debug_assert!(slot_ms > 0.0);
    if outcome.overflowed {
        return OVERFLOW_PENALTY;
    }
    let throughput_rps = batch.len() as f64 / (slot_ms / 1000.0);
    let slo_sum_ms: f64 = batch.iter().map(|r| r.slo_ms).sum();
    let mean_latency_ms = outcome.mean_latency_ms().unwrap_or(slot_ms);
    utility(throughput_rps, mean_latency_ms, slo_sum_ms, m_c)
        .expect("executed dispatch has positive throughput, latency and slo sum")
}

/// Soft state value `V(s) = sum_a pi(a) (Q(a) - alpha ln pi(a))`; entries
/// with `pi(a) = 0` contribute nothing (x ln x -> 0).
pub fn soft_value(q_min: &[f64], pi: &[f64], alpha: f64) -> f64 {
    debug_assert_eq!(q_min.len(), pi.len());
    let mut v = 0.0;
    for (q, p) in q_min.iter().zip(pi.iter()) {
        if *p > 0.0 {
            v += p * (q - alpha * p.ln());
        }
    }
    v
}

/// Loss values from one gradient step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UpdateStats {
    pub q_loss: f64,
    pub policy_loss: f64,
    pub temperature_loss: f64,
    pub alpha: f64,
}

/// Discrete soft actor-critic agent.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub policy: Mlp,
    log_alpha: f64,
    alpha_optim: ScalarAdam,
    target_entropy: f64,
    gamma: f64,
    tau: f64,
    lr: f64,
    batch_size: usize,
    auto_alpha: bool,
    replay: ReplayBuffer,
    state_dim: usize,
    n_actions: usize,
    updates: u64,
    /// Completed training episodes (drives arrival sub-streams on resume).
    pub episodes_done: u64,
}

impl SacAgent {
    pub fn new(state_dim: usize, params: &SacParams, seed: u64) -> Self {
        Self::with_actions(state_dim, N_ACTIONS, params, seed)
    }

    /// Agent over an arbitrary discrete action count (test scaffolding for
    /// bandit oracles; the scheduler always uses the full grid).
    pub fn with_actions(state_dim: usize, n_actions: usize, params: &SacParams, seed: u64) -> Self {
        let mut dims = vec![state_dim];
        dims.extend(&params.hidden);
        dims.push(n_actions);
        let q1 = Mlp::new(&dims, seed ^ 0x51);
        let q2 = Mlp::new(&dims, seed ^ 0x52);
        SacAgent {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            policy: Mlp::new(&dims, seed ^ 0x99),
            log_alpha: params.alpha_init.max(1e-8).ln(),
            alpha_optim: ScalarAdam::default(),
            target_entropy: params.target_entropy_factor * (n_actions as f64).ln(),
            gamma: params.gamma,
            tau: params.tau,
            lr: params.lr,
            batch_size: params.batch_size,
            auto_alpha: params.auto_alpha,
            replay: ReplayBuffer::new(params.replay_capacity),
            state_dim,
            n_actions,
            updates: 0,
            episodes_done: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.log_alpha = alpha.max(1e-12).ln();
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn observe(&mut self, t: Transition) {
        debug_assert_eq!(t.s.len(), self.state_dim);
        debug_assert!(t.a < self.n_actions);
        debug_assert!(t.r.is_finite());
        self.replay.push(t);
    }

    /// Policy distribution over actions at `s`.
    pub fn policy_probs(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.policy.forward(s)?))
    }

    /// Pick a flat action index.
    pub fn select_action<R: rand::Rng>(
        &self,
        s: &[f64],
        mode: SelectMode,
        rng: &mut R,
    ) -> Result<usize> {
        let pi = self.policy_probs(s)?;
        Ok(match mode {
            SelectMode::Eval => argmax_lowest(&pi),
            SelectMode::Train => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = pi.len() - 1;
                for (i, p) in pi.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        })
    }

    fn q_forward(net: &Mlp, s: &[f64]) -> Vec<f64> {
        net.forward(s).expect("state dim validated on observe")
    }

    /// Soft Bellman residual over the minibatch: targets from the Polyak
    /// critics (element-wise min), current policy and current temperature;
    /// returns the loss and per-net parameter gradients.
    pub fn q_loss(&self, minibatch: &[&Transition]) -> Result<(f64, Gradients, Gradients)> {
        let (loss, states, g1, g2) = self.q_loss_parts(minibatch)?;
        let grads1 = self.q1.backprop(&states, &g1)?;
        let grads2 = self.q2.backprop(&states, &g2)?;
        Ok((loss, grads1, grads2))
    }

    /// Loss plus output-space gradients; the update path backpropagates
    /// these without building parameter gradients twice.
    #[allow(clippy::type_complexity)]
    fn q_loss_parts(
        &self,
        minibatch: &[&Transition],
    ) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if minibatch.is_empty() {
            return Err(Error::EmptyMinibatch);
        }
        let n = minibatch.len() as f64;
        let alpha = self.alpha();
        let mut loss = 0.0;
        let mut states = Vec::with_capacity(minibatch.len());
        let mut g1 = Vec::with_capacity(minibatch.len());
        let mut g2 = Vec::with_capacity(minibatch.len());
        for t in minibatch {
            let y = if t.done {
                t.r
            } else {
                let q1t = Self::q_forward(&self.q1_target, &t.s_next);
                let q2t = Self::q_forward(&self.q2_target, &t.s_next);
                let qmin: Vec<f64> =
                    q1t.iter().zip(&q2t).map(|(a, b)| a.min(*b)).collect();
                let pi = self.policy_probs(&t.s_next)?;
                t.r + self.gamma * soft_value(&qmin, &pi, alpha)
            };
            let q1 = Self::q_forward(&self.q1, &t.s);
            let q2 = Self::q_forward(&self.q2, &t.s);
            let (e1, e2) = (q1[t.a] - y, q2[t.a] - y);
            // Mean over the minibatch and both live nets of (1/2) e^2.
            loss += 0.5 * (e1 * e1 + e2 * e2) / (2.0 * n);
            let mut d1 = vec![0.0; self.n_actions];
            let mut d2 = vec![0.0; self.n_actions];
            d1[t.a] = e1 / (2.0 * n);
            d2[t.a] = e2 / (2.0 * n);
            states.push(t.s.clone());
            g1.push(d1);
            g2.push(d2);
        }
        Ok((loss, states, g1, g2))
    }

    /// KL-projection policy objective
    /// `E_s[ pi(s)^T (alpha ln pi(s) - min Q(s)) ]` with Q held constant;
    /// returns the loss and policy parameter gradients.
    pub fn policy_loss(&self, minibatch: &[&Transition]) -> Result<(f64, Gradients)> {
        let (loss, states, grad_logits) = self.policy_loss_parts(minibatch)?;
        let grads = self.policy.backprop(&states, &grad_logits)?;
        Ok((loss, grads))
    }

    #[allow(clippy::type_complexity)]
    fn policy_loss_parts(
        &self,
        minibatch: &[&Transition],
    ) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if minibatch.is_empty() {
            return Err(Error::EmptyMinibatch);
        }
        let n = minibatch.len() as f64;
        let alpha = self.alpha();
        let mut loss = 0.0;
        let mut states = Vec::with_capacity(minibatch.len());
        let mut grad_logits = Vec::with_capacity(minibatch.len());
        for t in minibatch {
            let q1 = Self::q_forward(&self.q1, &t.s);
            let q2 = Self::q_forward(&self.q2, &t.s);
            let pi = self.policy_probs(&t.s)?;
            // g_a = alpha ln pi_a - qmin_a; loss_i = sum_a pi_a g_a.
            let mut f = 0.0;
            let g: Vec<f64> = pi
                .iter()
                .zip(q1.iter().zip(&q2))
                .map(|(p, (a, b))| {
                    let qmin = a.min(*b);
                    let ga = alpha * p.max(1e-300).ln() - qmin;
                    f += p * ga;
                    ga
                })
                .collect();
            loss += f / n;
            // d loss_i / d logit_b = pi_b (g_b - f); the alpha ln pi chain
            // term cancels in expectation.
            let grad: Vec<f64> = pi.iter().zip(&g).map(|(p, ga)| p * (ga - f) / n).collect();
            states.push(t.s.clone());
            grad_logits.push(grad);
        }
        Ok((loss, states, grad_logits))
    }

    /// Temperature objective `E_s[ sum_a pi(a|s) (-alpha)(ln pi(a|s) + H̄) ]`
    /// with the policy held constant; returns the loss and its gradient
    /// with respect to `log alpha`.
    pub fn temperature_loss(&self, minibatch: &[&Transition]) -> Result<(f64, f64)> {
        if minibatch.is_empty() {
            return Err(Error::EmptyMinibatch);
        }
        let n = minibatch.len() as f64;
        let alpha = self.alpha();
        let mut entropy_gap = 0.0;
        for t in minibatch {
            let pi = self.policy_probs(&t.s)?;
            for p in pi {
                if p > 0.0 {
                    entropy_gap += p * (p.ln() + self.target_entropy) / n;
                }
            }
        }
        let loss = -alpha * entropy_gap;
        // d/d log_alpha = -alpha * entropy_gap (pi constant).
        Ok((loss, -alpha * entropy_gap))
    }

    /// One gradient step on the critics, the policy and the temperature,
    /// followed by a Polyak target update.
    pub fn update(&mut self, minibatch: &[&Transition]) -> Result<UpdateStats> {
        let (q_loss, states, g1, g2) = self.q_loss_parts(minibatch)?;
        self.q1.backward_step(&states, &g1, self.lr)?;
        self.q2.backward_step(&states, &g2, self.lr)?;

        let (policy_loss, states, grad_logits) = self.policy_loss_parts(minibatch)?;
        self.policy.backward_step(&states, &grad_logits, self.lr)?;

        let (temperature_loss, grad_log_alpha) = self.temperature_loss(minibatch)?;
        if self.auto_alpha {
            self.alpha_optim.step(&mut self.log_alpha, grad_log_alpha, self.lr);
        }

        self.q1_target.blend_from(&self.q1, self.tau);
        self.q2_target.blend_from(&self.q2, self.tau);
        self.updates += 1;
        Ok(UpdateStats {
            q_loss,
            policy_loss,
            temperature_loss,
            alpha: self.alpha(),
        })
    }

    /// Sample a minibatch and update once the buffer can fill it.
    pub fn maybe_update<R: rand::Rng>(&mut self, rng: &mut R) -> Result<Option<UpdateStats>> {
        if self.replay.len() < self.batch_size {
            return Ok(None);
        }
        let batch: Vec<Transition> = self
            .replay
            .sample(rng, self.batch_size)
            .into_iter()
            .cloned()
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        self.update(&refs).map(Some)
    }

    /// Force targets equal to live nets (Polyak with tau = 1).
    pub fn sync_targets(&mut self) {
        self.q1_target.blend_from(&self.q1, 1.0);
        self.q2_target.blend_from(&self.q2, 1.0);
    }

    pub fn to_checkpoint(&self, catalog_names: &[String]) -> String {
        let doc = AgentCheckpoint {
            q1: self.q1.clone(),
            q2: self.q2.clone(),
            q1_target: self.q1_target.clone(),
            q2_target: self.q2_target.clone(),
            policy: self.policy.clone(),
            log_alpha: self.log_alpha,
            alpha_optim: self.alpha_optim,
            target_entropy: self.target_entropy,
            gamma: self.gamma,
            tau: self.tau,
            lr: self.lr,
            batch_size: self.batch_size,
            auto_alpha: self.auto_alpha,
            replay_capacity: self.replay.capacity,
            replay_len: self.replay.len() as u64,
            state_dim: self.state_dim,
            n_actions: self.n_actions,
            updates: self.updates,
            episodes_done: self.episodes_done,
            catalog: catalog_names.to_vec(),
        };
        serde_json::to_string(&doc).expect("agent serializes")
    }

    /// Restore an agent; replay contents are not persisted, only metadata.
    pub fn from_checkpoint(text: &str, catalog_names: &[String]) -> Result<SacAgent> {
        let doc: AgentCheckpoint = serde_json::from_str(text)?;
        if doc.catalog != catalog_names {
            return Err(Error::Checkpoint(format!(
                "catalog mismatch: checkpoint trained on {:?}",
                doc.catalog
            )));
        }
        Ok(SacAgent {
            q1: doc.q1,
            q2: doc.q2,
            q1_target: doc.q1_target,
            q2_target: doc.q2_target,
            policy: doc.policy,
            log_alpha: doc.log_alpha,
            alpha_optim: doc.alpha_optim,
            target_entropy: doc.target_entropy,
            gamma: doc.gamma,
            tau: doc.tau,
            lr: doc.lr,
            batch_size: doc.batch_size,
            auto_alpha: doc.auto_alpha,
            replay: ReplayBuffer::new(doc.replay_capacity),
            state_dim: doc.state_dim,
            n_actions: doc.n_actions,
            updates: doc.updates,
            episodes_done: doc.episodes_done,
        })
    }
}

/// One training-log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub slot: u64,
    pub reward: f64,
    pub q_loss: f64,
    pub pi_loss: f64,
    pub alpha: f64,
    pub utility: f64,
    pub slo_violation_flag: bool,
}

/// Per-episode training statistics.
#[derive(Debug, Clone)]
pub struct EpisodeStats {
    pub slots: u64,
    pub transitions: u64,
    pub updates: u64,
    pub mean_reward: f64,
    pub log: Vec<TrainLogRecord>,
}

/// Greedy or sampled per-model decisions for one slot.
pub fn sac_decisions<R: rand::Rng>(
    agent: &SacAgent,
    sim: &crate::env::PlatformSim,
    states: &[Vec<f64>],
    mode: SelectMode,
    rng: &mut R,
) -> Result<Vec<Option<crate::env::Decision>>> {
    let mut decisions = Vec::with_capacity(states.len());
    for (model, state) in states.iter().enumerate() {
        if sim.queues()[model].is_empty() {
            decisions.push(None);
            continue;
        }
        let flat = agent.select_action(state, mode, rng)?;
        decisions.push(Some(crate::env::Decision::from(Action::decode(model, flat))));
    }
    Ok(decisions)
}

/// One training episode of `steps` scheduling slots.
///
/// Each slot: observe a state per model, sample one action per model with
/// pending work, dispatch, collect the per-model reward, store transitions
/// (completed with the next slot's observation), then take one gradient
/// step on the critics, the policy and the temperature once the replay
/// buffer can fill a minibatch. Vetoed actions are stored as executed.
pub fn train_episode<R: rand::Rng>(
    agent: &mut SacAgent,
    sim: &mut crate::env::PlatformSim,
    mut predictor: Option<&mut crate::interference::Predictor>,
    steps: u64,
    action_rng: &mut R,
    update_rng: &mut R,
) -> Result<EpisodeStats> {
    let n_models = sim.catalog().len();
    let mut pending: Vec<Option<(Vec<f64>, usize, f64)>> = vec![None; n_models];
    let mut log = Vec::with_capacity(steps as usize);
    let mut transitions = 0u64;
    let mut updates = 0u64;
    let mut reward_sum = 0.0;
    let mut reward_slots = 0u64;

    for _ in 0..steps {
        let mut driver = crate::env::Driver::new(sim, predictor.as_deref_mut());
        let stepped = driver.step(|sim, states| {
            sac_decisions(agent, sim, states, SelectMode::Train, action_rng)
                .expect("state dimensions fixed per catalog")
        })?;
        let Some((states, result)) = stepped else { break };

        for (model, slot) in pending.iter_mut().enumerate() {
            if let Some((s, a, r)) = slot.take() {
                agent.observe(Transition {
                    s,
                    a,
                    r,
                    s_next: states[model].clone(),
                    done: false,
                });
                transitions += 1;
            }
        }
        for (model, out) in result.per_model.iter().enumerate() {
            if let Some(out) = out {
                pending[model] =
                    Some((states[model].clone(), out.action.flat_index, out.reward));
            }
        }

        let stats = agent.maybe_update(update_rng)?;
        if stats.is_some() {
            updates += 1;
        }
        let reward = result.mean_reward();
        if let Some(r) = reward {
            reward_sum += r;
            reward_slots += 1;
        }
        let violated = result
            .per_model
            .iter()
            .flatten()
            .any(|o| o.violations > 0);
        log.push(TrainLogRecord {
            slot: result.slot_index,
            reward: reward.unwrap_or(0.0),
            q_loss: stats.map_or(0.0, |s| s.q_loss),
            pi_loss: stats.map_or(0.0, |s| s.policy_loss),
            alpha: agent.alpha(),
            utility: reward.unwrap_or(0.0),
            slo_violation_flag: violated,
        });
    }

    // Terminal flush: close every open transition against the final state.
    for (model, slot) in pending.iter_mut().enumerate() {
        if let Some((s, a, r)) = slot.take() {
            agent.observe(Transition {
                s,
                a,
                r,
                s_next: sim.observe(model),
                done: true,
            });
            transitions += 1;
        }
    }
    agent.episodes_done += 1;

    Ok(EpisodeStats {
        slots: log.len() as u64,
        transitions,
        updates,
        mean_reward: if reward_slots > 0 {
            reward_sum / reward_slots as f64
        } else {
            0.0
        },
        log,
    })
}

#[derive(Serialize, Deserialize)]
struct AgentCheckpoint {
    q1: Mlp,
    q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    policy: Mlp,
    log_alpha: f64,
    alpha_optim: ScalarAdam,
    target_entropy: f64,
    gamma: f64,
    tau: f64,
    lr: f64,
    batch_size: usize,
    auto_alpha: bool,
    replay_capacity: usize,
    replay_len: u64,
    state_dim: usize,
    n_actions: usize,
    updates: u64,
    #[serde(default)]
    episodes_done: u64,
    catalog: Vec<String>,
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SacParams;

    fn tiny_params() -> SacParams {
        SacParams {
            hidden: vec![8],
            batch_size: 4,
            replay_capacity: 16,
            ..SacParams::default()
        }
    }

    fn transition(s: Vec<f64>, a: usize, r: f64, done: bool) -> Transition {
        Transition { s: s.clone(), a, r, s_next: s, done }
    }

    #[test]
    fn action_grid_is_bijective() {
        for flat in 0..N_ACTIONS {
            let a = Action::decode(0, flat);
            assert_eq!(Action::encode(a.b, a.m_c), Some(flat));
            assert_eq!(a.flat_index, flat);
        }
        assert_eq!(Action::encode(3, 1), None);
        assert_eq!(Action::encode(1, 9), None);
        let a = Action::decode(2, 0);
        assert_eq!((a.b, a.m_c), (1, 1));
        let a = Action::decode(2, N_ACTIONS - 1);
        assert_eq!((a.b, a.m_c), (128, 8));
    }

    #[test]
    fn replay_is_fifo_with_capacity() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(transition(vec![i as f64], 0, 0.0, false));
        }
        assert_eq!(buf.len(), 3);
        let order: Vec<f64> = buf.iter_fifo().map(|t| t.s[0]).collect();
        assert_eq!(order, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn soft_value_examples() {
        // Uniform pi over 4 actions, Q = q, alpha = 1 -> q + ln 4.
        let q = vec![0.7; 4];
        let pi = vec![0.25; 4];
        let v = soft_value(&q, &pi, 1.0);
        assert!((v - (0.7 + 4f64.ln())).abs() < 1e-12);
        // One-hot pi -> Q at that action exactly.
        let q = vec![0.1, 0.9, -0.3];
        let pi = vec![0.0, 1.0, 0.0];
        assert_eq!(soft_value(&q, &pi, 3.0), 0.9);
        // alpha = 0 -> plain expectation.
        let pi = vec![0.2, 0.5, 0.3];
        let expect: f64 = q.iter().zip(&pi).map(|(a, p)| a * p).sum();
        assert!((soft_value(&q, &pi, 0.0) - expect).abs() < 1e-12);
    }

    #[test]
    fn reward_examples() {
        use crate::workload::InputType;
        use std::collections::{BTreeMap, BTreeSet};
        // 20 requests, slo 20ms each (sum 400), slot 200ms -> T = 100 rps;
        // mean latency 50 ms -> U = ln 400.
        let batch: Vec<Request> = (0..20)
            .map(|i| Request {
                id: i,
                model: 0,
                input_type: InputType::Image,
                input_shape: vec![1],
                slo_ms: 20.0,
                arrival_us: 0,
            })
            .collect();
        let mut lat = BTreeMap::new();
        for i in 0..20 {
            lat.insert(i, 50_000);
        }
        let outcome = ExecutionOutcome {
            model: 0,
            per_request_latency_us: lat,
            queue_us: BTreeMap::new(),
            inference_us: 50_000,
            mem_used_mb: 1.0,
            overflowed: false,
            slo_violations: BTreeSet::new(),
            completion_us: 50_000,
            requests: batch.clone(),
        };
        let r = reward(&outcome, &batch, 4, 2, 200.0);
        assert!((r - 400f64.ln()).abs() < 1e-9);

        // Overflow is the flat penalty.
        let over = ExecutionOutcome {
            overflowed: true,
            per_request_latency_us: BTreeMap::new(),
            ..outcome.clone()
        };
        assert_eq!(reward(&over, &batch, 4, 2, 200.0), -10.0);

        // Latency equal to the slot budget: U = ln T.
        let mut lat = BTreeMap::new();
        for i in 0..20 {
            lat.insert(i, 200_000);
        }
        let at_budget = ExecutionOutcome {
            per_request_latency_us: lat,
            ..outcome
        };
        let r = reward(&at_budget, &batch, 4, 2, 200.0);
        assert!((r - 100f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn q_loss_zero_at_fixed_point() {
        // Terminal transition with r chosen to equal both current Q values.
        let mut agent = SacAgent::with_actions(2, 4, &tiny_params(), 5);
        agent.sync_targets();
        let s = vec![0.3, -0.2];
        let q1 = agent.q1.forward(&s).unwrap();
        let q2 = agent.q2.forward(&s).unwrap();
        // Find an action where both nets agree (force q2 = q1 by copying).
        agent.q2 = agent.q1.clone();
        agent.sync_targets();
        let _ = q2;
        let t = transition(s, 1, q1[1], true);
        let (loss, g1, g2) = agent.q_loss(&[&t]).unwrap();
        assert!(loss.abs() < 1e-18);
        assert!(g1.global_norm() < 1e-12);
        assert!(g2.global_norm() < 1e-12);
    }

    #[test]
    fn q_target_terminal_ignores_next_state() {
        let agent = SacAgent::with_actions(2, 4, &tiny_params(), 6);
        let mut t = transition(vec![0.1, 0.2], 2, 1.5, true);
        t.s_next = vec![99.0, -99.0];
        let (loss_a, _, _) = agent.q_loss(&[&t]).unwrap();
        t.s_next = vec![0.0, 0.0];
        let (loss_b, _, _) = agent.q_loss(&[&t]).unwrap();
        assert_eq!(loss_a, loss_b);
    }

    #[test]
    fn policy_gradient_zero_at_uniform_when_q_equal() {
        let mut agent = SacAgent::with_actions(2, 4, &tiny_params(), 7);
        // Zero policy net -> uniform pi; equal Q across actions.
        agent.policy = Mlp::zeros(&[2, 8, 4]);
        agent.q1 = Mlp::zeros(&[2, 8, 4]);
        agent.q2 = Mlp::zeros(&[2, 8, 4]);
        let t = transition(vec![0.5, 0.5], 0, 0.0, true);
        let (_, grads) = agent.policy_loss(&[&t]).unwrap();
        assert!(grads.global_norm() < 1e-12);
    }

    #[test]
    fn policy_loss_decreases_towards_greedy_when_alpha_tiny() {
        let mut agent = SacAgent::with_actions(1, 2, &tiny_params(), 8);
        agent.set_alpha(1e-9);
        let t = transition(vec![1.0], 0, 0.0, true);
        // Drive policy towards argmax Q over a few steps and watch the loss.
        let (l0, _) = agent.policy_loss(&[&t]).unwrap();
        for _ in 0..50 {
            let (_, states, g) = agent.policy_loss_parts(&[&t]).unwrap();
            agent.policy.backward_step(&states, &g, 1e-2).unwrap();
        }
        let (l1, _) = agent.policy_loss(&[&t]).unwrap();
        assert!(l1 < l0);
    }

    #[test]
    fn boltzmann_policy_is_stationary_for_policy_loss() {
        // pi = softmax(qmin / alpha) should have (near) zero logit gradient.
        let mut agent = SacAgent::with_actions(2, 4, &tiny_params(), 9);
        let alpha = 0.7;
        agent.set_alpha(alpha);
        let s = vec![0.2, -0.4];
        let q1 = agent.q1.forward(&s).unwrap();
        let q2 = agent.q2.forward(&s).unwrap();
        let qmin: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| a.min(*b)).collect();
        let scaled: Vec<f64> = qmin.iter().map(|q| q / alpha).collect();
        let target_pi = softmax(&scaled);
        // Install a policy net that produces exactly those logits for s:
        // zero weights, bias = scaled logits (single linear layer).
        let mut policy = Mlp::zeros(&[2, 4]);
        let mut flat = policy.flat_params();
        for (i, z) in scaled.iter().enumerate() {
            flat[2 * 4 + i] = *z;
        }
        policy.set_flat_params(&flat);
        agent.policy = policy;
        let got = agent.policy_probs(&s).unwrap();
        for (a, b) in got.iter().zip(&target_pi) {
            assert!((a - b).abs() < 1e-12);
        }
        let t = transition(s, 0, 0.0, true);
        let (_, _, grad_logits) = agent.policy_loss_parts(&[&t]).unwrap();
        for g in &grad_logits[0] {
            assert!(g.abs() < 1e-8, "logit gradient {g}");
        }
    }

    #[test]
    fn temperature_gradient_sign_and_fixed_point() {
        let params = SacParams {
            hidden: vec![8],
            target_entropy_factor: 1.0, // H̄ = ln 4 exactly
            ..tiny_params()
        };
        let mut agent = SacAgent::with_actions(2, 4, &params, 10);
        // Uniform policy: entropy = ln 4 = target -> zero gradient.
        agent.policy = Mlp::zeros(&[2, 8, 4]);
        let t = transition(vec![0.1, 0.1], 0, 0.0, true);
        let (_, g) = agent.temperature_loss(&[&t]).unwrap();
        assert!(g.abs() < 1e-12);

        // Nearly deterministic policy: entropy below target -> the descent
        // direction on log_alpha is positive (alpha pushed up).
        let mut policy = Mlp::zeros(&[2, 4]);
        let mut flat = policy.flat_params();
        flat[2 * 4] = 50.0; // huge bias on one logit
        policy.set_flat_params(&flat);
        agent.policy = policy;
        let (_, g) = agent.temperature_loss(&[&t]).unwrap();
        assert!(g < 0.0, "gradient {g} should push log_alpha up");
    }

    #[test]
    fn select_action_modes() {
        let mut agent = SacAgent::with_actions(1, 8, &tiny_params(), 11);
        // Logit spike at index 7.
        let mut policy = Mlp::zeros(&[1, 8]);
        let mut flat = policy.flat_params();
        flat[8 + 7] = 3.0;
        policy.set_flat_params(&flat);
        agent.policy = policy;
        let mut rng = crate::rng::stream(0, "t");
        assert_eq!(
            agent.select_action(&[0.0], SelectMode::Eval, &mut rng).unwrap(),
            7
        );
        // All-equal logits tie-break to index 0.
        agent.policy = Mlp::zeros(&[1, 8]);
        assert_eq!(
            agent.select_action(&[0.0], SelectMode::Eval, &mut rng).unwrap(),
            0
        );
    }

    #[test]
    fn train_mode_frequencies_match_policy() {
        let mut agent = SacAgent::with_actions(1, 4, &tiny_params(), 12);
        let mut policy = Mlp::zeros(&[1, 4]);
        let mut flat = policy.flat_params();
        flat[4..8].copy_from_slice(&[0.0, 1.0, 2.0, -1.0]);
        policy.set_flat_params(&flat);
        agent.policy = policy;
        let pi = agent.policy_probs(&[0.0]).unwrap();
        let mut rng = crate::rng::stream(99, "freq");
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[agent
                .select_action(&[0.0], SelectMode::Train, &mut rng)
                .unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip(&pi) {
            let freq = *c as f64 / n as f64;
            assert!((freq - p).abs() < 0.01, "freq {freq} vs p {p}");
        }
    }

    #[test]
    fn polyak_tau_one_equals_live() {
        let mut agent = SacAgent::with_actions(2, 4, &tiny_params(), 13);
        let t = transition(vec![0.1, -0.1], 1, 0.5, true);
        for _ in 0..4 {
            agent.observe(t.clone());
        }
        let mut rng = crate::rng::stream(1, "r");
        agent.maybe_update(&mut rng).unwrap().unwrap();
        assert_ne!(agent.q1_target.flat_params(), agent.q1.flat_params());
        agent.sync_targets();
        assert_eq!(agent.q1_target.flat_params(), agent.q1.flat_params());
        assert_eq!(agent.q2_target.flat_params(), agent.q2.flat_params());
    }

    #[test]
    fn warmup_blocks_updates() {
        let mut agent = SacAgent::with_actions(1, 2, &tiny_params(), 14);
        agent.observe(transition(vec![0.0], 0, 1.0, true));
        let mut rng = crate::rng::stream(1, "r");
        assert!(agent.maybe_update(&mut rng).unwrap().is_none());
    }

    #[test]
    fn alpha_stays_positive() {
        let mut agent = SacAgent::with_actions(1, 2, &tiny_params(), 15);
        for i in 0..64 {
            agent.observe(transition(vec![i as f64 / 64.0], i % 2, 1.0, true));
        }
        let mut rng = crate::rng::stream(2, "r");
        for _ in 0..200 {
            agent.maybe_update(&mut rng).unwrap();
        }
        assert!(agent.alpha() > 0.0);
    }

    #[test]
    fn checkpoint_round_trip_and_catalog_guard() {
        let agent = SacAgent::with_actions(3, 4, &tiny_params(), 16);
        let names = vec!["a".to_string(), "b".to_string()];
        let text = agent.to_checkpoint(&names);
        let back = SacAgent::from_checkpoint(&text, &names).unwrap();
        assert_eq!(back.q1.flat_params(), agent.q1.flat_params());
        assert_eq!(back.policy.flat_params(), agent.policy.flat_params());
        assert_eq!(back.alpha(), agent.alpha());
        let other = vec!["a".to_string()];
        assert!(SacAgent::from_checkpoint(&text, &other).is_err());
    }
}
