//! Per-vehicle price-factor selection by mean-field Q-learning.
//!
//! Each vehicle picks one multiplier on the base price of the requests in its
//! neighbourhood. Its Q-function is conditioned on a discretised observation
//! and on the mean action of its neighbours; actions are drawn from a
//! Boltzmann policy and values move toward `J + γ·V_MF(next)`.
//!
//! All vehicles share one table and evaluate it on their own observation.
//! Independent Q-learning is the special case where the mean action is held
//! at the uniform vector.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PricingError {
    #[error("learning rate must lie in (0, 1], got {0}")]
    LearningRate(f64),
    #[error("discount must lie in [0, 1), got {0}")]
    Discount(f64),
    #[error("temperature must be finite and non-negative, got {0}")]
    Temperature(f64),
    #[error("action set must be non-empty with positive finite factors")]
    ActionSet,
    #[error("action index {index} out of range for {size} actions")]
    ActionIndex { index: usize, size: usize },
    #[error("mean-action discretisation needs at least one bin")]
    MeanBins,
}

/// Discrete price multipliers a vehicle can choose from.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    factors: Vec<f64>,
}

impl ActionSet {
    pub fn new(factors: Vec<f64>) -> Result<Self, PricingError> {
        if factors.is_empty() || factors.len() > u8::MAX as usize || factors.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(PricingError::ActionSet);
        }
        Ok(ActionSet { factors })
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factor(&self, action: usize) -> f64 {
        self.factors[action]
    }

    /// Index of the factor closest to `factor`.
    pub fn index_of(&self, factor: f64) -> usize {
        let mut best = 0;
        for (i, f) in self.factors.iter().enumerate() {
            if (f - factor).abs() < (self.factors[best] - factor).abs() {
                best = i;
            }
        }
        best
    }
}

impl Default for ActionSet {
    fn default() -> Self {
        ActionSet { factors: vec![0.8, 0.9, 1.0, 1.1, 1.2] }
    }
}

pub fn candidate_price(base: f64, factor: f64) -> f64 {
    base * factor
}

/// Average one-hot action of the neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanAction(Vec<f64>);

impl MeanAction {
    pub fn uniform(size: usize) -> Self {
        MeanAction(vec![1.0 / size as f64; size])
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    /// Rounds each share to the nearest multiple of `1/bins`.
    pub fn key(&self, bins: u8) -> Vec<u8> {
        self.0.iter().map(|p| (p * bins as f64).round() as u8).collect()
    }
}

/// Mean of the neighbours' one-hot actions; uniform when there are none.
pub fn mean_action(neighbor_actions: &[usize], action_set_size: usize) -> Result<MeanAction, PricingError> {
    if neighbor_actions.is_empty() {
        return Ok(MeanAction::uniform(action_set_size));
    }
    let mut counts = vec![0.0; action_set_size];
    for &a in neighbor_actions {
        if a >= action_set_size {
            return Err(PricingError::ActionIndex { index: a, size: action_set_size });
        }
        counts[a] += 1.0;
    }
    let n = neighbor_actions.len() as f64;
    Ok(MeanAction(counts.into_iter().map(|c| c / n).collect()))
}

/// Discretised local view `(own zone, neighbours, reachable requests, supply/demand)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Observation(pub [u16; 4]);

impl Observation {
    /// Counts are capped at `cap`; the supply/demand bucket compares the
    /// vehicle plus its neighbours against the requests it can reach.
    pub fn new(zone: u32, neighbor_count: usize, request_count: usize, cap: u16) -> Self {
        let supply = neighbor_count + 1;
        let ratio_bucket = if request_count == 0 {
            0
        } else if supply >= 2 * request_count {
            1
        } else if supply >= request_count {
            2
        } else if 2 * supply >= request_count {
            3
        } else {
            4
        };
        Observation([
            zone.min(u16::MAX as u32) as u16,
            (neighbor_count.min(cap as usize)) as u16,
            (request_count.min(cap as usize)) as u16,
            ratio_bucket,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParams {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub mean_bins: u8,
}

impl QParams {
    pub fn validate(&self) -> Result<(), PricingError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(PricingError::LearningRate(self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(PricingError::Discount(self.gamma));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(PricingError::Temperature(self.beta));
        }
        if self.mean_bins == 0 {
            return Err(PricingError::MeanBins);
        }
        Ok(())
    }
}

impl Default for QParams {
    fn default() -> Self {
        QParams { alpha: 0.1, gamma: 0.9, beta: 1.0, mean_bins: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct QKey {
    obs: Observation,
    action: u8,
    mean: Vec<u8>,
}

/// One experience tuple; `next == None` marks a terminal step.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingTransition {
    pub obs: Observation,
    pub action: usize,
    pub mean: MeanAction,
    pub reward: f64,
    pub next: Option<(Observation, MeanAction)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    params: QParams,
    actions: ActionSet,
    values: HashMap<QKey, f64>,
}

impl QTable {
    pub fn new(params: QParams, actions: ActionSet) -> Result<Self, PricingError> {
        params.validate()?;
        Ok(QTable { params, actions, values: HashMap::new() })
    }

    pub fn params(&self) -> &QParams {
        &self.params
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn key(&self, obs: &Observation, action: usize, mean: &MeanAction) -> QKey {
        QKey { obs: *obs, action: action as u8, mean: mean.key(self.params.mean_bins) }
    }

    /// Stored value; missing entries read as zero.
    pub fn get(&self, obs: &Observation, action: usize, mean: &MeanAction) -> f64 {
        self.values.get(&self.key(obs, action, mean)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, obs: &Observation, action: usize, mean: &MeanAction, value: f64) {
        let key = self.key(obs, action, mean);
        self.values.insert(key, value);
    }

    pub fn q_values(&self, obs: &Observation, mean: &MeanAction) -> Vec<f64> {
        (0..self.actions.len()).map(|a| self.get(obs, a, mean)).collect()
    }

    /// Boltzmann distribution `∝ exp(β·Q)` over the action set.
    pub fn policy(&self, obs: &Observation, mean: &MeanAction) -> Vec<f64> {
        boltzmann(&self.q_values(obs, mean), self.params.beta)
    }

    pub fn select_action<R: Rng + ?Sized>(&self, obs: &Observation, mean: &MeanAction, rng: &mut R) -> usize {
        sample_index(&self.policy(obs, mean), rng)
    }

    /// Highest-valued action, lowest index on ties.
    pub fn greedy(&self, obs: &Observation, mean: &MeanAction) -> usize {
        let q = self.q_values(obs, mean);
        let mut best = 0;
        for (i, v) in q.iter().enumerate() {
            if *v > q[best] {
                best = i;
            }
        }
        best
    }

    /// Policy-weighted value of the next observation.
    pub fn mean_field_value(&self, obs: &Observation, mean: &MeanAction) -> f64 {
        let q = self.q_values(obs, mean);
        boltzmann(&q, self.params.beta).iter().zip(&q).map(|(p, v)| p * v).sum()
    }

    /// Applies `Q ← (1−α)·Q + α·(J + γ·V_MF(next))` and returns the new value.
    pub fn update(&mut self, t: &PricingTransition) -> Result<f64, PricingError> {
        if t.action >= self.actions.len() {
            return Err(PricingError::ActionIndex { index: t.action, size: self.actions.len() });
        }
        let future = match &t.next {
            Some((obs, mean)) => self.mean_field_value(obs, mean),
            None => 0.0,
        };
        let QParams { alpha, gamma, .. } = self.params;
        let old = self.get(&t.obs, t.action, &t.mean);
        let new = (1.0 - alpha) * old + alpha * (t.reward + gamma * future);
        self.set(&t.obs, t.action, &t.mean, new);
        Ok(new)
    }

    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<(), CheckpointError> {
        let mut w = checkpoint::Writer::new(out, "q-table")?;
        w.field("alpha", self.params.alpha)?;
        w.field("gamma", self.params.gamma)?;
        w.field("beta", self.params.beta)?;
        w.field("mean_bins", self.params.mean_bins)?;
        w.field("actions", checkpoint::join(self.actions.factors()))?;
        let mut entries: Vec<(&QKey, &f64)> = self.values.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        w.field("entries", entries.len())?;
        for (k, v) in entries {
            w.line(&format!("{} {} {} {}", checkpoint::join(&k.obs.0), k.action, checkpoint::join(&k.mean), v))?;
        }
        w.finish()
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self, CheckpointError> {
        let mut r = checkpoint::Reader::new(input, "q-table")?;
        let alpha = r.parse_field("alpha")?;
        let gamma = r.parse_field("gamma")?;
        let beta = r.parse_field("beta")?;
        let mean_bins = r.parse_field("mean_bins")?;
        let raw = r.field("actions")?;
        let factors = checkpoint::split(&raw).ok_or_else(|| r.error(format!("invalid actions {raw:?}")))?;
        let params = QParams { alpha, gamma, beta, mean_bins };
        let actions = ActionSet::new(factors).map_err(|e| r.error(e.to_string()))?;
        let mut table = QTable::new(params, actions).map_err(|e| r.error(e.to_string()))?;
        let n: usize = r.parse_field("entries")?;
        for _ in 0..n {
            let line = r.next_line()?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [obs, action, mean, value] = parts.as_slice() else {
                return Err(r.error(format!("expected 4 columns, found {line:?}")));
            };
            let obs: Vec<u16> = checkpoint::split(obs).ok_or_else(|| r.error(format!("invalid observation {obs:?}")))?;
            let obs: [u16; 4] = obs.try_into().map_err(|_| r.error("observation must have 4 features".into()))?;
            let action: u8 = r.parse(action, "action")?;
            let mean: Vec<u8> = checkpoint::split(mean).ok_or_else(|| r.error(format!("invalid mean action {mean:?}")))?;
            let value: f64 = r.parse(value, "value")?;
            table.values.insert(QKey { obs: Observation(obs), action, mean }, value);
        }
        Ok(table)
    }
}

/// Softmax of `β·q`, computed after subtracting the maximum.
pub fn boltzmann(q: &[f64], beta: f64) -> Vec<f64> {
    let logits: Vec<f64> = q.iter().map(|v| beta * v).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
