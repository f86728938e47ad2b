//! Policy/value function approximation with in-repo reverse-mode gradients.
//!
//! Two architectures: a tabular softmax actor-critic for enumerable games
//! and a small convolutional actor-critic for grid observations. Both map
//! an observation to (action distribution, state value) and share a flat
//! parameter vector plus a shape manifest.

pub mod checkpoint;
mod conv;
pub mod optim;
mod tabular;

pub use checkpoint::{load_artifact, save_artifact, ArtifactMeta, PolicyArtifact, RoleTag};
pub use conv::ConvSpec;
pub use optim::{Optimizer, OptimizerKind};
pub use tabular::TabularSpec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::Observation;
use crate::rng::Rng;

/// Flat parameter storage with a version tag. The shape manifest lives on
/// the model spec; `Model::layout` describes how the data splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub version: u32,
    pub data: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        ParameterVector {
            version: 1,
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Buffers are updated by forward statistics, not by the optimizer.
    pub fn is_buffer(&self) -> bool {
        matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamLayout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder { entries: Vec::new(), total: 0 }
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

pub struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl LayoutBuilder {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], kind: ParamKind) -> usize {
        let len: usize = shape.iter().product();
        let offset = self.total;
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            kind,
            offset,
            len,
        });
        self.total += len;
        offset
    }

    pub fn finish(self) -> ParamLayout {
        ParamLayout {
            entries: self.entries,
            total: self.total,
        }
    }
}

/// Whether batch normalization uses per-batch statistics (`Train`) or the
/// frozen running averages (`Eval`). Rollouts and action selection always
/// use `Eval` so replays are deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// One weighted sample of the training objective
/// `value_weight * V(s) + policy_weight * log pi(a|s) + logit_weight * z_a(s)`,
/// where `z_a` is the raw policy-head output (used to fit Q models).
#[derive(Clone, Copy, Debug)]
pub struct TrainSample<'a> {
    pub obs: &'a Observation,
    pub action: usize,
    pub value_weight: f64,
    pub policy_weight: f64,
    pub logit_weight: f64,
}

impl<'a> TrainSample<'a> {
    pub fn actor_critic(obs: &'a Observation, action: usize, value_weight: f64, policy_weight: f64) -> Self {
        TrainSample {
            obs,
            action,
            value_weight,
            policy_weight,
            logit_weight: 0.0,
        }
    }
}

/// Gradient of the training objective plus batch-statistic buffer updates
/// (running mean/var) to apply after the optimizer step.
#[derive(Clone, Debug)]
pub struct Backward {
    pub grad: ParameterVector,
    pub buffer_updates: Vec<(usize, Vec<f64>)>,
}

impl Backward {
    pub fn apply_buffers(&self, params: &mut ParameterVector) {
        for (offset, values) in &self.buffer_updates {
            params.data[*offset..*offset + values.len()].copy_from_slice(values);
        }
    }
}

/// A function-approximation architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum Model {
    Tabular(TabularSpec),
    Conv(ConvSpec),
}

impl Model {
    pub fn layout(&self) -> ParamLayout {
        match self {
            Model::Tabular(spec) => spec.layout(),
            Model::Conv(spec) => spec.layout(),
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Model::Tabular(spec) => spec.num_actions,
            Model::Conv(spec) => spec.num_actions,
        }
    }

    /// Total parameter count (cheap; no layout construction).
    pub fn num_params(&self) -> usize {
        match self {
            Model::Tabular(spec) => spec.num_states * spec.num_actions + spec.num_states,
            Model::Conv(spec) => spec.num_params(),
        }
    }

    /// Fan-in-scaled uniform initialization, seed-reproducible.
    pub fn init(&self, rng: &mut Rng) -> ParameterVector {
        match self {
            Model::Tabular(spec) => spec.init(rng),
            Model::Conv(spec) => spec.init(rng),
        }
    }

    pub fn check_params(&self, params: &ParameterVector) -> Result<()> {
        let expected = self.num_params();
        if params.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} parameters"),
                got: format!("{}", params.len()),
            });
        }
        Ok(())
    }

    /// Action distribution and state value.
    pub fn forward(&self, params: &ParameterVector, obs: &Observation, phase: Phase) -> Result<(Vec<f64>, f64)> {
        let (logits, value) = self.heads(params, obs, phase)?;
        Ok((softmax(&logits), value))
    }

    /// Raw policy-head outputs and state value (no softmax). Q models read
    /// their per-action estimates from these outputs.
    pub fn heads(&self, params: &ParameterVector, obs: &Observation, phase: Phase) -> Result<(Vec<f64>, f64)> {
        self.check_params(params)?;
        match self {
            Model::Tabular(spec) => spec.heads(params, obs),
            Model::Conv(spec) => spec.heads(params, std::slice::from_ref(obs), phase).map(|mut v| v.remove(0)),
        }
    }

    /// Batched heads; one forward pass shares batch statistics in `Train`.
    pub fn heads_batch(&self, params: &ParameterVector, obs: &[&Observation], phase: Phase) -> Result<Vec<(Vec<f64>, f64)>> {
        self.check_params(params)?;
        match self {
            Model::Tabular(spec) => obs.iter().map(|o| spec.heads(params, o)).collect(),
            Model::Conv(spec) => {
                let owned: Vec<Observation> = obs.iter().map(|o| (*o).clone()).collect();
                spec.heads(params, &owned, phase)
            }
        }
    }

    /// Scalar training objective over a batch (Train phase throughout).
    pub fn objective(&self, params: &ParameterVector, batch: &[TrainSample<'_>]) -> Result<f64> {
        self.check_params(params)?;
        match self {
            Model::Tabular(spec) => spec.objective(params, batch),
            Model::Conv(spec) => spec.objective(params, batch),
        }
    }

    /// Gradient of the training objective with respect to the parameters.
    pub fn backward(&self, params: &ParameterVector, batch: &[TrainSample<'_>]) -> Result<Backward> {
        if batch.is_empty() {
            return Err(Error::Config("backward over an empty batch".into()));
        }
        self.check_params(params)?;
        match self {
            Model::Tabular(spec) => spec.backward(params, batch),
            Model::Conv(spec) => spec.backward(params, batch),
        }
    }
}

/// Numerically stable softmax; valid distribution for any finite logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// log softmax entry for the chosen action.
pub fn log_softmax_at(logits: &[f64], action: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits[action] - log_sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[1.0, 1.0, 1.0, 1.0]);
        for v in &p {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_distribution_for_extreme_logits() {
        let p = softmax(&[1000.0, -1000.0, 3.0]);
        assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_matches_softmax() {
        let logits = [0.3, -1.2, 2.0];
        let p = softmax(&logits);
        for a in 0..3 {
            assert!((log_softmax_at(&logits, a) - p[a].ln()).abs() < 1e-12);
        }
    }
}
