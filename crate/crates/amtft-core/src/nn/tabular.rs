//! Tabular softmax actor-critic: per-state action logits and values.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::Observation;
use crate::rng::Rng;

use super::{
    log_softmax_at, softmax, Backward, ParamKind, ParamLayout, ParameterVector, TrainSample,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularSpec {
    pub num_states: usize,
    pub num_actions: usize,
}

impl TabularSpec {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        TabularSpec { num_states, num_actions }
    }

    pub fn layout(&self) -> ParamLayout {
        let mut b = ParamLayout::builder();
        b.push("logits", &[self.num_states, self.num_actions], ParamKind::Weight);
        b.push("values", &[self.num_states], ParamKind::Weight);
        b.finish()
    }

    /// Zero logits (uniform policy) and zero values.
    pub fn init(&self, rng: &mut Rng) -> ParameterVector {
        let mut params = ParameterVector::zeros(self.layout().total);
        // Tiny symmetric noise breaks ties between otherwise identical
        // states while keeping the initial policy effectively uniform.
        for v in params.data[..self.num_states * self.num_actions].iter_mut() {
            *v = rng.gen_range(-1e-3..1e-3);
        }
        params
    }

    fn state_of(&self, obs: &Observation) -> Result<usize> {
        match obs {
            Observation::OneHot { index, len } if *len == self.num_states && *index < *len => Ok(*index),
            other => Err(Error::ShapeMismatch {
                expected: format!("one-hot of length {}", self.num_states),
                got: format!("{other:?}"),
            }),
        }
    }

    fn logits_of<'a>(&self, params: &'a ParameterVector, state: usize) -> &'a [f64] {
        &params.data[state * self.num_actions..(state + 1) * self.num_actions]
    }

    fn value_of(&self, params: &ParameterVector, state: usize) -> f64 {
        params.data[self.num_states * self.num_actions + state]
    }

    pub fn heads(&self, params: &ParameterVector, obs: &Observation) -> Result<(Vec<f64>, f64)> {
        let s = self.state_of(obs)?;
        Ok((self.logits_of(params, s).to_vec(), self.value_of(params, s)))
    }

    pub fn objective(&self, params: &ParameterVector, batch: &[TrainSample<'_>]) -> Result<f64> {
        let mut total = 0.0;
        for sample in batch {
            let s = self.state_of(sample.obs)?;
            let logits = self.logits_of(params, s);
            total += sample.value_weight * self.value_of(params, s)
                + sample.policy_weight * log_softmax_at(logits, sample.action)
                + sample.logit_weight * logits[sample.action];
        }
        Ok(total)
    }

    pub fn backward(&self, params: &ParameterVector, batch: &[TrainSample<'_>]) -> Result<Backward> {
        let mut grad = ParameterVector::zeros(params.len());
        let value_base = self.num_states * self.num_actions;
        for sample in batch {
            let s = self.state_of(sample.obs)?;
            let probs = softmax(self.logits_of(params, s));
            let row = &mut grad.data[s * self.num_actions..(s + 1) * self.num_actions];
            for (a, p) in probs.iter().enumerate() {
                // d log pi(a*)/d logit_a = 1{a = a*} - pi(a)
                let indicator = if a == sample.action { 1.0 } else { 0.0 };
                row[a] += sample.policy_weight * (indicator - p) + sample.logit_weight * indicator;
            }
            grad.data[value_base + s] += sample.value_weight;
        }
        Ok(Backward {
            grad,
            buffer_updates: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Model, Phase};
    use crate::rng::stream;

    #[test]
    fn uniform_init_gives_near_half_half() {
        let spec = TabularSpec::new(5, 2);
        let model = Model::Tabular(spec);
        let params = model.init(&mut stream(0, "init", 0));
        for s in 0..5 {
            let obs = Observation::OneHot { index: s, len: 5 };
            let (probs, value) = model.forward(&params, &obs, Phase::Eval).unwrap();
            assert!((probs[0] - 0.5).abs() < 1e-3);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(value, 0.0);
        }
    }

    #[test]
    fn softmax_gradient_closed_form() {
        // d log pi(a)/d logit_a = 1 - pi(a)
        let spec = TabularSpec::new(2, 3);
        let model = Model::Tabular(spec);
        let mut params = ParameterVector::zeros(model.layout().total);
        params.data[0] = 0.7;
        params.data[1] = -0.2;
        params.data[2] = 0.1;
        let obs = Observation::OneHot { index: 0, len: 2 };
        let batch = [TrainSample::actor_critic(&obs, 1, 0.0, 1.0)];
        let bw = model.backward(&params, &batch).unwrap();
        let probs = softmax(&params.data[0..3]);
        assert!((bw.grad.data[1] - (1.0 - probs[1])).abs() < 1e-12);
        assert!((bw.grad.data[0] + probs[0]).abs() < 1e-12);
        assert!((bw.grad.data[2] + probs[2]).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_zero_gradient() {
        let spec = TabularSpec::new(3, 2);
        let model = Model::Tabular(spec);
        let params = model.init(&mut stream(1, "init", 0));
        let obs = Observation::OneHot { index: 2, len: 3 };
        let batch = [TrainSample {
            obs: &obs,
            action: 0,
            value_weight: 0.0,
            policy_weight: 0.0,
            logit_weight: 0.0,
        }];
        let bw = model.backward(&params, &batch).unwrap();
        assert!(bw.grad.data.iter().all(|&g| g == 0.0));
    }
}
