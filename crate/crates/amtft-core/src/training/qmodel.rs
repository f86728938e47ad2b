//! Off-policy Q-model training: a second training stage that fits
//! Q_CC(s, a) for one player while that player's behavior mixes the
//! cooperative, defecting, and uniform-random policies (so states off the
//! cooperative path get sampled) and the partner keeps playing the
//! cooperative policy.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{run_episode, EpisodeStreams, Game, TerminationRule, Trajectory};
use crate::nn::{
    ArtifactMeta, Model, Optimizer, OptimizerKind, Phase, PolicyArtifact, RoleTag,
    TrainSample,
};
use crate::policy::{PolicyAgent, PolicyRef, UniformPolicy};
use crate::rng;

/// Approximation of one player's Q function under cooperative
/// continuation; reads per-action estimates from the raw policy head.
#[derive(Clone, Debug)]
pub struct QModel {
    pub artifact: PolicyArtifact,
    /// The player whose action values this model estimates.
    pub player: usize,
}

impl QModel {
    pub fn q_values<G: Game>(&self, game: &G, state: &G::State) -> Vec<f64> {
        let obs = game.observe(state, self.player);
        let (q, _) = self
            .artifact
            .model
            .heads(&self.artifact.params, &obs, Phase::Eval)
            .expect("q-model/observation mismatch");
        q
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QTrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub continuation: f64,
    /// Behavior mixture weights over {cooperative, defect, random},
    /// re-drawn each episode.
    pub mixture: [f64; 3],
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Per-batch multiplicative learning-rate decay (1.0 disables it).
    pub lr_decay: f64,
}

impl QTrainConfig {
    pub fn new(episodes: usize, discount: f64, continuation: f64, seed: u64) -> Self {
        QTrainConfig {
            episodes,
            batch_size: 16,
            learning_rate: 0.05,
            discount,
            continuation,
            mixture: [1.0 / 3.0; 3],
            seed,
            optimizer: OptimizerKind::adam(),
            lr_decay: 1.0,
        }
    }
}

/// Fit Q for `player` by off-policy Bellman iteration with targets
/// r + d * Q(s', a') where a' is the cooperative policy's modal action.
/// Episode ends are treated as truncations (bootstrapped), so the fit
/// targets the infinite-horizon discounted Q.
pub fn train_q_offpolicy<G: Game>(
    game: &G,
    player: usize,
    coop: &[PolicyRef<G>; 2],
    defect: &[PolicyRef<G>; 2],
    model: Model,
    cfg: &QTrainConfig,
) -> Result<QModel> {
    if cfg.learning_rate <= 0.0 || cfg.batch_size == 0 {
        return Err(Error::Config("q training needs positive learning rate and batch".into()));
    }
    let partner = 1 - player;
    let rule = TerminationRule::Geometric {
        continuation: cfg.continuation,
    };
    let mixture_total: f64 = cfg.mixture.iter().sum();
    let mut params = model.init(&mut rng::stream(cfg.seed, "q-init", player as u64));
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model.layout());
    let mut episode = 0u64;
    let mut remaining = cfg.episodes;
    while remaining > 0 {
        let count = remaining.min(cfg.batch_size);
        let mut batch: Vec<Trajectory<G::State>> = Vec::with_capacity(count);
        for i in 0..count {
            let mut streams = EpisodeStreams::new(cfg.seed, "q-episode", episode + i as u64);
            // Behavior component for this episode.
            let draw: f64 = streams.env.gen::<f64>() * mixture_total;
            let behavior: PolicyRef<G> = if draw < cfg.mixture[0] {
                coop[player].clone()
            } else if draw < cfg.mixture[0] + cfg.mixture[1] {
                defect[player].clone()
            } else {
                std::sync::Arc::new(UniformPolicy)
            };
            let mut learner = PolicyAgent::sampling(player, behavior);
            let mut partner_agent = PolicyAgent::sampling(partner, coop[partner].clone());
            let traj = if player == 0 {
                run_episode(game, &mut learner, &mut partner_agent, &rule, &mut streams)?
            } else {
                run_episode(game, &mut partner_agent, &mut learner, &rule, &mut streams)?
            };
            batch.push(traj);
        }
        episode += count as u64;
        remaining -= count;
        // Bellman targets under the current estimate.
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut residuals = Vec::new();
        for traj in &batch {
            for (t, step) in traj.steps.iter().enumerate() {
                let next_state = if t + 1 < traj.steps.len() {
                    &traj.steps[t + 1].state
                } else {
                    &traj.final_state
                };
                let next_obs = game.observe(next_state, player);
                let (next_q, _) = model.heads(&params, &next_obs, Phase::Eval)?;
                let next_action = coop[player].modal(game, next_state, player);
                let target = step.rewards[player] + cfg.discount * next_q[next_action];
                let o = game.observe(&step.state, player);
                let (q, _) = model.heads(&params, &o, Phase::Eval)?;
                let a = step.action.of(player);
                obs.push(o);
                actions.push(a);
                residuals.push(target - q[a]);
            }
        }
        if obs.is_empty() {
            continue;
        }
        let n = obs.len() as f64;
        let samples: Vec<TrainSample<'_>> = obs
            .iter()
            .zip(&actions)
            .zip(&residuals)
            .map(|((o, &a), &r)| TrainSample {
                obs: o,
                action: a,
                value_weight: 0.0,
                policy_weight: 0.0,
                logit_weight: r / n,
            })
            .collect();
        let bw = model.backward(&params, &samples)?;
        opt.step(&mut params, &bw.grad);
        opt.learning_rate *= cfg.lr_decay;
        bw.apply_buffers(&mut params);
        if !params.all_finite() {
            return Err(Error::NonFinite {
                context: "q-model parameters".into(),
            });
        }
    }
    Ok(QModel {
        artifact: PolicyArtifact {
            model,
            params,
            meta: ArtifactMeta {
                role: RoleTag::Q,
                player,
                seed: cfg.seed,
                config: serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null),
                curve_tail: Vec::new(),
            },
        },
        player,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::rpd::{pd_game, PdParams, PdState};
    use crate::nn::TabularSpec;
    use crate::policy::FixedActionPolicy;
    use std::sync::Arc;

    #[test]
    fn identical_reference_gives_zero_debit_difference() {
        let game = pd_game(PdParams::new(2.0));
        let coop: [PolicyRef<_>; 2] = [Arc::new(FixedActionPolicy(0)), Arc::new(FixedActionPolicy(0))];
        let defect: [PolicyRef<_>; 2] = [Arc::new(FixedActionPolicy(1)), Arc::new(FixedActionPolicy(1))];
        let cfg = QTrainConfig::new(48, 0.9, 0.95, 7);
        let q = train_q_offpolicy(&game, 1, &coop, &defect, Model::Tabular(TabularSpec::new(5, 2)), &cfg).unwrap();
        let values = q.q_values(&game, &PdState::CC);
        let reference = values[0];
        assert_eq!(reference - reference, 0.0);
        assert_eq!(values.len(), 2);
    }
}
