//! Self-play advantage actor-critic training under selfish and
//! cooperative reward schedules.

pub mod qmodel;
pub mod sweep;

pub use qmodel::{train_q_offpolicy, QModel, QTrainConfig};
pub use sweep::{probe_train_one_cell, train_pd_sweep, SweepConfig, SweepOutcome, SweepRow};

use std::marker::PhantomData;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{run_episode, Agent, EpisodeStreams, Game, Observation, TerminationRule, Trajectory};
use crate::nn::{
    ArtifactMeta, Model, Optimizer, OptimizerKind, ParameterVector, Phase, PolicyArtifact, RoleTag,
    TrainSample,
};
use crate::policy::sample_index;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardSchedule {
    /// Each player maximizes its own reward.
    Selfish,
    /// Both players receive the sum of rewards.
    Cooperative,
}

impl RewardSchedule {
    pub fn role(&self) -> RoleTag {
        match self {
            RewardSchedule::Selfish => RoleTag::D,
            RewardSchedule::Cooperative => RoleTag::C,
        }
    }
}

/// Both players receive the joint reward r1 + r2.
pub fn cooperative_reward(rewards: [f64; 2]) -> [f64; 2] {
    let joint = rewards[0] + rewards[1];
    [joint, joint]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub schedule: RewardSchedule,
    pub learning_rate: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub total_games: usize,
    /// Geometric continuation probability during training episodes.
    pub continuation: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub value_coeff: f64,
    pub policy_coeff: f64,
}

impl TrainingConfig {
    /// Full-fidelity Coins settings.
    pub fn coins_paper(schedule: RewardSchedule, seed: u64) -> Self {
        TrainingConfig {
            schedule,
            learning_rate: 0.001,
            discount: 0.98,
            batch_size: 32,
            total_games: 40_000,
            continuation: 0.998,
            seed,
            optimizer: OptimizerKind::adam(),
            value_coeff: 1.0,
            policy_coeff: 1.0,
        }
    }

    /// Reduced preset sized for CI runs.
    pub fn coins_desk(schedule: RewardSchedule, seed: u64) -> Self {
        TrainingConfig {
            schedule,
            learning_rate: 0.004,
            discount: 0.98,
            batch_size: 8,
            total_games: 3_200,
            continuation: 0.99,
            seed,
            optimizer: OptimizerKind::adam(),
            value_coeff: 1.0,
            policy_coeff: 1.0,
        }
    }

    /// Repeated-PD defaults (stopping probability 0.05).
    pub fn rpd(schedule: RewardSchedule, seed: u64) -> Self {
        TrainingConfig {
            schedule,
            learning_rate: 0.05,
            discount: 1.0,
            batch_size: 32,
            total_games: 6_400,
            continuation: 0.95,
            seed,
            optimizer: OptimizerKind::adam(),
            value_coeff: 1.0,
            policy_coeff: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.continuation > 0.0 && self.continuation < 1.0) {
            return Err(Error::Config("continuation must be in (0,1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config("discount must be in (0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CurvePoint {
    pub batch: usize,
    pub mean_r1: f64,
    pub mean_r2: f64,
    pub mean_joint: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedPair {
    pub artifacts: [PolicyArtifact; 2],
    pub curve: Vec<CurvePoint>,
}

/// Stateless sampler over current parameters; batch norm in eval phase.
pub(crate) struct SamplerAgent<'a, G: Game> {
    pub player: usize,
    pub model: &'a Model,
    pub params: &'a ParameterVector,
    pub marker: PhantomData<G>,
}

impl<'a, G: Game> Agent<G> for SamplerAgent<'a, G> {
    fn act(&mut self, game: &G, state: &G::State, rng: &mut Rng) -> usize {
        let obs = game.observe(state, self.player);
        let (probs, _) = self
            .model
            .forward(self.params, &obs, Phase::Eval)
            .expect("model/observation mismatch");
        sample_index(&probs, rng)
    }

    fn reset(&mut self) {}
}

/// Collect one batch of self-play episodes in parallel with per-episode
/// derived streams. Episode order is fixed, so results are deterministic
/// regardless of scheduling.
pub(crate) fn collect_batch<G: Game>(
    game: &G,
    models: [&Model; 2],
    params: [&ParameterVector; 2],
    rule: &TerminationRule,
    seed: u64,
    first_episode: u64,
    count: usize,
) -> Result<Vec<Trajectory<G::State>>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut streams = EpisodeStreams::new(seed, "episode", first_episode + i as u64);
            let mut a1 = SamplerAgent::<G> {
                player: 0,
                model: models[0],
                params: params[0],
                marker: PhantomData,
            };
            let mut a2 = SamplerAgent::<G> {
                player: 1,
                model: models[1],
                params: params[1],
                marker: PhantomData,
            };
            run_episode(game, &mut a1, &mut a2, rule, &mut streams)
        })
        .collect()
}

/// Advantages for one player over a batch: A_t = r_t + d V(s_{t+1}) - V(s_t),
/// with V from an eval-phase pass and the episode end treated as terminal.
pub(crate) fn advantages<G: Game>(
    game: &G,
    model: &Model,
    params: &ParameterVector,
    batch: &[Trajectory<G::State>],
    player: usize,
    schedule: RewardSchedule,
    discount: f64,
) -> Result<(Vec<Observation>, Vec<usize>, Vec<f64>)> {
    let mut observations = Vec::new();
    let mut actions = Vec::new();
    let mut bounds = Vec::new();
    for traj in batch {
        let start = observations.len();
        for step in &traj.steps {
            observations.push(game.observe(&step.state, player));
            actions.push(step.action.of(player));
        }
        observations.push(game.observe(&traj.final_state, player));
        bounds.push((start, observations.len()));
    }
    let refs: Vec<&Observation> = observations.iter().collect();
    let heads = model.heads_batch(params, &refs, Phase::Eval)?;
    let values: Vec<f64> = heads.into_iter().map(|(_, v)| v).collect();
    let mut advs = Vec::with_capacity(actions.len());
    for (traj, &(start, end)) in batch.iter().zip(&bounds) {
        let n = traj.steps.len();
        for (t, step) in traj.steps.iter().enumerate() {
            let reward = match schedule {
                RewardSchedule::Selfish => step.rewards[player],
                RewardSchedule::Cooperative => cooperative_reward(step.rewards)[player],
            };
            let bootstrap = if t + 1 < n { values[start + t + 1] } else { 0.0 };
            advs.push(reward + discount * bootstrap - values[start + t]);
        }
        debug_assert_eq!(start + n + 1, end);
    }
    // Strip the appended final-state observations back out for sample
    // construction: rebuild per-step observation list.
    let mut step_obs = Vec::with_capacity(actions.len());
    for (traj, &(start, _)) in batch.iter().zip(&bounds) {
        for t in 0..traj.steps.len() {
            step_obs.push(observations[start + t].clone());
        }
    }
    Ok((step_obs, actions, advs))
}

/// Normalize to sample mean 0 and (population) standard deviation 1.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Batched episodic actor-critic self-play. Returns one artifact per
/// player plus the per-batch mean-reward curve.
pub fn train_pair<G: Game>(game: &G, models: [Model; 2], cfg: &TrainingConfig) -> Result<TrainedPair> {
    cfg.validate()?;
    let rule = TerminationRule::Geometric {
        continuation: cfg.continuation,
    };
    let mut params = [
        models[0].init(&mut crate::rng::stream(cfg.seed, "init", 0)),
        models[1].init(&mut crate::rng::stream(cfg.seed, "init", 1)),
    ];
    let mut opts = [
        Optimizer::new(cfg.optimizer, cfg.learning_rate, &models[0].layout()),
        Optimizer::new(cfg.optimizer, cfg.learning_rate, &models[1].layout()),
    ];
    let mut curve = Vec::new();
    let mut episode: u64 = 0;
    let mut remaining = cfg.total_games;
    let mut batch_index = 0;
    while remaining > 0 {
        let count = remaining.min(cfg.batch_size);
        let batch = collect_batch(
            game,
            [&models[0], &models[1]],
            [&params[0], &params[1]],
            &rule,
            cfg.seed,
            episode,
            count,
        )?;
        episode += count as u64;
        remaining -= count;
        if cfg.schedule == RewardSchedule::Cooperative {
            for traj in &batch {
                for step in &traj.steps {
                    let cc = cooperative_reward(step.rewards);
                    assert_eq!(cc[0], cc[1], "cooperative schedule must be symmetric");
                }
            }
        }
        for player in 0..2 {
            let (obs, actions, advs) =
                advantages(game, &models[player], &params[player], &batch, player, cfg.schedule, cfg.discount)?;
            if obs.is_empty() {
                continue;
            }
            let normalized = normalize(&advs);
            let samples: Vec<TrainSample<'_>> = obs
                .iter()
                .zip(&actions)
                .zip(advs.iter().zip(&normalized))
                .map(|((o, &a), (&adv, &norm))| {
                    TrainSample::actor_critic(o, a, cfg.value_coeff * adv, cfg.policy_coeff * norm)
                })
                .collect();
            let bw = models[player].backward(&params[player], &samples)?;
            opts[player].step(&mut params[player], &bw.grad);
            bw.apply_buffers(&mut params[player]);
            if !params[player].all_finite() {
                log::error!(
                    "training diverged at batch {batch_index}; curve so far: {:?}",
                    curve
                );
                return Err(Error::NonFinite {
                    context: format!("player {player} parameters at batch {batch_index}"),
                });
            }
        }
        let n = batch.len() as f64;
        let mean_r1 = batch.iter().map(|t| t.total_reward(0)).sum::<f64>() / n;
        let mean_r2 = batch.iter().map(|t| t.total_reward(1)).sum::<f64>() / n;
        curve.push(CurvePoint {
            batch: batch_index,
            mean_r1,
            mean_r2,
            mean_joint: mean_r1 + mean_r2,
        });
        batch_index += 1;
    }
    if cfg.schedule == RewardSchedule::Cooperative && !joint_curve_nondecreasing(&curve, 20) {
        log::warn!("smoothed joint reward decreased over cooperative training");
    }
    let config_snapshot = serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null);
    let artifacts = [0, 1].map(|player| PolicyArtifact {
        model: models[player].clone(),
        params: params[player].clone(),
        meta: ArtifactMeta {
            role: cfg.schedule.role(),
            player,
            seed: cfg.seed,
            config: config_snapshot.clone(),
            curve_tail: curve.iter().rev().take(5).map(|c| c.mean_joint).collect(),
        },
    });
    Ok(TrainedPair { artifacts, curve })
}

/// Soft diagnostic: is the window-averaged joint reward non-decreasing?
/// Tolerates noise by bounding the maximum drawdown of the smoothed curve
/// at a tenth of its overall range.
pub fn joint_curve_nondecreasing(curve: &[CurvePoint], window: usize) -> bool {
    if curve.len() < 2 * window {
        return true;
    }
    let smoothed: Vec<f64> = curve
        .windows(window)
        .map(|w| w.iter().map(|c| c.mean_joint).sum::<f64>() / window as f64)
        .collect();
    let lo = smoothed.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let slack = 0.1 * (hi - lo) + 1e-9;
    let mut running_max = f64::NEG_INFINITY;
    for &v in &smoothed {
        running_max = running_max.max(v);
        if running_max - v > slack {
            return false;
        }
    }
    true
}

/// Render a training curve as CSV (comment header carries the seed).
pub fn curve_csv(curve: &[CurvePoint], seed: u64) -> String {
    let mut out = format!("# seed={seed}\nbatch,mean_r1,mean_r2,mean_joint\n");
    for p in curve {
        out.push_str(&format!("{},{},{},{}\n", p.batch, p.mean_r1, p.mean_r2, p.mean_joint));
    }
    out
}
