//! Teacher-learner retraining: freeze one player (the teacher, any
//! stateful strategy) and train a fresh selfish learner against it.

use std::marker::PhantomData;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{run_episode, Agent, EpisodeStreams, Game, TerminationRule, Trajectory};
use crate::nn::{ArtifactMeta, Model, Optimizer, PolicyArtifact, RoleTag, TrainSample};
use crate::training::{advantages, normalize, RewardSchedule, SamplerAgent, TrainingConfig};

pub const TEACHER: usize = 0;
pub const LEARNER: usize = 1;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RetrainPoint {
    pub batch: usize,
    pub learner_reward: f64,
    pub teacher_reward: f64,
    /// Batch-level statistic supplied by the caller (for Coins, the
    /// learner's mismatched-pickup rate).
    pub mismatch_rate: f64,
}

#[derive(Clone, Debug)]
pub struct RetrainOutput {
    pub learner: PolicyArtifact,
    pub curve: Vec<RetrainPoint>,
}

pub type TeacherFactory<'a, G> = &'a (dyn Fn() -> Result<Box<dyn Agent<G> + Send>> + Sync);
pub type BatchStat<'a, G> = &'a (dyn Fn(&[Trajectory<<G as Game>::State>]) -> f64 + Sync);

/// Train a selfish learner (seat 2) against a fixed teacher (seat 1).
/// The teacher is rebuilt fresh for every episode so stateful strategies
/// start each game in their initial memory.
pub fn retrain_learner<G: Game + 'static>(
    game: &G,
    teacher: TeacherFactory<'_, G>,
    learner_model: Model,
    cfg: &TrainingConfig,
    batch_stat: BatchStat<'_, G>,
) -> Result<RetrainOutput> {
    cfg.validate()?;
    if cfg.schedule != RewardSchedule::Selfish {
        return Err(Error::Config("retraining trains a selfish learner".into()));
    }
    let rule = TerminationRule::Geometric {
        continuation: cfg.continuation,
    };
    let mut params = learner_model.init(&mut crate::rng::stream(cfg.seed, "learner-init", 0));
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &learner_model.layout());
    let mut curve = Vec::new();
    let mut episode = 0u64;
    let mut remaining = cfg.total_games;
    let mut batch_index = 0;
    while remaining > 0 {
        let count = remaining.min(cfg.batch_size);
        let batch: Vec<Trajectory<G::State>> = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut streams = EpisodeStreams::new(cfg.seed, "retrain-episode", episode + i as u64);
                let mut teacher_agent = teacher()?;
                let mut learner_agent = SamplerAgent::<G> {
                    player: LEARNER,
                    model: &learner_model,
                    params: &params,
                    marker: PhantomData,
                };
                run_episode(game, teacher_agent.as_mut(), &mut learner_agent, &rule, &mut streams)
            })
            .collect::<Result<_>>()?;
        episode += count as u64;
        remaining -= count;
        let (obs, actions, advs) = advantages(
            game,
            &learner_model,
            &params,
            &batch,
            LEARNER,
            RewardSchedule::Selfish,
            cfg.discount,
        )?;
        if !obs.is_empty() {
            let normalized = normalize(&advs);
            let samples: Vec<TrainSample<'_>> = obs
                .iter()
                .zip(&actions)
                .zip(advs.iter().zip(&normalized))
                .map(|((o, &a), (&adv, &norm))| {
                    TrainSample::actor_critic(o, a, cfg.value_coeff * adv, cfg.policy_coeff * norm)
                })
                .collect();
            let bw = learner_model.backward(&params, &samples)?;
            opt.step(&mut params, &bw.grad);
            bw.apply_buffers(&mut params);
            if !params.all_finite() {
                log::error!("learner diverged at batch {batch_index}; curve: {curve:?}");
                return Err(Error::NonFinite {
                    context: format!("learner parameters at batch {batch_index}"),
                });
            }
        }
        let n = batch.len() as f64;
        curve.push(RetrainPoint {
            batch: batch_index,
            learner_reward: batch.iter().map(|t| t.total_reward(LEARNER)).sum::<f64>() / n,
            teacher_reward: batch.iter().map(|t| t.total_reward(TEACHER)).sum::<f64>() / n,
            mismatch_rate: batch_stat(&batch),
        });
        batch_index += 1;
    }
    Ok(RetrainOutput {
        learner: PolicyArtifact {
            model: learner_model,
            params,
            meta: ArtifactMeta {
                role: RoleTag::D,
                player: LEARNER,
                seed: cfg.seed,
                config: serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null),
                curve_tail: curve.iter().rev().take(5).map(|c| c.learner_reward).collect(),
            },
        },
        curve,
    })
}

/// Retraining curve as CSV.
pub fn retrain_csv(curve: &[RetrainPoint], seed: u64) -> String {
    let mut out = format!("# seed={seed}\nbatch,learner_reward,teacher_reward,mismatch_rate\n");
    for p in curve {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.batch, p.learner_reward, p.teacher_reward, p.mismatch_rate
        ));
    }
    out
}
