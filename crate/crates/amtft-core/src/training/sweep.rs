//! REINFORCE sweep over the repeated-PD temptation payoff: how often does
//! plain policy-gradient self-play end in mutual cooperation?

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::rpd::{pd_game, PdParams, PdState, RepeatedPd, COOPERATE, DEFECT};
use crate::error::Result;
use crate::game::{Game, JointAction, Observation, TabularGame, TerminationRule};
use crate::nn::{Model, Optimizer, OptimizerKind, Phase, TabularSpec, TrainSample};
use crate::rng;

/// The appendix experiment's policy space is the one-memory state space
/// of the previous joint action, with the start treated as (C,C); the
/// sweep's tabular policies therefore share one row for Start and CC.
pub fn one_memory_obs(state: &PdState) -> Observation {
    let index = match state {
        PdState::Start | PdState::CC => 0,
        PdState::CD => 1,
        PdState::DC => 2,
        PdState::DD => 3,
    };
    Observation::OneHot { index, len: 4 }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub seeds_per_w: usize,
    pub games_per_seed: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Continuation probability (stopping probability is 1 - this).
    pub continuation: f64,
    pub master_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seeds_per_w: 20,
            games_per_seed: 9_600,
            batch_size: 8,
            learning_rate: 0.15,
            continuation: 0.95,
            master_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepOutcome {
    Cooperate,
    Defect,
    Other,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub temptation: f64,
    pub cooperation_fraction: f64,
    pub outcomes: Vec<SweepOutcome>,
}

/// Train one-memory tabular policies with REINFORCE and classify the
/// converged pair by its greedy play from the start state.
pub fn train_pd_sweep(temptations: &[f64], cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let cells: Vec<(usize, usize)> = temptations
        .iter()
        .enumerate()
        .flat_map(|(wi, _)| (0..cfg.seeds_per_w).map(move |s| (wi, s)))
        .collect();
    let outcomes: Vec<((usize, usize), SweepOutcome)> = cells
        .par_iter()
        .map(|&(wi, s)| {
            let seed = rng::derive_seed(cfg.master_seed, "sweep-cell", (wi * cfg.seeds_per_w + s) as u64);
            let outcome = train_one_cell(temptations[wi], seed, cfg)?;
            Ok(((wi, s), outcome))
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<SweepRow> = temptations
        .iter()
        .map(|&w| SweepRow {
            temptation: w,
            cooperation_fraction: 0.0,
            outcomes: Vec::new(),
        })
        .collect();
    for ((wi, _), outcome) in outcomes {
        rows[wi].outcomes.push(outcome);
    }
    for row in &mut rows {
        let coop = row.outcomes.iter().filter(|o| **o == SweepOutcome::Cooperate).count();
        row.cooperation_fraction = coop as f64 / row.outcomes.len().max(1) as f64;
    }
    Ok(rows)
}

/// Test instrumentation: expose one sweep cell's converged policies.
pub fn probe_train_one_cell(
    temptation: f64,
    seed: u64,
    games: usize,
    batch: usize,
    lr: f64,
    continuation: f64,
) -> ([Model; 2], [crate::nn::ParameterVector; 2], SweepOutcome) {
    let cfg = SweepConfig {
        seeds_per_w: 1,
        games_per_seed: games,
        batch_size: batch,
        learning_rate: lr,
        continuation,
        master_seed: seed,
    };
    train_cell_inner(temptation, seed, &cfg).unwrap()
}

fn train_one_cell(temptation: f64, seed: u64, cfg: &SweepConfig) -> Result<SweepOutcome> {
    Ok(train_cell_inner(temptation, seed, cfg)?.2)
}

fn train_cell_inner(
    temptation: f64,
    seed: u64,
    cfg: &SweepConfig,
) -> Result<([Model; 2], [crate::nn::ParameterVector; 2], SweepOutcome)> {
    use crate::game::{run_episode, Agent, EpisodeStreams};
    use crate::policy::sample_index;
    use crate::rng::Rng;

    struct OneMemorySampler<'a> {
        model: &'a Model,
        params: &'a crate::nn::ParameterVector,
    }
    impl<'a> Agent<RepeatedPd> for OneMemorySampler<'a> {
        fn act(&mut self, _game: &RepeatedPd, state: &PdState, rng: &mut Rng) -> usize {
            let (probs, _) = self
                .model
                .forward(self.params, &one_memory_obs(state), Phase::Eval)
                .expect("tabular forward");
            sample_index(&probs, rng)
        }
        fn reset(&mut self) {}
    }

    let game = pd_game(PdParams::new(temptation));
    let models = [
        Model::Tabular(TabularSpec::new(4, 2)),
        Model::Tabular(TabularSpec::new(4, 2)),
    ];
    let mut params = [
        models[0].init(&mut rng::stream(seed, "init", 0)),
        models[1].init(&mut rng::stream(seed, "init", 1)),
    ];
    let mut opts = [
        Optimizer::new(OptimizerKind::adam(), cfg.learning_rate, &models[0].layout()),
        Optimizer::new(OptimizerKind::adam(), cfg.learning_rate, &models[1].layout()),
    ];
    let rule = TerminationRule::Geometric {
        continuation: cfg.continuation,
    };
    let mut episode: u64 = 0;
    let mut remaining = cfg.games_per_seed;
    while remaining > 0 {
        let count = remaining.min(cfg.batch_size);
        let mut batch = Vec::with_capacity(count);
        for i in 0..count {
            let mut streams = EpisodeStreams::new(seed, "sweep-episode", episode + i as u64);
            let mut a1 = OneMemorySampler { model: &models[0], params: &params[0] };
            let mut a2 = OneMemorySampler { model: &models[1], params: &params[1] };
            batch.push(run_episode(&game, &mut a1, &mut a2, &rule, &mut streams)?);
        }
        episode += count as u64;
        remaining -= count;
        for player in 0..2 {
            // REINFORCE with return-to-go credit, normalized over the batch.
            let mut obs = Vec::new();
            let mut actions = Vec::new();
            let mut returns = Vec::new();
            for traj in &batch {
                let mut to_go = 0.0;
                let mut rev = Vec::with_capacity(traj.len());
                for step in traj.steps.iter().rev() {
                    to_go += step.rewards[player];
                    rev.push(to_go);
                }
                rev.reverse();
                for (step, g) in traj.steps.iter().zip(rev) {
                    obs.push(one_memory_obs(&step.state));
                    actions.push(step.action.of(player));
                    returns.push(g);
                }
            }
            let normalized = super::normalize(&returns);
            let samples: Vec<TrainSample<'_>> = obs
                .iter()
                .zip(&actions)
                .zip(&normalized)
                .map(|((o, &a), &g)| TrainSample::actor_critic(o, a, 0.0, g))
                .collect();
            if samples.is_empty() {
                continue;
            }
            let bw = models[player].backward(&params[player], &samples)?;
            opts[player].step(&mut params[player], &bw.grad);
        }
    }
    let outcome = classify_pair(&game, &models, &params);
    Ok((models, params, outcome))
}

/// Greedy play from the start state for 50 steps: all (C,C) counts as
/// cooperation, all (D,D) as defection, anything else as other.
fn classify_pair(game: &RepeatedPd, models: &[Model; 2], params: &[crate::nn::ParameterVector; 2]) -> SweepOutcome {
    let mut state = PdState::Start;
    let mut all_cc = true;
    let mut all_dd = true;
    for _ in 0..50 {
        let action = JointAction::new(
            greedy(game, &models[0], &params[0], &state, 0),
            greedy(game, &models[1], &params[1], &state, 1),
        );
        all_cc &= action.a1 == COOPERATE && action.a2 == COOPERATE;
        all_dd &= action.a1 == DEFECT && action.a2 == DEFECT;
        if !all_cc && !all_dd {
            return SweepOutcome::Other;
        }
        let idx = game
            .transition_probs(&state, action)
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        state = game.states()[idx];
    }
    if all_cc {
        SweepOutcome::Cooperate
    } else if all_dd {
        SweepOutcome::Defect
    } else {
        SweepOutcome::Other
    }
}

fn greedy(
    _game: &RepeatedPd,
    model: &Model,
    params: &crate::nn::ParameterVector,
    state: &PdState,
    _player: usize,
) -> usize {
    let (probs, _) = model
        .forward(params, &one_memory_obs(state), Phase::Eval)
        .expect("tabular forward");
    crate::policy::argmax(&probs)
}

/// Sweep table as CSV with the master seed in the comment header.
pub fn sweep_csv(rows: &[SweepRow], seed: u64) -> String {
    let mut out = format!("# seed={seed}\nw,cooperation_fraction,seeds\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.temptation,
            row.cooperation_fraction,
            row.outcomes.len()
        ));
    }
    out
}
