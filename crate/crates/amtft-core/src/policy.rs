//! Stationary policies: maps from state to an action distribution.
//!
//! Learned artifacts, fixed actions, and scripted heuristics all expose
//! the same interface so the rollout engine and strategies can mix them.

use std::sync::Arc;

use rand::Rng as _;

use crate::envs::coins::{CoinsGame, CoinsState, DOWN, LEFT, RIGHT, UP};
use crate::game::Game;
use crate::nn::{Phase, PolicyArtifact};
use crate::rng::Rng;

pub trait Policy<G: Game>: Send + Sync {
    fn action_probs(&self, game: &G, state: &G::State, player: usize) -> Vec<f64>;

    fn sample(&self, game: &G, state: &G::State, player: usize, rng: &mut Rng) -> usize {
        sample_index(&self.action_probs(game, state, player), rng)
    }

    /// Highest-probability action; ties resolve to the lowest index.
    fn modal(&self, game: &G, state: &G::State, player: usize) -> usize {
        argmax(&self.action_probs(game, state, player))
    }
}

pub type PolicyRef<G> = Arc<dyn Policy<G>>;

/// Inverse-CDF draw over a probability vector.
pub fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let _ = values;
    best
}

/// A trained artifact acting as a stochastic policy (evaluation phase, so
/// batch-norm uses frozen running statistics).
impl<G: Game> Policy<G> for PolicyArtifact {
    fn action_probs(&self, game: &G, state: &G::State, player: usize) -> Vec<f64> {
        let obs = game.observe(state, player);
        let (probs, _) = self
            .model
            .forward(&self.params, &obs, Phase::Eval)
            .expect("artifact/observation mismatch");
        probs
    }
}

/// Always plays one action index (AllC / AllD in the repeated PD).
#[derive(Clone, Copy, Debug)]
pub struct FixedActionPolicy(pub usize);

impl<G: Game> Policy<G> for FixedActionPolicy {
    fn action_probs(&self, game: &G, _state: &G::State, player: usize) -> Vec<f64> {
        let mut probs = vec![0.0; game.num_actions(player)];
        probs[self.0] = 1.0;
        probs
    }
}

/// Uniform over the action set.
#[derive(Clone, Copy, Debug)]
pub struct UniformPolicy;

impl<G: Game> Policy<G> for UniformPolicy {
    fn action_probs(&self, game: &G, _state: &G::State, player: usize) -> Vec<f64> {
        let n = game.num_actions(player);
        vec![1.0 / n as f64; n]
    }
}

/// Mix a base policy with uniform exploration.
pub struct EpsilonMix<G: Game> {
    pub base: PolicyRef<G>,
    pub epsilon: f64,
}

impl<G: Game> Policy<G> for EpsilonMix<G> {
    fn action_probs(&self, game: &G, state: &G::State, player: usize) -> Vec<f64> {
        let n = game.num_actions(player);
        let mut probs = self.base.action_probs(game, state, player);
        for p in probs.iter_mut() {
            *p = (1.0 - self.epsilon) * *p + self.epsilon / n as f64;
        }
        probs
    }
}

/// Explicit per-state probability table for tabular games; used by exact
/// oracles and hand-scripted repeated-PD policies.
#[derive(Clone, Debug)]
pub struct TablePolicy {
    pub probs: Vec<Vec<f64>>,
}

impl TablePolicy {
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        TablePolicy { probs }
    }

    /// Same row at every state.
    pub fn stationary(row: Vec<f64>, num_states: usize) -> Self {
        TablePolicy {
            probs: vec![row; num_states],
        }
    }
}

impl<G: crate::game::TabularGame> Policy<G> for TablePolicy {
    fn action_probs(&self, game: &G, state: &G::State, _player: usize) -> Vec<f64> {
        self.probs[game.state_index(state)].clone()
    }
}

/// A stationary policy acting as an agent. Sampling (the default) matches
/// how policies behaved during training; greedy mode takes the mode.
pub struct PolicyAgent<G: Game> {
    pub player: usize,
    pub policy: PolicyRef<G>,
    pub greedy: bool,
}

impl<G: Game> PolicyAgent<G> {
    pub fn sampling(player: usize, policy: PolicyRef<G>) -> Self {
        PolicyAgent {
            player,
            policy,
            greedy: false,
        }
    }
}

impl<G: Game> crate::game::Agent<G> for PolicyAgent<G> {
    fn act(&mut self, game: &G, state: &G::State, rng: &mut Rng) -> usize {
        if self.greedy {
            self.policy.modal(game, state, self.player)
        } else {
            self.policy.sample(game, state, self.player, rng)
        }
    }

    fn reset(&mut self) {}
}

/// Scripted Coins behavior for baselines and sanity checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoinsScript {
    /// Move toward the coin only when it matches own color; otherwise
    /// walk away from it.
    OwnColorOnly,
    /// Move toward any coin.
    GrabAll,
}

pub struct CoinsScriptPolicy(pub CoinsScript);

fn toward(from: (usize, usize), to: (usize, usize)) -> usize {
    // Row moves first; deterministic tie-breaking.
    if to.0 < from.0 {
        UP
    } else if to.0 > from.0 {
        DOWN
    } else if to.1 < from.1 {
        LEFT
    } else {
        RIGHT
    }
}

fn away(from: (usize, usize), to: (usize, usize), board: usize) -> usize {
    let candidate = match toward(from, to) {
        UP => DOWN,
        DOWN => UP,
        LEFT => RIGHT,
        _ => LEFT,
    };
    // Avoid hugging the wall in a way that re-approaches the coin.
    match candidate {
        UP if from.0 == 0 => if from.1 == 0 { RIGHT } else { LEFT },
        DOWN if from.0 == board - 1 => if from.1 == 0 { RIGHT } else { LEFT },
        LEFT if from.1 == 0 => if from.0 == 0 { DOWN } else { UP },
        RIGHT if from.1 == board - 1 => if from.0 == 0 { DOWN } else { UP },
        other => other,
    }
}

impl Policy<CoinsGame> for CoinsScriptPolicy {
    fn action_probs(&self, game: &CoinsGame, state: &CoinsState, player: usize) -> Vec<f64> {
        let me = state.positions[player];
        let board = game.params().board;
        let action = match (state.coin, self.0) {
            (Some(coin), CoinsScript::GrabAll) => toward(me, coin.pos),
            (Some(coin), CoinsScript::OwnColorOnly) => {
                if coin.color == player {
                    toward(me, coin.pos)
                } else {
                    away(me, coin.pos, board)
                }
            }
            // No coin: drift toward the center to stay responsive.
            (None, _) => toward(me, (board / 2, board / 2)),
        };
        let mut probs = vec![0.0; 4];
        probs[action] = 1.0;
        probs
    }
}
