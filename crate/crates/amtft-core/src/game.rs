//! Two-player Markov game abstraction and episode execution.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const NUM_PLAYERS: usize = 2;

/// Index pair of simultaneous actions, one per player.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction {
    pub a1: usize,
    pub a2: usize,
}

impl JointAction {
    pub fn new(a1: usize, a2: usize) -> Self {
        JointAction { a1, a2 }
    }

    pub fn of(&self, player: usize) -> usize {
        match player {
            0 => self.a1,
            _ => self.a2,
        }
    }
}

/// Outcome of one simultaneous move.
#[derive(Clone, Debug)]
pub struct StepResult<S> {
    pub next_state: S,
    pub rewards: [f64; 2],
    pub terminal: bool,
}

/// What a policy sees: a tabular state index or a dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    OneHot { index: usize, len: usize },
    Tensor { shape: [usize; 3], data: Vec<f64> },
}

impl Observation {
    pub fn len(&self) -> usize {
        match self {
            Observation::OneHot { len, .. } => *len,
            Observation::Tensor { data, .. } => data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A finite two-player Markov game: action sets, a stochastic transition
/// sampler, and per-player bounded rewards. Pure given an RNG stream.
pub trait Game: Sync {
    type State: Clone + Send + Sync;

    fn num_actions(&self, player: usize) -> usize;
    fn initial_state(&self, rng: &mut Rng) -> Self::State;
    fn transition(&self, state: &Self::State, action: JointAction, rng: &mut Rng) -> StepResult<Self::State>;
    fn observe(&self, state: &Self::State, player: usize) -> Observation;
    fn reward_bound(&self) -> f64;

    fn validate_action(&self, player: usize, action: usize) -> Result<()> {
        let limit = self.num_actions(player);
        if action >= limit {
            return Err(Error::InvalidAction { player, action, limit });
        }
        Ok(())
    }
}

/// A game whose state space can be fully enumerated, enabling exact
/// dynamic-programming oracles.
pub trait TabularGame: Game {
    fn num_states(&self) -> usize;
    fn states(&self) -> Vec<Self::State>;
    fn state_index(&self, state: &Self::State) -> usize;
    /// Next-state distribution as (state index, probability) pairs.
    fn transition_probs(&self, state: &Self::State, action: JointAction) -> Vec<(usize, f64)>;
    fn rewards(&self, state: &Self::State, action: JointAction) -> [f64; 2];
    /// Initial-state distribution as (state index, probability) pairs.
    fn initial_probs(&self) -> Vec<(usize, f64)>;
}

/// Validated single step through the game dynamics.
pub fn step<G: Game>(
    game: &G,
    state: &G::State,
    action: JointAction,
    rng: &mut Rng,
) -> Result<StepResult<G::State>> {
    game.validate_action(0, action.a1)?;
    game.validate_action(1, action.a2)?;
    let result = game.transition(state, action, rng);
    debug_assert!(
        result.rewards.iter().all(|r| r.abs() <= game.reward_bound() + 1e-9),
        "reward bound violated: {:?} exceeds {}",
        result.rewards,
        game.reward_bound()
    );
    Ok(result)
}

/// Episode termination: geometric continuation or a fixed horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TerminationRule {
    /// Continue with probability `continuation` after each step.
    Geometric { continuation: f64 },
    /// Exactly `length` steps.
    Fixed { length: usize },
}

impl TerminationRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            TerminationRule::Geometric { continuation } => {
                if !(*continuation > 0.0 && *continuation < 1.0) {
                    return Err(Error::Config(format!(
                        "geometric continuation must be in (0,1), got {continuation}"
                    )));
                }
            }
            TerminationRule::Fixed { length } => {
                if *length == 0 {
                    return Err(Error::Config("fixed horizon must be >= 1".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminationReason {
    HorizonReached,
    StopDraw,
    GameTerminal,
}

#[derive(Clone, Debug)]
pub struct TrajectoryStep<S> {
    pub state: S,
    pub action: JointAction,
    pub rewards: [f64; 2],
}

/// Per-step record of one episode. Rewards are stored undiscounted;
/// consumers apply their own discounting.
#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub steps: Vec<TrajectoryStep<S>>,
    pub final_state: S,
    pub reason: TerminationReason,
    /// Seed from which the env/agent streams of this episode derive.
    pub seed: u64,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self, player: usize) -> f64 {
        self.steps.iter().map(|s| s.rewards[player]).sum()
    }
}

/// Sum of `delta^t * r_t` for one player.
pub fn discounted_return<S>(traj: &Trajectory<S>, delta: f64, player: usize) -> f64 {
    let mut acc = 0.0;
    let mut weight = 1.0;
    for step in &traj.steps {
        acc += weight * step.rewards[player];
        weight *= delta;
    }
    acc
}

/// A stateful player. `act` chooses an action; `observe_step` is called
/// after every step with the realized joint action so meta-policies can
/// update their memories.
pub trait Agent<G: Game> {
    fn act(&mut self, game: &G, state: &G::State, rng: &mut Rng) -> usize;

    fn observe_step(
        &mut self,
        _game: &G,
        _state: &G::State,
        _action: JointAction,
        _next_state: &G::State,
        _rng: &mut Rng,
    ) {
    }

    fn reset(&mut self);
}

/// Independent RNG streams for one episode, all derived from one seed.
pub struct EpisodeStreams {
    pub seed: u64,
    pub env: Rng,
    pub agent1: Rng,
    pub agent2: Rng,
}

impl EpisodeStreams {
    pub fn new(master: u64, label: &str, episode: u64) -> Self {
        Self::from_seed(rng::derive_seed(master, label, episode))
    }

    pub fn from_seed(seed: u64) -> Self {
        EpisodeStreams {
            seed,
            env: rng::stream(seed, "env", 0),
            agent1: rng::stream(seed, "agent1", 0),
            agent2: rng::stream(seed, "agent2", 0),
        }
    }
}

/// Run one episode. Both agents act simultaneously; each sees the realized
/// joint action afterwards through `observe_step`.
pub fn run_episode<G: Game>(
    game: &G,
    agent1: &mut dyn Agent<G>,
    agent2: &mut dyn Agent<G>,
    rule: &TerminationRule,
    streams: &mut EpisodeStreams,
) -> Result<Trajectory<G::State>> {
    rule.validate()?;
    let mut state = game.initial_state(&mut streams.env);
    let mut steps = Vec::new();
    let reason;
    let mut t = 0usize;
    loop {
        let a1 = agent1.act(game, &state, &mut streams.agent1);
        let a2 = agent2.act(game, &state, &mut streams.agent2);
        let action = JointAction::new(a1, a2);
        let result = step(game, &state, action, &mut streams.env)?;
        agent1.observe_step(game, &state, action, &result.next_state, &mut streams.agent1);
        agent2.observe_step(game, &state, action, &result.next_state, &mut streams.agent2);
        steps.push(TrajectoryStep {
            state: state.clone(),
            action,
            rewards: result.rewards,
        });
        state = result.next_state;
        t += 1;
        if result.terminal {
            reason = TerminationReason::GameTerminal;
            break;
        }
        match rule {
            TerminationRule::Fixed { length } => {
                if t >= *length {
                    reason = TerminationReason::HorizonReached;
                    break;
                }
            }
            TerminationRule::Geometric { continuation } => {
                if streams.env.gen::<f64>() >= *continuation {
                    reason = TerminationReason::StopDraw;
                    break;
                }
            }
        }
    }
    Ok(Trajectory {
        steps,
        final_state: state,
        reason,
        seed: streams.seed,
    })
}
