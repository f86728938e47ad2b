//! Simulator, training harness, and strategy library for two-player
//! Markov social dilemmas: self-play actor-critic training, tit-for-tat
//! meta-policies with rollout-based deviation accounting, tournament
//! evaluation, and exact tabular oracles.

pub mod amtft;
pub mod envs;
pub mod error;
pub mod eval;
pub mod game;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod strategies;
pub mod training;

pub use error::{Error, Result};
pub use game::{
    discounted_return, run_episode, Agent, EpisodeStreams, Game, JointAction, Observation, StepResult,
    TabularGame, TerminationRule, Trajectory,
};
pub use nn::{Model, ParameterVector, PolicyArtifact};
pub use policy::{Policy, PolicyRef};
