//! One-memory repeated Prisoner's Dilemma.
//!
//! States are the previous joint action plus a distinguished start state.
//! Payoffs: mutual cooperation 1, mutual defection 0, temptation `w` for
//! defecting on a cooperator, sucker loss `-s` (s = 1.5w by default).

use serde::{Deserialize, Serialize};

use crate::game::{Game, JointAction, Observation, StepResult, TabularGame};
use crate::rng::Rng;

pub const COOPERATE: usize = 0;
pub const DEFECT: usize = 1;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PdParams {
    /// Temptation payoff w. w > 1 makes the stage game a true PD.
    pub temptation: f64,
    /// Sucker loss s (paid as -s).
    pub sucker: f64,
}

impl PdParams {
    /// Standard construction with s = 1.5 w.
    pub fn new(temptation: f64) -> Self {
        PdParams {
            temptation,
            sucker: 1.5 * temptation,
        }
    }

    pub fn with_sucker(temptation: f64, sucker: f64) -> Self {
        PdParams { temptation, sucker }
    }
}

impl Default for PdParams {
    fn default() -> Self {
        PdParams::new(2.0)
    }
}

/// Previous joint action; `Start` only occurs at t = 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PdState {
    Start,
    CC,
    CD,
    DC,
    DD,
}

pub const PD_STATES: [PdState; 5] = [PdState::Start, PdState::CC, PdState::CD, PdState::DC, PdState::DD];

impl PdState {
    pub fn index(&self) -> usize {
        match self {
            PdState::Start => 0,
            PdState::CC => 1,
            PdState::CD => 2,
            PdState::DC => 3,
            PdState::DD => 4,
        }
    }

    fn from_action(action: JointAction) -> Self {
        match (action.a1, action.a2) {
            (COOPERATE, COOPERATE) => PdState::CC,
            (COOPERATE, DEFECT) => PdState::CD,
            (DEFECT, COOPERATE) => PdState::DC,
            _ => PdState::DD,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RepeatedPd {
    params: PdParams,
}

impl RepeatedPd {
    pub fn new(params: PdParams) -> Self {
        RepeatedPd { params }
    }

    pub fn params(&self) -> &PdParams {
        &self.params
    }

    fn payoff(&self, action: JointAction) -> [f64; 2] {
        let w = self.params.temptation;
        let s = self.params.sucker;
        match (action.a1, action.a2) {
            (COOPERATE, COOPERATE) => [1.0, 1.0],
            (COOPERATE, DEFECT) => [-s, w],
            (DEFECT, COOPERATE) => [w, -s],
            _ => [0.0, 0.0],
        }
    }
}

/// The canonical 5-state, 2-action game.
pub fn pd_game(params: PdParams) -> RepeatedPd {
    RepeatedPd::new(params)
}

impl Game for RepeatedPd {
    type State = PdState;

    fn num_actions(&self, _player: usize) -> usize {
        2
    }

    fn initial_state(&self, _rng: &mut Rng) -> PdState {
        PdState::Start
    }

    fn transition(&self, _state: &PdState, action: JointAction, _rng: &mut Rng) -> StepResult<PdState> {
        StepResult {
            next_state: PdState::from_action(action),
            rewards: self.payoff(action),
            terminal: false,
        }
    }

    fn observe(&self, state: &PdState, _player: usize) -> Observation {
        encode_pd(state)
    }

    fn reward_bound(&self) -> f64 {
        self.params
            .temptation
            .abs()
            .max(self.params.sucker.abs())
            .max(1.0)
    }
}

impl TabularGame for RepeatedPd {
    fn num_states(&self) -> usize {
        5
    }

    fn states(&self) -> Vec<PdState> {
        PD_STATES.to_vec()
    }

    fn state_index(&self, state: &PdState) -> usize {
        state.index()
    }

    fn transition_probs(&self, _state: &PdState, action: JointAction) -> Vec<(usize, f64)> {
        vec![(PdState::from_action(action).index(), 1.0)]
    }

    fn rewards(&self, _state: &PdState, action: JointAction) -> [f64; 2] {
        self.payoff(action)
    }

    fn initial_probs(&self) -> Vec<(usize, f64)> {
        vec![(PdState::Start.index(), 1.0)]
    }
}

/// One-hot encoding over the 5 states (Start is index 0).
pub fn encode_pd(state: &PdState) -> Observation {
    Observation::OneHot {
        index: state.index(),
        len: 5,
    }
}
