//! Coins grid-world: two players on a k x k board collect coins of two
//! colors. Collecting any coin pays +1; collecting the partner's color
//! costs the partner 2 points. At most one coin exists at a time; when the
//! board is empty a coin spawns with probability `spawn_prob` at a uniform
//! random empty cell with a uniform random color.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::game::{Game, JointAction, Observation, StepResult};
use crate::rng::Rng;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CoinsParams {
    /// Board side length k.
    pub board: usize,
    /// Spawn probability per step when no coin is present.
    pub spawn_prob: f64,
    pub pickup_reward: f64,
    pub mismatch_penalty: f64,
}

impl Default for CoinsParams {
    fn default() -> Self {
        CoinsParams {
            board: 5,
            spawn_prob: 0.1,
            pickup_reward: 1.0,
            mismatch_penalty: 2.0,
        }
    }
}

impl CoinsParams {
    pub fn with_board(board: usize) -> Self {
        CoinsParams {
            board,
            ..Default::default()
        }
    }
}

pub type Cell = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coin {
    pub pos: Cell,
    /// Owning player index (0 or 1).
    pub color: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoinsState {
    pub positions: [Cell; 2],
    pub coin: Option<Coin>,
}

#[derive(Clone, Debug)]
pub struct CoinsGame {
    params: CoinsParams,
}

impl CoinsGame {
    pub fn new(params: CoinsParams) -> Self {
        assert!(params.board >= 2, "board side must be >= 2");
        assert!(
            params.spawn_prob > 0.0 && params.spawn_prob < 1.0,
            "spawn probability must be in (0,1)"
        );
        CoinsGame { params }
    }

    pub fn params(&self) -> &CoinsParams {
        &self.params
    }

    fn clip_move(&self, pos: Cell, action: usize) -> Cell {
        let k = self.params.board;
        let (r, c) = pos;
        match action {
            UP => (r.saturating_sub(1), c),
            DOWN => ((r + 1).min(k - 1), c),
            LEFT => (r, c.saturating_sub(1)),
            _ => (r, (c + 1).min(k - 1)),
        }
    }

    fn random_cell(&self, rng: &mut Rng) -> Cell {
        let k = self.params.board;
        (rng.gen_range(0..k), rng.gen_range(0..k))
    }

    fn random_empty_cell(&self, occupied: &[Cell], rng: &mut Rng) -> Option<Cell> {
        let k = self.params.board;
        let empty: Vec<Cell> = (0..k)
            .flat_map(|r| (0..k).map(move |c| (r, c)))
            .filter(|cell| !occupied.contains(cell))
            .collect();
        if empty.is_empty() {
            return None;
        }
        Some(empty[rng.gen_range(0..empty.len())])
    }
}

pub fn coins_game(params: CoinsParams) -> CoinsGame {
    CoinsGame::new(params)
}

impl Game for CoinsGame {
    type State = CoinsState;

    fn num_actions(&self, _player: usize) -> usize {
        4
    }

    fn initial_state(&self, rng: &mut Rng) -> CoinsState {
        // Distinct uniform random cells, no coin at t = 0.
        let p1 = self.random_cell(rng);
        let mut p2 = self.random_cell(rng);
        while p2 == p1 {
            p2 = self.random_cell(rng);
        }
        CoinsState {
            positions: [p1, p2],
            coin: None,
        }
    }

    fn transition(&self, state: &CoinsState, action: JointAction, rng: &mut Rng) -> StepResult<CoinsState> {
        let mut rewards = [0.0, 0.0];
        let next_pos = [
            self.clip_move(state.positions[0], action.a1),
            self.clip_move(state.positions[1], action.a2),
        ];
        let mut coin = state.coin;
        if let Some(c) = coin {
            let arrived: Vec<usize> = (0..2).filter(|&p| next_pos[p] == c.pos).collect();
            let collector = match arrived.len() {
                0 => None,
                1 => Some(arrived[0]),
                // Simultaneous arrival: uniform random award.
                _ => Some(arrived[rng.gen_range(0..2)]),
            };
            if let Some(p) = collector {
                rewards[p] += self.params.pickup_reward;
                if c.color != p {
                    rewards[c.color] -= self.params.mismatch_penalty;
                }
                coin = None;
            }
        }
        // Spawn check happens after movement and collection.
        if coin.is_none() && rng.gen::<f64>() < self.params.spawn_prob {
            if let Some(pos) = self.random_empty_cell(&next_pos, rng) {
                let color = rng.gen_range(0..2usize);
                coin = Some(Coin { pos, color });
            }
        }
        StepResult {
            next_state: CoinsState {
                positions: next_pos,
                coin,
            },
            rewards,
            terminal: false,
        }
    }

    fn observe(&self, state: &CoinsState, player: usize) -> Observation {
        // Each player sees itself in channel 0 and its own color in
        // channel 2, so the two policies face symmetric problems.
        encode_coins_for(state, self.params.board, player)
    }

    fn reward_bound(&self) -> f64 {
        self.params.pickup_reward.abs().max(self.params.mismatch_penalty.abs())
    }
}

/// Canonical binary tensor: channels are player-1 position, player-2
/// position, color-1 coin, color-2 coin.
pub fn encode_coins(state: &CoinsState, board: usize) -> Observation {
    encode_coins_for(state, board, 0)
}

/// Perspective encoding: channel 0 is `player`'s position, channel 2 its
/// own coin color. `player = 0` gives the canonical layout.
pub fn encode_coins_for(state: &CoinsState, board: usize, player: usize) -> Observation {
    let mut data = vec![0.0; 4 * board * board];
    let plane = board * board;
    let at = |cell: Cell| cell.0 * board + cell.1;
    let me = player;
    let other = 1 - player;
    data[at(state.positions[me])] = 1.0;
    data[plane + at(state.positions[other])] = 1.0;
    if let Some(c) = state.coin {
        let channel = if c.color == me { 2 } else { 3 };
        data[channel * plane + at(c.pos)] = 1.0;
    }
    Observation::Tensor {
        shape: [4, board, board],
        data,
    }
}

/// Pickup accounting recovered from a reward stream.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PickupStats {
    /// Per-player total pickups.
    pub pickups: [usize; 2],
    /// Per-player pickups of the partner's color.
    pub mismatched: [usize; 2],
}

impl PickupStats {
    pub fn total(&self) -> usize {
        self.pickups[0] + self.pickups[1]
    }

    /// Other-color pickups over all pickups; 0 when nothing was collected.
    pub fn mismatch_fraction(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (self.mismatched[0] + self.mismatched[1]) as f64 / total as f64
    }

    pub fn mismatch_fraction_of(&self, player: usize) -> f64 {
        if self.pickups[player] == 0 {
            return 0.0;
        }
        self.mismatched[player] as f64 / self.pickups[player] as f64
    }
}

/// Classify pickups from per-step reward pairs. A pickup pays the
/// collector exactly `pickup_reward`; a mismatched pickup additionally
/// charges the partner `mismatch_penalty`.
pub fn pickup_stats_from_rewards<'a, I>(rewards: I, params: &CoinsParams) -> PickupStats
where
    I: IntoIterator<Item = &'a [f64; 2]>,
{
    let mut stats = PickupStats::default();
    for r in rewards {
        for p in 0..2 {
            if (r[p] - params.pickup_reward).abs() < 1e-9 {
                stats.pickups[p] += 1;
                if (r[1 - p] + params.mismatch_penalty).abs() < 1e-9 {
                    stats.mismatched[p] += 1;
                }
            }
        }
    }
    stats
}
