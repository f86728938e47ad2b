//! Exact policy evaluation on tabular games: Q and V for a fixed policy
//! pair by fixed-point iteration to a Bellman residual below tolerance.

use std::sync::Arc;

use crate::amtft::ExactDebit;
use crate::error::{Error, Result};
use crate::game::{JointAction, TabularGame};
use crate::policy::Policy;

const MAX_ITERATIONS: usize = 1_000_000;

/// Per-state action distribution, extracted from any policy.
pub fn policy_table<G: TabularGame>(game: &G, policy: &dyn Policy<G>, player: usize) -> Vec<Vec<f64>> {
    game.states()
        .iter()
        .map(|s| policy.action_probs(game, s, player))
        .collect()
}

/// Modal action per state; errors unless the table is essentially
/// deterministic (needed by the exact oracles).
pub fn modal_actions(table: &[Vec<f64>], require_deterministic: bool) -> Result<Vec<usize>> {
    table
        .iter()
        .map(|row| {
            let a = crate::policy::argmax(row);
            if require_deterministic && row[a] < 0.999 {
                return Err(Error::Unsupported(format!(
                    "oracle requires a deterministic policy; state row {row:?}"
                )));
            }
            Ok(a)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ExactSolution {
    /// q[player][state][action of that player].
    pub q: [Vec<Vec<f64>>; 2],
    /// v[player][state].
    pub v: [Vec<f64>; 2],
    pub residual: f64,
    pub iterations: usize,
}

/// Evaluate the pair (pi1, pi2): Q^i(s, a_i) marginalizes the partner's
/// policy; V^i(s) marginalizes the player's own.
pub fn exact_q<G: TabularGame>(
    game: &G,
    pi: [&Vec<Vec<f64>>; 2],
    delta: f64,
    tol: f64,
) -> Result<ExactSolution> {
    let states = game.states();
    let n = states.len();
    let actions = [game.num_actions(0), game.num_actions(1)];
    let mut v = [vec![0.0; n], vec![0.0; n]];
    let mut q = [vec![vec![0.0; actions[0]]; n], vec![vec![0.0; actions[1]]; n]];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while residual > tol {
        iterations += 1;
        if iterations > MAX_ITERATIONS {
            return Err(Error::NoConvergence(MAX_ITERATIONS));
        }
        residual = 0.0;
        let mut new_v = [vec![0.0; n], vec![0.0; n]];
        for (si, s) in states.iter().enumerate() {
            for player in 0..2 {
                for a_own in 0..actions[player] {
                    let mut total = 0.0;
                    for a_other in 0..actions[1 - player] {
                        let p_other = pi[1 - player][si][a_other];
                        if p_other == 0.0 {
                            continue;
                        }
                        let joint = if player == 0 {
                            JointAction::new(a_own, a_other)
                        } else {
                            JointAction::new(a_other, a_own)
                        };
                        let r = game.rewards(s, joint)[player];
                        let mut future = 0.0;
                        for (next, p) in game.transition_probs(s, joint) {
                            future += p * v[player][next];
                        }
                        total += p_other * (r + delta * future);
                    }
                    residual = residual.max((total - q[player][si][a_own]).abs());
                    q[player][si][a_own] = total;
                }
                new_v[player][si] = (0..actions[player])
                    .map(|a| pi[player][si][a] * q[player][si][a])
                    .sum();
            }
        }
        v = new_v;
    }
    Ok(ExactSolution { q, v, residual, iterations })
}

/// Exact one-shot deviation tables for both players under a cooperative
/// pair: debit(s, a) = Q^i_CC(s, a) - Q^i_CC(s, a_C).
pub fn exact_debit_tables<G: TabularGame + Clone + Send + 'static>(
    game: &G,
    coop: [&Vec<Vec<f64>>; 2],
    delta: f64,
    tol: f64,
) -> Result<[ExactDebit<G>; 2]> {
    let solution = exact_q(game, coop, delta, tol)?;
    let refs = [modal_actions(coop[0], true)?, modal_actions(coop[1], true)?];
    let make = |player: usize| -> ExactDebit<G> {
        let owned = game.clone();
        ExactDebit {
            q: solution.q[player].clone(),
            reference: refs[player].clone(),
            index: Arc::new(move |s: &G::State| owned.state_index(s)),
        }
    };
    Ok([make(0), make(1)])
}
