//! Executable check of the sufficient cooperation condition and an exact
//! best-response oracle against an amTFT opponent.
//!
//! The oracle augments the base game's state with the amTFT memory
//! (accumulated debit, remaining punishment turns), enumerates the
//! reachable memory values exactly, and solves the partner's MDP by value
//! iteration.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{JointAction, TabularGame};

use super::exact::{exact_q, modal_actions};

/// Result of the sufficient-condition check: the one-shot deviation bound
/// d*, the worst-case value gap between the cooperative and defect pairs,
/// and whether gap > d* / delta.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoremReport {
    pub d_star: f64,
    pub value_gap: f64,
    pub delta: f64,
    pub condition_holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_response: Option<BrClassification>,
}

/// d* = max over states and partner actions of the one-shot deviation
/// gain under cooperative continuation; gap = min over states of
/// V2(s, coop pair) - V2(s, defect pair).
pub fn check_theorem<G: TabularGame>(
    game: &G,
    coop: [&Vec<Vec<f64>>; 2],
    defect: [&Vec<Vec<f64>>; 2],
    delta: f64,
    tol: f64,
) -> Result<TheoremReport> {
    let coop_solution = exact_q(game, coop, delta, tol)?;
    let defect_solution = exact_q(game, defect, delta, tol)?;
    let coop_ref = modal_actions(coop[1], true)?;
    let n = game.num_states();
    let mut d_star = f64::NEG_INFINITY;
    for s in 0..n {
        let q = &coop_solution.q[1][s];
        for a in 0..game.num_actions(1) {
            d_star = d_star.max(q[a] - q[coop_ref[s]]);
        }
    }
    let mut value_gap = f64::INFINITY;
    for s in 0..n {
        value_gap = value_gap.min(coop_solution.v[1][s] - defect_solution.v[1][s]);
    }
    let condition_holds = value_gap > d_star / delta;
    Ok(TheoremReport {
        d_star,
        value_gap,
        delta,
        condition_holds,
        best_response: None,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleParams {
    pub threshold: f64,
    pub alpha: f64,
    pub punish_cap: usize,
    /// Horizon used by the punishment-length computation.
    pub horizon: usize,
    /// Discount inside the punishment window.
    pub window_discount: f64,
    /// Discount of the partner's MDP.
    pub game_discount: f64,
    pub tol: f64,
    pub state_cap: usize,
}

impl OracleParams {
    pub fn from_amtft(cfg: &crate::amtft::AmTftConfig, game_discount: f64) -> Self {
        OracleParams {
            threshold: cfg.threshold,
            alpha: cfg.alpha,
            punish_cap: cfg.punish_cap,
            horizon: cfg.horizon,
            window_discount: cfg.discount,
            game_discount,
            tol: 1e-12,
            state_cap: 20_000,
        }
    }
}

/// One augmented state: base state index, exact accumulated debit (by
/// bit pattern), and remaining punishment turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AugState {
    pub state: usize,
    pub debit_bits: u64,
    pub punish_left: usize,
}

impl AugState {
    pub fn debit(&self) -> f64 {
        f64::from_bits(self.debit_bits)
    }
}

/// The partner's decision problem against a fixed amTFT opponent.
pub struct AugmentedMdp {
    pub states: Vec<AugState>,
    pub num_actions: usize,
    /// transitions[aug][a2] -> (next aug index, probability).
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    /// rewards[aug][a2]: partner's immediate reward.
    pub rewards: Vec<Vec<f64>>,
    /// The amTFT side's action in each augmented state.
    pub amtft_action: Vec<usize>,
    pub initial: Vec<(usize, f64)>,
}

/// Expected M-step discounted partner return of "defect pair for the
/// first `prefix` steps, cooperative pair after", from every state.
fn m_step_values<G: TabularGame>(
    game: &G,
    coop_modal: &[Vec<usize>; 2],
    defect_modal: &[Vec<usize>; 2],
    prefix: usize,
    horizon: usize,
    discount: f64,
) -> Vec<f64> {
    let n = game.num_states();
    let states = game.states();
    let mut value = vec![0.0; n];
    // Backward over the window; step index m in 0..horizon.
    for m in (0..horizon).rev() {
        let tables = if m < prefix { defect_modal } else { coop_modal };
        let mut next = vec![0.0; n];
        for (si, s) in states.iter().enumerate() {
            let joint = JointAction::new(tables[0][si], tables[1][si]);
            let r = game.rewards(s, joint)[1];
            let mut future = 0.0;
            for (sj, p) in game.transition_probs(s, joint) {
                future += p * value[sj];
            }
            next[si] = r + discount * future;
        }
        value = next;
    }
    value
}

/// Build the augmented MDP for the partner of an exact-debit amTFT
/// agent playing seat 1 (player index 0).
pub fn build_augmented_mdp<G: TabularGame>(
    game: &G,
    coop: [&Vec<Vec<f64>>; 2],
    defect: [&Vec<Vec<f64>>; 2],
    params: &OracleParams,
) -> Result<AugmentedMdp> {
    let coop_modal = [modal_actions(coop[0], true)?, modal_actions(coop[1], true)?];
    let defect_modal = [modal_actions(defect[0], true)?, modal_actions(defect[1], true)?];
    let coop_solution = exact_q(game, coop, params.game_discount, params.tol)?;
    let n = game.num_states();
    let states = game.states();
    let a2 = game.num_actions(1);
    // Exact debit per (state, partner action).
    let mut debit = vec![vec![0.0; a2]; n];
    for s in 0..n {
        for a in 0..a2 {
            debit[s][a] = coop_solution.q[1][s][a] - coop_solution.q[1][s][coop_modal[1][s]];
        }
    }
    // Punishment losses: loss[k][s] for compound prefix k.
    let coop_window = m_step_values(game, &coop_modal, &defect_modal, 0, params.horizon, params.window_discount);
    let mut losses = Vec::with_capacity(params.punish_cap);
    for k in 1..=params.punish_cap {
        let compound = m_step_values(game, &coop_modal, &defect_modal, k, params.horizon, params.window_discount);
        losses.push((0..n).map(|s| coop_window[s] - compound[s]).collect::<Vec<f64>>());
    }
    let punishment_k = |s_next: usize, target: f64| -> usize {
        for k in 1..=params.punish_cap {
            if losses[k - 1][s_next] >= target {
                return k;
            }
        }
        params.punish_cap
    };
    // Reachability over (state, debit, punish_left).
    let mut index: HashMap<AugState, usize> = HashMap::new();
    let mut list: Vec<AugState> = Vec::new();
    let mut frontier: Vec<usize> = Vec::new();
    let mut transitions: Vec<Vec<Vec<(usize, f64)>>> = Vec::new();
    let mut rewards: Vec<Vec<f64>> = Vec::new();
    let mut amtft_action: Vec<usize> = Vec::new();
    let intern = |aug: AugState,
                      index: &mut HashMap<AugState, usize>,
                      list: &mut Vec<AugState>,
                      frontier: &mut Vec<usize>|
     -> usize {
        if let Some(&i) = index.get(&aug) {
            return i;
        }
        let i = list.len();
        index.insert(aug, i);
        list.push(aug);
        frontier.push(i);
        i
    };
    let mut initial = Vec::new();
    for (s0, p) in game.initial_probs() {
        let aug = AugState {
            state: s0,
            debit_bits: 0f64.to_bits(),
            punish_left: 0,
        };
        let i = intern(aug, &mut index, &mut list, &mut frontier);
        initial.push((i, p));
    }
    while let Some(i) = frontier.pop() {
        if list.len() > params.state_cap {
            return Err(Error::StateSpaceCap {
                cap: params.state_cap,
                reached: list.len(),
            });
        }
        let aug = list[i];
        let s = aug.state;
        let a1 = if aug.punish_left > 0 {
            defect_modal[0][s]
        } else {
            coop_modal[0][s]
        };
        let mut row_t = Vec::with_capacity(a2);
        let mut row_r = Vec::with_capacity(a2);
        for a in 0..a2 {
            let joint = JointAction::new(a1, a);
            row_r.push(game.rewards(&states[s], joint)[1]);
            let mut outs = Vec::new();
            for (sj, p) in game.transition_probs(&states[s], joint) {
                let next_mem = if aug.punish_left > 0 {
                    AugState {
                        state: sj,
                        debit_bits: aug.debit_bits,
                        punish_left: aug.punish_left - 1,
                    }
                } else {
                    // An infinite threshold can never bind, so the debit
                    // has no behavioral effect and stays collapsed at 0.
                    let w = if params.threshold.is_infinite() {
                        0.0
                    } else {
                        aug.debit() + debit[s][a]
                    };
                    if w > params.threshold {
                        AugState {
                            state: sj,
                            debit_bits: 0f64.to_bits(),
                            punish_left: punishment_k(sj, params.alpha * w),
                        }
                    } else {
                        AugState {
                            state: sj,
                            debit_bits: w.to_bits(),
                            punish_left: 0,
                        }
                    }
                };
                let j = intern(next_mem, &mut index, &mut list, &mut frontier);
                outs.push((j, p));
            }
            row_t.push(outs);
        }
        // The frontier queue may outpace transitions; store at slot i.
        if transitions.len() <= i {
            transitions.resize(i + 1, Vec::new());
            rewards.resize(i + 1, Vec::new());
            amtft_action.resize(i + 1, 0);
        }
        transitions[i] = row_t;
        rewards[i] = row_r;
        amtft_action[i] = a1;
    }
    // Every interned state was pushed to the frontier exactly once, so
    // all rows are filled.
    assert!(transitions.len() == list.len() && transitions.iter().all(|t| !t.is_empty()));
    Ok(AugmentedMdp {
        states: list,
        num_actions: a2,
        transitions,
        rewards,
        amtft_action,
        initial,
    })
}

/// Value iteration for the partner on the augmented MDP.
pub fn solve_best_response(mdp: &AugmentedMdp, discount: f64, tol: f64) -> (Vec<f64>, Vec<usize>) {
    let n = mdp.states.len();
    let mut v = vec![0.0; n];
    loop {
        let mut residual: f64 = 0.0;
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.num_actions {
                let mut total = mdp.rewards[i][a];
                for &(j, p) in &mdp.transitions[i][a] {
                    total += discount * p * v[j];
                }
                best = best.max(total);
            }
            residual = residual.max((best - v[i]).abs());
            next[i] = best;
        }
        v = next;
        if residual < tol {
            break;
        }
    }
    let mut policy = vec![0; n];
    for i in 0..n {
        let mut best = f64::NEG_INFINITY;
        for a in 0..mdp.num_actions {
            let mut total = mdp.rewards[i][a];
            for &(j, p) in &mdp.transitions[i][a] {
                total += discount * p * v[j];
            }
            if total > best {
                best = total;
                policy[i] = a;
            }
        }
    }
    (v, policy)
}

/// Evaluate a fixed stationary augmented policy (one action per
/// augmented state).
pub fn evaluate_fixed_policy(mdp: &AugmentedMdp, policy: &[usize], discount: f64, tol: f64) -> Vec<f64> {
    let n = mdp.states.len();
    let mut v = vec![0.0; n];
    loop {
        let mut residual: f64 = 0.0;
        let mut next = vec![0.0; n];
        for i in 0..n {
            let a = policy[i];
            let mut total = mdp.rewards[i][a];
            for &(j, p) in &mdp.transitions[i][a] {
                total += discount * p * v[j];
            }
            residual = residual.max((total - v[i]).abs());
            next[i] = total;
        }
        v = next;
        if residual < tol {
            break;
        }
    }
    v
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BrClassification {
    /// Best response plays the cooperative action in every reachable
    /// cooperative-phase state.
    pub cooperates_in_c: bool,
    /// Best response plays the defect action in every punishment state.
    pub defects_in_d: bool,
    pub num_augmented_states: usize,
    /// Best-response value from the initial distribution.
    pub value_at_start: f64,
    pub violations: Vec<String>,
}

/// Solve the partner's augmented MDP and classify the best response
/// against the cooperative/defect prescriptions. Ties count as
/// compliant: if the prescribed action attains the optimum the partner
/// has no profitable deviation.
pub fn best_response_oracle<G: TabularGame>(
    game: &G,
    coop: [&Vec<Vec<f64>>; 2],
    defect: [&Vec<Vec<f64>>; 2],
    params: &OracleParams,
) -> Result<(BrClassification, AugmentedMdp)> {
    let mdp = build_augmented_mdp(game, coop, defect, params)?;
    let (v, _) = solve_best_response(&mdp, params.game_discount, params.tol);
    let coop_modal = modal_actions(coop[1], true)?;
    let defect_modal = modal_actions(defect[1], true)?;
    let mut cooperates = true;
    let mut defects = true;
    let mut violations = Vec::new();
    let tie_eps = 1e-7;
    for (i, aug) in mdp.states.iter().enumerate() {
        let q_of = |a: usize| -> f64 {
            let mut total = mdp.rewards[i][a];
            for &(j, p) in &mdp.transitions[i][a] {
                total += params.game_discount * p * v[j];
            }
            total
        };
        let best = (0..mdp.num_actions).map(q_of).fold(f64::NEG_INFINITY, f64::max);
        let prescribed = if aug.punish_left == 0 {
            coop_modal[aug.state]
        } else {
            defect_modal[aug.state]
        };
        let ok = q_of(prescribed) >= best - tie_eps;
        if !ok {
            let phase = if aug.punish_left == 0 { "C" } else { "D" };
            violations.push(format!(
                "{phase}-phase state {} (W={}, b={}): prescribed {} loses {}",
                aug.state,
                aug.debit(),
                aug.punish_left,
                prescribed,
                best - q_of(prescribed)
            ));
            if aug.punish_left == 0 {
                cooperates = false;
            } else {
                defects = false;
            }
        }
    }
    let value_at_start = mdp.initial.iter().map(|&(i, p)| p * v[i]).sum();
    Ok((
        BrClassification {
            cooperates_in_c: cooperates,
            defects_in_d: defects,
            num_augmented_states: mdp.states.len(),
            value_at_start,
            violations,
        },
        mdp,
    ))
}
