//! Exact-solver oracles: policy evaluation against Monte Carlo, the
//! sufficient-condition check, and the augmented-MDP best response.

use std::sync::Arc;

use amtft_core::amtft::AmTftConfig;
use amtft_core::envs::rpd::{pd_game, PdParams, RepeatedPd, COOPERATE, DEFECT};
use amtft_core::eval::theorem::{build_augmented_mdp, evaluate_fixed_policy, solve_best_response};
use amtft_core::eval::{best_response_oracle, check_theorem, exact_q, policy_table, OracleParams};
use amtft_core::game::{Game, JointAction, Observation, StepResult, TabularGame};
use amtft_core::policy::{FixedActionPolicy, TablePolicy};
use amtft_core::rng::{stream, Rng};
use rand::Rng as _;

fn rpd() -> RepeatedPd {
    pd_game(PdParams::new(2.0))
}

fn allc_tables(game: &RepeatedPd) -> [Vec<Vec<f64>>; 2] {
    [
        policy_table(game, &FixedActionPolicy(COOPERATE), 0),
        policy_table(game, &FixedActionPolicy(COOPERATE), 1),
    ]
}

fn alld_tables(game: &RepeatedPd) -> [Vec<Vec<f64>>; 2] {
    [
        policy_table(game, &FixedActionPolicy(DEFECT), 0),
        policy_table(game, &FixedActionPolicy(DEFECT), 1),
    ]
}

#[test]
fn all_cooperate_value_is_geometric_series() {
    let game = rpd();
    let coop = allc_tables(&game);
    let solution = exact_q(&game, [&coop[0], &coop[1]], 0.98, 1e-12).unwrap();
    for s in 0..5 {
        assert!((solution.v[1][s] - 50.0).abs() < 1e-9, "V2[{s}] = {}", solution.v[1][s]);
    }
    assert!(solution.residual < 1e-10);
}

#[test]
fn zero_discount_gives_immediate_rewards() {
    let game = rpd();
    let coop = allc_tables(&game);
    let solution = exact_q(&game, [&coop[0], &coop[1]], 0.0, 1e-14).unwrap();
    // Against a cooperator: C pays 1, D pays w = 2.
    for s in 0..5 {
        assert!((solution.q[1][s][COOPERATE] - 1.0).abs() < 1e-12);
        assert!((solution.q[1][s][DEFECT] - 2.0).abs() < 1e-12);
    }
}

/// Small random tabular game for cross-oracle checks.
#[derive(Clone)]
struct RandomGame {
    transitions: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<[f64; 2]>>,
    states: usize,
}

impl RandomGame {
    fn new(states: usize, seed: u64) -> Self {
        let mut rng = stream(seed, "random-game", 0);
        let joints = 4;
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for _ in 0..states {
            let mut t_rows = Vec::new();
            let mut r_rows = Vec::new();
            for _ in 0..joints {
                let raw: Vec<f64> = (0..states).map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = raw.iter().sum();
                t_rows.push(raw.into_iter().map(|x| x / total).collect());
                r_rows.push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            }
            transitions.push(t_rows);
            rewards.push(r_rows);
        }
        RandomGame {
            transitions,
            rewards,
            states,
        }
    }

    fn joint_index(a: JointAction) -> usize {
        a.a1 * 2 + a.a2
    }
}

impl Game for RandomGame {
    type State = usize;

    fn num_actions(&self, _player: usize) -> usize {
        2
    }

    fn initial_state(&self, _rng: &mut Rng) -> usize {
        0
    }

    fn transition(&self, state: &usize, action: JointAction, rng: &mut Rng) -> StepResult<usize> {
        let probs = &self.transitions[*state][Self::joint_index(action)];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut next = self.states - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                next = i;
                break;
            }
        }
        StepResult {
            next_state: next,
            rewards: self.rewards[*state][Self::joint_index(action)],
            terminal: false,
        }
    }

    fn observe(&self, state: &usize, _player: usize) -> Observation {
        Observation::OneHot {
            index: *state,
            len: self.states,
        }
    }

    fn reward_bound(&self) -> f64 {
        1.0
    }
}

impl TabularGame for RandomGame {
    fn num_states(&self) -> usize {
        self.states
    }

    fn states(&self) -> Vec<usize> {
        (0..self.states).collect()
    }

    fn state_index(&self, state: &usize) -> usize {
        *state
    }

    fn transition_probs(&self, state: &usize, action: JointAction) -> Vec<(usize, f64)> {
        self.transitions[*state][Self::joint_index(action)]
            .iter()
            .enumerate()
            .map(|(i, &p)| (i, p))
            .collect()
    }

    fn rewards(&self, state: &usize, action: JointAction) -> [f64; 2] {
        self.rewards[*state][Self::joint_index(action)]
    }

    fn initial_probs(&self) -> Vec<(usize, f64)> {
        vec![(0, 1.0)]
    }
}

#[test]
fn exact_q_matches_monte_carlo_on_random_games() {
    for seed in 0..3u64 {
        let game = RandomGame::new(3, seed);
        let pi1 = TablePolicy::stationary(vec![0.6, 0.4], 3);
        let pi2 = TablePolicy::stationary(vec![0.3, 0.7], 3);
        let t1 = policy_table(&game, &pi1, 0);
        let t2 = policy_table(&game, &pi2, 1);
        let delta = 0.9;
        let solution = exact_q(&game, [&t1, &t2], delta, 1e-12).unwrap();
        // Monte-Carlo estimate of V2(0) by truncated rollouts.
        let n = 4_000;
        let horizon = 200;
        let mut totals = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = stream(seed.wrapping_add(1000), "mc", i as u64);
            let mut state = 0usize;
            let mut value = 0.0;
            let mut weight = 1.0;
            for _ in 0..horizon {
                let a1 = if rng.gen::<f64>() < t1[state][0] { 0 } else { 1 };
                let a2 = if rng.gen::<f64>() < t2[state][0] { 0 } else { 1 };
                let result = game.transition(&state, JointAction::new(a1, a2), &mut rng);
                value += weight * result.rewards[1];
                weight *= delta;
                state = result.next_state;
            }
            totals.push(value);
        }
        let mean = totals.iter().sum::<f64>() / n as f64;
        let var = totals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        let exact = solution.v[1][0];
        assert!(
            (mean - exact).abs() < 3.0 * se + 1e-6,
            "seed {seed}: MC {mean} vs exact {exact} (se {se})"
        );
    }
}

#[test]
fn theorem_condition_holds_at_high_discount() {
    let game = rpd();
    let coop = allc_tables(&game);
    let defect = alld_tables(&game);
    let report = check_theorem(&game, [&coop[0], &coop[1]], [&defect[0], &defect[1]], 0.98, 1e-12).unwrap();
    assert!((report.d_star - 1.0).abs() < 1e-9);
    assert!((report.value_gap - 50.0).abs() < 1e-9);
    assert!(report.condition_holds);
}

#[test]
fn theorem_condition_fails_at_low_discount() {
    // Gap is 1/(1-d) and the bound d*/d = 1/d; the condition flips at
    // d = 1/2.
    let game = rpd();
    let coop = allc_tables(&game);
    let defect = alld_tables(&game);
    let low = check_theorem(&game, [&coop[0], &coop[1]], [&defect[0], &defect[1]], 0.3, 1e-12).unwrap();
    assert!(!low.condition_holds);
    let above = check_theorem(&game, [&coop[0], &coop[1]], [&defect[0], &defect[1]], 0.6, 1e-12).unwrap();
    assert!(above.condition_holds);
}

#[test]
fn identical_pairs_have_zero_gap() {
    let game = rpd();
    let coop = allc_tables(&game);
    let report = check_theorem(&game, [&coop[0], &coop[1]], [&coop[0], &coop[1]], 0.98, 1e-12).unwrap();
    assert!(report.value_gap.abs() < 1e-9);
    assert!(!report.condition_holds);
}

fn oracle_params(game_discount: f64) -> OracleParams {
    let mut cfg = AmTftConfig::rpd();
    cfg.rollouts = 1;
    OracleParams::from_amtft(&cfg, game_discount)
}

#[test]
fn best_response_cooperates_when_condition_holds() {
    let game = rpd();
    let coop = allc_tables(&game);
    let defect = alld_tables(&game);
    let (report, mdp) = best_response_oracle(
        &game,
        [&coop[0], &coop[1]],
        [&defect[0], &defect[1]],
        &oracle_params(0.98),
    )
    .unwrap();
    assert!(report.cooperates_in_c, "violations: {:?}", report.violations);
    assert!(report.defects_in_d, "violations: {:?}", report.violations);
    // Debit 1 with alpha 2 yields 2-turn punishments: b ranges over
    // {0, 1, 2} and W stays 0, so the augmented space is small.
    assert!(mdp.states.len() <= 15, "{} augmented states", mdp.states.len());
    // Best-response value from the start beats 100 random policies.
    let (v_star, _) = solve_best_response(&mdp, 0.98, 1e-12);
    let start_value: f64 = mdp.initial.iter().map(|&(i, p)| p * v_star[i]).sum();
    let mut rng = stream(77, "random-policy", 0);
    for _ in 0..100 {
        let policy: Vec<usize> = (0..mdp.states.len()).map(|_| rng.gen_range(0..mdp.num_actions)).collect();
        let v = evaluate_fixed_policy(&mdp, &policy, 0.98, 1e-12);
        let value: f64 = mdp.initial.iter().map(|&(i, p)| p * v[i]).sum();
        assert!(value <= start_value + 1e-7, "random policy beat the solver: {value} > {start_value}");
    }
}

#[test]
fn best_response_defects_when_condition_fails() {
    let game = rpd();
    let coop = allc_tables(&game);
    let defect = alld_tables(&game);
    let (report, _) = best_response_oracle(
        &game,
        [&coop[0], &coop[1]],
        [&defect[0], &defect[1]],
        &oracle_params(0.3),
    )
    .unwrap();
    // The condition is sufficient, not necessary; at discount 0.3 the
    // one-shot gain beats any punishment, so cooperation breaks.
    assert!(!report.cooperates_in_c);
}

#[test]
fn huge_threshold_makes_defection_the_best_response() {
    let game = rpd();
    let coop = allc_tables(&game);
    let defect = alld_tables(&game);
    let mut params = oracle_params(0.98);
    params.threshold = f64::INFINITY;
    let (report, mdp) = best_response_oracle(&game, [&coop[0], &coop[1]], [&defect[0], &defect[1]], &params).unwrap();
    assert!(!report.cooperates_in_c);
    // Punishment never triggers, so the augmented space is the base game.
    assert!(mdp.states.iter().all(|s| s.punish_left == 0));
    let (v, policy) = solve_best_response(&mdp, 0.98, 1e-12);
    let _ = v;
    assert!(policy.iter().all(|&a| a == DEFECT));
}
