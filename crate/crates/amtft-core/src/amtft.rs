//! Approximate Markov tit-for-tat: play the cooperative policy while
//! tracking the partner's accumulated deviation value (the debit W), and
//! switch to the defecting policy for a computed number of turns whenever
//! W crosses the threshold.
//!
//! Debits are measured in value, not actions: the partner's realized
//! action is compared against the cooperative policy's choice by rolling
//! out both continuations, so outcome-equivalent cooperative partners
//! accrue zero expected debit.

use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Agent, Game, JointAction};
use crate::policy::PolicyRef;
use crate::rng::{self, Rng};
use crate::training::qmodel::QModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DebitSource {
    /// Batched policy rollouts (the default).
    Rollout,
    /// A learned off-policy Q model.
    QModel,
    /// Exact one-shot deviation values from a tabular solver.
    Exact,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmTftConfig {
    /// Debit threshold T.
    pub threshold: f64,
    /// Punishment severity multiplier; must exceed 1.
    pub alpha: f64,
    /// Rollout replicates B per path.
    pub rollouts: usize,
    /// Rollout horizon M.
    pub horizon: usize,
    /// Hard cap on the punishment length k.
    pub punish_cap: usize,
    /// Discount applied inside the rollout window.
    pub discount: f64,
    pub debit_source: DebitSource,
    /// An action is compliant when the cooperative policy assigns it at
    /// least this probability; compliant actions short-circuit to debit 0.
    pub comply_floor: f64,
    /// Use alpha * T instead of alpha * W as the punishment target, as the
    /// original pseudocode literally reads. Off by default: W is the
    /// realized debit, T only the trigger.
    pub literal_k_target: bool,
}

impl AmTftConfig {
    pub fn rpd() -> Self {
        AmTftConfig {
            threshold: 0.0,
            alpha: 2.0,
            rollouts: 16,
            horizon: 40,
            punish_cap: 40,
            discount: 1.0,
            debit_source: DebitSource::Rollout,
            comply_floor: 0.1,
            literal_k_target: false,
        }
    }

    pub fn coins() -> Self {
        AmTftConfig {
            threshold: 0.5,
            alpha: 1.5,
            rollouts: 4,
            horizon: 12,
            punish_cap: 12,
            discount: 0.98,
            debit_source: DebitSource::Rollout,
            comply_floor: 0.1,
            literal_k_target: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 1.0 {
            return Err(Error::Config(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if self.rollouts == 0 || self.horizon == 0 {
            return Err(Error::EmptyRolloutBudget {
                replicates: self.rollouts,
                horizon: self.horizon,
            });
        }
        if self.threshold < 0.0 {
            return Err(Error::Config("threshold must be >= 0".into()));
        }
        if self.punish_cap == 0 {
            return Err(Error::Config("punish cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// The meta-policy's summary statistic: accumulated partner debit W and
/// remaining punishment turns b, plus the mirrored self ledger used to
/// recognize the partner's justified retaliation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AmTftMemory {
    /// Accumulated partner debit W.
    pub debit: f64,
    /// Remaining punishment turns b.
    pub punish_left: usize,
    /// Accumulated own debit (what the partner's ledger says about us).
    pub self_debit: f64,
    /// Expected remaining turns of the partner's retaliation.
    pub owed: usize,
}

/// Exact per-state one-shot deviation values for tabular games: the
/// observed player's Q table under cooperative continuation plus the
/// cooperative reference action.
pub struct ExactDebit<G: Game> {
    /// q[state][action] for the observed player.
    pub q: Vec<Vec<f64>>,
    /// Cooperative reference action per state.
    pub reference: Vec<usize>,
    pub index: Arc<dyn Fn(&G::State) -> usize + Send + Sync>,
}

impl<G: Game> ExactDebit<G> {
    pub fn debit(&self, state: &G::State, action: usize) -> f64 {
        let s = (self.index)(state);
        self.q[s][action] - self.q[s][self.reference[s]]
    }
}

impl<G: Game> Clone for ExactDebit<G> {
    fn clone(&self) -> Self {
        ExactDebit {
            q: self.q.clone(),
            reference: self.reference.clone(),
            index: self.index.clone(),
        }
    }
}

/// Resolved debit estimator, one entry per observable player.
pub enum DebitEstimator<G: Game> {
    Rollout,
    Exact([ExactDebit<G>; 2]),
    QModel([Option<Arc<QModel>>; 2]),
}

impl<G: Game> Clone for DebitEstimator<G> {
    fn clone(&self) -> Self {
        match self {
            DebitEstimator::Rollout => DebitEstimator::Rollout,
            DebitEstimator::Exact(t) => DebitEstimator::Exact(t.clone()),
            DebitEstimator::QModel(m) => DebitEstimator::QModel(m.clone()),
        }
    }
}

/// Partner return from one simulated continuation: `defect_prefix` steps
/// of the defect pair, then the cooperative pair, discounted within the
/// window. `first_override` replaces the observed player's first action.
fn rollout_partner_return<G: Game>(
    game: &G,
    start: &G::State,
    observed: usize,
    first_override: Option<usize>,
    defect_prefix: usize,
    coop: &[PolicyRef<G>; 2],
    defect: &[PolicyRef<G>; 2],
    horizon: usize,
    discount: f64,
    rng: &mut Rng,
) -> f64 {
    let mut state = start.clone();
    let mut total = 0.0;
    let mut weight = 1.0;
    for t in 0..horizon {
        let pick = |player: usize, rng: &mut Rng| -> usize {
            if t == 0 {
                if let Some(a) = first_override {
                    if player == observed {
                        return a;
                    }
                }
            }
            if t < defect_prefix {
                defect[player].sample(game, &state, player, rng)
            } else {
                coop[player].sample(game, &state, player, rng)
            }
        };
        let a1 = pick(0, rng);
        let a2 = pick(1, rng);
        let result = game.transition(&state, JointAction::new(a1, a2), rng);
        total += weight * result.rewards[observed];
        weight *= discount;
        state = result.next_state;
        if result.terminal {
            break;
        }
    }
    total
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Rollout debit: the observed player's M-step gain from its realized
/// action over the cooperative policy's choice, both continued by the
/// cooperative pair. Compliant actions return exactly 0. Replicates are
/// independent and reduced in a fixed order, so the estimate does not
/// depend on scheduling.
pub fn estimate_debit<G: Game>(
    game: &G,
    state: &G::State,
    observed: usize,
    action: usize,
    coop: &[PolicyRef<G>; 2],
    cfg: &AmTftConfig,
    rng: &mut Rng,
) -> Result<f64> {
    if cfg.rollouts == 0 || cfg.horizon == 0 {
        return Err(Error::EmptyRolloutBudget {
            replicates: cfg.rollouts,
            horizon: cfg.horizon,
        });
    }
    let probs = coop[observed].action_probs(game, state, observed);
    if probs[action] >= cfg.comply_floor {
        return Ok(0.0);
    }
    let base = rng.gen::<u64>();
    let b = cfg.rollouts;
    let returns: Vec<(f64, f64)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut true_rng = rng::stream(base, "true-path", i as u64);
            let actual = rollout_partner_return(
                game,
                state,
                observed,
                Some(action),
                0,
                coop,
                coop,
                cfg.horizon,
                cfg.discount,
                &mut true_rng,
            );
            let mut cf_rng = rng::stream(base, "counterfactual-path", i as u64);
            let counterfactual = rollout_partner_return(
                game,
                state,
                observed,
                None,
                0,
                coop,
                coop,
                cfg.horizon,
                cfg.discount,
                &mut cf_rng,
            );
            (actual, counterfactual)
        })
        .collect();
    let actual: Vec<f64> = returns.iter().map(|r| r.0).collect();
    let counterfactual: Vec<f64> = returns.iter().map(|r| r.1).collect();
    Ok(mean(&actual) - mean(&counterfactual))
}

/// Smallest k <= cap whose punishment costs the observed player at least
/// `target`: the M-step cooperative-path value minus the compound-path
/// (defect k turns, then cooperate) value from `state`, each averaged
/// over B rollouts. Returns the cap with a warning when no k suffices.
pub fn compute_punishment_k<G: Game>(
    game: &G,
    state: &G::State,
    observed: usize,
    coop: &[PolicyRef<G>; 2],
    defect: &[PolicyRef<G>; 2],
    target: f64,
    cfg: &AmTftConfig,
    rng: &mut Rng,
) -> Result<usize> {
    if target <= 0.0 {
        return Err(Error::NonPositiveTarget(target));
    }
    let base = rng.gen::<u64>();
    let b = cfg.rollouts;
    let coop_returns: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(base, "coop-path", i as u64);
            rollout_partner_return(game, state, observed, None, 0, coop, defect, cfg.horizon, cfg.discount, &mut r)
        })
        .collect();
    let coop_value = mean(&coop_returns);
    for k in 1..=cfg.punish_cap {
        let compound: Vec<f64> = (0..b)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(base, "compound-path", (k * b + i) as u64);
                rollout_partner_return(game, state, observed, None, k, coop, defect, cfg.horizon, cfg.discount, &mut r)
            })
            .collect();
        let loss = coop_value - mean(&compound);
        if loss >= target {
            return Ok(k);
        }
    }
    log::warn!(
        "no punishment length within cap {} reaches target {target}; using the cap",
        cfg.punish_cap
    );
    Ok(cfg.punish_cap)
}

/// Q-model debit: Q(s, a) - Q(s, a_C) where a_C is the cooperative
/// policy's modal action. No compliance short-circuit is needed since
/// identical arguments already give zero.
pub fn debit_from_qmodel<G: Game>(
    q: &QModel,
    game: &G,
    state: &G::State,
    action: usize,
    coop: &PolicyRef<G>,
) -> f64 {
    let values = q.q_values(game, state);
    let reference = coop.modal(game, state, q.player);
    values[action] - values[reference]
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AmTftStats {
    /// Punishment phases started.
    pub triggers: usize,
    /// Total punishment turns served.
    pub punish_turns: usize,
}

/// The amTFT meta-policy as a stateful agent.
pub struct AmTftAgent<G: Game> {
    pub player: usize,
    coop: [PolicyRef<G>; 2],
    defect: [PolicyRef<G>; 2],
    cfg: AmTftConfig,
    estimator: DebitEstimator<G>,
    memory: AmTftMemory,
    stats: AmTftStats,
    acted_cooperatively: bool,
}

impl<G: Game> AmTftAgent<G> {
    pub fn new(
        player: usize,
        coop: [PolicyRef<G>; 2],
        defect: [PolicyRef<G>; 2],
        estimator: DebitEstimator<G>,
        cfg: AmTftConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if matches!(cfg.debit_source, DebitSource::Exact) && !matches!(estimator, DebitEstimator::Exact(_)) {
            return Err(Error::MissingArtifact("exact debit tables".into()));
        }
        Ok(AmTftAgent {
            player,
            coop,
            defect,
            cfg,
            estimator,
            memory: AmTftMemory::default(),
            stats: AmTftStats::default(),
            acted_cooperatively: true,
        })
    }

    pub fn memory(&self) -> &AmTftMemory {
        &self.memory
    }

    pub fn stats(&self) -> &AmTftStats {
        &self.stats
    }

    pub fn config(&self) -> &AmTftConfig {
        &self.cfg
    }

    fn debit_of(&self, game: &G, state: &G::State, observed: usize, action: usize, rng: &mut Rng) -> f64 {
        match &self.estimator {
            DebitEstimator::Exact(tables) => {
                // Exact tables still honor the compliance convention:
                // the reference action itself is never a deviation.
                tables[observed].debit(state, action)
            }
            DebitEstimator::QModel(models) => match &models[observed] {
                Some(q) => debit_from_qmodel(q, game, state, action, &self.coop[observed]),
                None => estimate_debit(game, state, observed, action, &self.coop, &self.cfg, rng)
                    .expect("validated rollout budget"),
            },
            DebitEstimator::Rollout => {
                estimate_debit(game, state, observed, action, &self.coop, &self.cfg, rng)
                    .expect("validated rollout budget")
            }
        }
    }

    fn punishment_for(&self, game: &G, next_state: &G::State, observed: usize, debit: f64, rng: &mut Rng) -> usize {
        let basis = if self.cfg.literal_k_target {
            self.cfg.threshold
        } else {
            debit
        };
        let target = self.cfg.alpha * basis;
        match compute_punishment_k(game, next_state, observed, &self.coop, &self.defect, target, &self.cfg, rng) {
            Ok(k) => k,
            Err(e) => {
                // A non-positive target means the trigger fired on a
                // zero-or-negative balance; skip the punishment.
                log::warn!("punishment computation failed: {e}");
                0
            }
        }
    }
}

impl<G: Game> Agent<G> for AmTftAgent<G> {
    fn act(&mut self, game: &G, state: &G::State, rng: &mut Rng) -> usize {
        if self.memory.punish_left > 0 {
            self.acted_cooperatively = false;
            self.stats.punish_turns += 1;
            self.defect[self.player].sample(game, state, self.player, rng)
        } else {
            self.acted_cooperatively = true;
            self.coop[self.player].sample(game, state, self.player, rng)
        }
    }

    fn observe_step(&mut self, game: &G, state: &G::State, action: JointAction, next_state: &G::State, rng: &mut Rng) {
        let me = self.player;
        let other = 1 - me;
        let partner_action = action.of(other);
        let own_action = action.of(me);
        // Inside the partner's expected retaliation window the partner's
        // defection is justified punishment, not a new deviation.
        let masked = if self.memory.owed > 0 {
            self.memory.owed -= 1;
            true
        } else {
            false
        };
        if self.memory.punish_left == 0 {
            if !masked {
                let d = self.debit_of(game, state, other, partner_action, rng);
                self.memory.debit += d;
                if self.memory.debit > self.cfg.threshold {
                    let k = self.punishment_for(game, next_state, other, self.memory.debit, rng);
                    self.memory.punish_left = k;
                    self.memory.debit = 0.0;
                    if k > 0 {
                        self.stats.triggers += 1;
                    }
                }
            }
        } else {
            self.memory.punish_left -= 1;
        }
        // Mirror ledger: track our own deviations (sampling noise or
        // injected errors) so the partner's response is anticipated.
        if self.acted_cooperatively && !masked {
            let d = self.debit_of(game, state, me, own_action, rng);
            self.memory.self_debit += d;
            if self.memory.self_debit > self.cfg.threshold {
                let k = self.punishment_for(game, next_state, me, self.memory.self_debit, rng);
                self.memory.owed += k;
                self.memory.self_debit = 0.0;
            }
        }
    }

    fn reset(&mut self) {
        self.memory = AmTftMemory::default();
        self.stats = AmTftStats::default();
        self.acted_cooperatively = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::rpd::{pd_game, PdParams, PdState, COOPERATE, DEFECT};
    use crate::policy::FixedActionPolicy;
    use crate::rng::stream;

    fn coop_pair() -> [PolicyRef<crate::envs::rpd::RepeatedPd>; 2] {
        [Arc::new(FixedActionPolicy(COOPERATE)), Arc::new(FixedActionPolicy(COOPERATE))]
    }

    fn defect_pair() -> [PolicyRef<crate::envs::rpd::RepeatedPd>; 2] {
        [Arc::new(FixedActionPolicy(DEFECT)), Arc::new(FixedActionPolicy(DEFECT))]
    }

    #[test]
    fn compliant_action_short_circuits_to_zero() {
        let game = pd_game(PdParams::new(2.0));
        let cfg = AmTftConfig::rpd();
        let mut rng = stream(1, "debit", 0);
        let d = estimate_debit(&game, &PdState::CC, 1, COOPERATE, &coop_pair(), &cfg, &mut rng).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn defection_debit_is_temptation_minus_one() {
        // Deterministic policies make the rollout exact: w - 1 = 1.
        let game = pd_game(PdParams::new(2.0));
        let cfg = AmTftConfig::rpd();
        let mut rng = stream(2, "debit", 0);
        let d = estimate_debit(&game, &PdState::CC, 1, DEFECT, &coop_pair(), &cfg, &mut rng).unwrap();
        assert!((d - 1.0).abs() < 1e-9, "debit {d}");
    }

    #[test]
    fn punishment_length_matches_per_turn_loss() {
        // Cooperation pays the partner 1 per turn, mutual defection 0, so
        // with an undiscounted window the loss of k turns is k; a target
        // of 2 (debit 1, alpha 2) needs k = 2.
        let game = pd_game(PdParams::new(2.0));
        let cfg = AmTftConfig::rpd();
        let mut rng = stream(3, "punish", 0);
        let k = compute_punishment_k(&game, &PdState::DC, 1, &coop_pair(), &defect_pair(), 2.0, &cfg, &mut rng).unwrap();
        assert_eq!(k, 2);
    }

    #[test]
    fn minimal_target_gives_one_turn() {
        let game = pd_game(PdParams::new(2.0));
        let cfg = AmTftConfig::rpd();
        let mut rng = stream(4, "punish", 0);
        let k = compute_punishment_k(&game, &PdState::DC, 1, &coop_pair(), &defect_pair(), 0.5, &cfg, &mut rng).unwrap();
        assert_eq!(k, 1);
    }

    #[test]
    fn non_positive_target_is_an_error() {
        let game = pd_game(PdParams::new(2.0));
        let cfg = AmTftConfig::rpd();
        let mut rng = stream(5, "punish", 0);
        assert!(matches!(
            compute_punishment_k(&game, &PdState::DC, 1, &coop_pair(), &defect_pair(), 0.0, &cfg, &mut rng),
            Err(Error::NonPositiveTarget(_))
        ));
    }

    #[test]
    fn empty_budget_is_an_error() {
        let game = pd_game(PdParams::new(2.0));
        let mut cfg = AmTftConfig::rpd();
        cfg.rollouts = 0;
        let mut rng = stream(6, "debit", 0);
        assert!(matches!(
            estimate_debit(&game, &PdState::CC, 1, DEFECT, &coop_pair(), &cfg, &mut rng),
            Err(Error::EmptyRolloutBudget { .. })
        ));
    }

    #[test]
    fn infinite_threshold_never_punishes() {
        let game = pd_game(PdParams::new(2.0));
        let mut cfg = AmTftConfig::rpd();
        cfg.threshold = f64::INFINITY;
        let mut agent = AmTftAgent::new(0, coop_pair(), defect_pair(), DebitEstimator::Rollout, cfg).unwrap();
        let mut rng = stream(7, "agent", 0);
        let mut state = PdState::Start;
        for _ in 0..100 {
            let a = agent.act(&game, &state, &mut rng);
            assert_eq!(a, COOPERATE);
            let joint = JointAction::new(a, DEFECT);
            let next = game.transition(&state, joint, &mut rng).next_state;
            agent.observe_step(&game, &state, joint, &next, &mut rng);
            state = next;
        }
        assert_eq!(agent.stats().triggers, 0);
        assert_eq!(agent.memory().punish_left, 0);
    }

    #[test]
    fn compliant_partner_keeps_memory_at_zero() {
        let game = pd_game(PdParams::new(2.0));
        let mut agent = AmTftAgent::new(0, coop_pair(), defect_pair(), DebitEstimator::Rollout, AmTftConfig::rpd()).unwrap();
        let mut rng = stream(8, "agent", 0);
        let mut state = PdState::Start;
        for _ in 0..50 {
            let a = agent.act(&game, &state, &mut rng);
            assert_eq!(a, COOPERATE);
            let joint = JointAction::new(a, COOPERATE);
            let next = game.transition(&state, joint, &mut rng).next_state;
            agent.observe_step(&game, &state, joint, &next, &mut rng);
            state = next;
        }
        assert_eq!(agent.memory().debit, 0.0);
        assert_eq!(agent.memory().punish_left, 0);
        assert_eq!(agent.stats().triggers, 0);
    }

    #[test]
    fn deviation_triggers_finite_punishment_then_reset() {
        let game = pd_game(PdParams::new(2.0));
        let mut agent = AmTftAgent::new(0, coop_pair(), defect_pair(), DebitEstimator::Rollout, AmTftConfig::rpd()).unwrap();
        let mut rng = stream(9, "agent", 0);
        let state = PdState::CC;
        let a = agent.act(&game, &state, &mut rng);
        let joint = JointAction::new(a, DEFECT);
        let next = game.transition(&state, joint, &mut rng).next_state;
        agent.observe_step(&game, &state, joint, &next, &mut rng);
        // Debit 1 > T = 0 triggers; target 2 with per-turn loss 1 gives k=2.
        assert_eq!(agent.memory().punish_left, 2);
        assert_eq!(agent.memory().debit, 0.0);
        assert_eq!(agent.stats().triggers, 1);
        // Punishment plays the defect policy and counts down.
        let mut state = next;
        for expected_left in [2usize, 1] {
            assert_eq!(agent.memory().punish_left, expected_left);
            let a = agent.act(&game, &state, &mut rng);
            assert_eq!(a, DEFECT);
            let joint = JointAction::new(a, COOPERATE);
            let next = game.transition(&state, joint, &mut rng).next_state;
            agent.observe_step(&game, &state, joint, &next, &mut rng);
            state = next;
        }
        assert_eq!(agent.memory().punish_left, 0);
        let a = agent.act(&game, &state, &mut rng);
        assert_eq!(a, COOPERATE);
    }

    #[test]
    fn trigger_count_monotone_in_threshold_on_fixed_trace() {
        // Replay one partner-action trace against thresholds 0 < 1 < 3:
        // higher thresholds can only reduce punishment phases.
        let game = pd_game(PdParams::new(2.0));
        let trace: Vec<usize> = (0..60).map(|t| if t % 7 == 3 || t % 11 == 5 { DEFECT } else { COOPERATE }).collect();
        let mut triggers = Vec::new();
        for threshold in [0.0, 1.0, 3.0] {
            let mut cfg = AmTftConfig::rpd();
            cfg.threshold = threshold;
            let mut agent =
                AmTftAgent::new(0, coop_pair(), defect_pair(), DebitEstimator::Rollout, cfg).unwrap();
            let mut rng = stream(10, "agent", 0);
            let mut state = PdState::Start;
            for &partner in &trace {
                let a = agent.act(&game, &state, &mut rng);
                let joint = JointAction::new(a, partner);
                let next = game.transition(&state, joint, &mut rng).next_state;
                agent.observe_step(&game, &state, joint, &next, &mut rng);
                state = next;
            }
            triggers.push(agent.stats().triggers);
        }
        assert!(triggers[0] >= triggers[1] && triggers[1] >= triggers[2], "{triggers:?}");
    }
}
