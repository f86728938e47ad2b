//! Baseline strategies and the uniform agent interface: AllC, AllD, Grim
//! Trigger, amTFT, and the compound defect-then-cooperate policy.

use std::sync::Arc;

use crate::amtft::{AmTftAgent, AmTftConfig, DebitEstimator, ExactDebit};
use crate::error::{Error, Result};
use crate::game::{Agent, Game, JointAction};
use crate::policy::{PolicyAgent, PolicyRef};
use crate::rng::Rng;
use crate::training::qmodel::QModel;

/// How an observed action is judged against the cooperative policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Compliance {
    /// Compliant when the cooperative policy gives it probability >= p.
    Floor(f64),
    /// Compliant only when it equals a fresh cooperative sample.
    Strict,
}

impl Compliance {
    pub fn is_compliant<G: Game>(
        &self,
        game: &G,
        state: &G::State,
        player: usize,
        action: usize,
        coop: &PolicyRef<G>,
        rng: &mut Rng,
    ) -> bool {
        match self {
            Compliance::Floor(p) => coop.action_probs(game, state, player)[action] >= *p,
            Compliance::Strict => coop.sample(game, state, player, rng) == action,
        }
    }
}

/// Grim Trigger: play the cooperative policy until the partner's first
/// non-compliant action, then the defect policy forever.
pub struct GrimAgent<G: Game> {
    pub player: usize,
    coop: [PolicyRef<G>; 2],
    defect: [PolicyRef<G>; 2],
    compliance: Compliance,
    triggered: bool,
}

impl<G: Game> GrimAgent<G> {
    pub fn new(player: usize, coop: [PolicyRef<G>; 2], defect: [PolicyRef<G>; 2], compliance: Compliance) -> Self {
        GrimAgent {
            player,
            coop,
            defect,
            compliance,
            triggered: false,
        }
    }

    pub fn triggered(&self) -> bool {
        self.triggered
    }
}

impl<G: Game> Agent<G> for GrimAgent<G> {
    fn act(&mut self, game: &G, state: &G::State, rng: &mut Rng) -> usize {
        if self.triggered {
            self.defect[self.player].sample(game, state, self.player, rng)
        } else {
            self.coop[self.player].sample(game, state, self.player, rng)
        }
    }

    fn observe_step(&mut self, game: &G, state: &G::State, action: JointAction, _next: &G::State, rng: &mut Rng) {
        if self.triggered {
            return;
        }
        let other = 1 - self.player;
        let partner_action = action.of(other);
        if !self
            .compliance
            .is_compliant(game, state, other, partner_action, &self.coop[other], rng)
        {
            self.triggered = true;
        }
    }

    fn reset(&mut self) {
        self.triggered = false;
    }
}

/// Defect for exactly k turns, cooperate thereafter, regardless of the
/// partner's behavior.
pub struct CompoundAgent<G: Game> {
    pub player: usize,
    pub k: usize,
    remaining: usize,
    coop: PolicyRef<G>,
    defect: PolicyRef<G>,
}

impl<G: Game> CompoundAgent<G> {
    pub fn new(player: usize, k: usize, coop: PolicyRef<G>, defect: PolicyRef<G>) -> Self {
        CompoundAgent {
            player,
            k,
            remaining: k,
            coop,
            defect,
        }
    }
}

impl<G: Game> Agent<G> for CompoundAgent<G> {
    fn act(&mut self, game: &G, state: &G::State, rng: &mut Rng) -> usize {
        if self.remaining > 0 {
            self.remaining -= 1;
            self.defect.sample(game, state, self.player, rng)
        } else {
            self.coop.sample(game, state, self.player, rng)
        }
    }

    fn reset(&mut self) {
        self.remaining = self.k;
    }
}

/// Wraps an agent and overrides its emitted action at one step; the inner
/// agent still observes the realized joint action. Used to inject
/// one-step errors into matches.
pub struct DeviationInjector<G: Game> {
    pub inner: Box<dyn Agent<G> + Send>,
    pub at_step: usize,
    pub action: usize,
    step: usize,
}

impl<G: Game> DeviationInjector<G> {
    pub fn new(inner: Box<dyn Agent<G> + Send>, at_step: usize, action: usize) -> Self {
        DeviationInjector {
            inner,
            at_step,
            action,
            step: 0,
        }
    }
}

impl<G: Game> Agent<G> for DeviationInjector<G> {
    fn act(&mut self, game: &G, state: &G::State, rng: &mut Rng) -> usize {
        let chosen = self.inner.act(game, state, rng);
        if self.step == self.at_step {
            self.action
        } else {
            chosen
        }
    }

    fn observe_step(&mut self, game: &G, state: &G::State, action: JointAction, next: &G::State, rng: &mut Rng) {
        self.step += 1;
        self.inner.observe_step(game, state, action, next, rng);
    }

    fn reset(&mut self) {
        self.step = 0;
        self.inner.reset();
    }
}

/// Strategy selection for tournaments and configs.
#[derive(Clone, Debug, PartialEq)]
pub enum AgentKind {
    AllC,
    AllD,
    Grim,
    GrimStrict,
    AmTft,
    CompoundDkc(usize),
}

impl AgentKind {
    /// Parse a strategy id ("allc", "alld", "grim", "grim-strict",
    /// "amtft", "dkc:k").
    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "allc" => Ok(AgentKind::AllC),
            "alld" => Ok(AgentKind::AllD),
            "grim" => Ok(AgentKind::Grim),
            "grim-strict" => Ok(AgentKind::GrimStrict),
            "amtft" => Ok(AgentKind::AmTft),
            other => {
                if let Some(k) = other.strip_prefix("dkc:") {
                    let k: usize = k
                        .parse()
                        .map_err(|_| Error::Config(format!("bad compound strategy id '{other}'")))?;
                    Ok(AgentKind::CompoundDkc(k))
                } else {
                    Err(Error::Config(format!("unknown strategy id '{other}'")))
                }
            }
        }
    }

    pub fn id(&self) -> String {
        match self {
            AgentKind::AllC => "allc".into(),
            AgentKind::AllD => "alld".into(),
            AgentKind::Grim => "grim".into(),
            AgentKind::GrimStrict => "grim-strict".into(),
            AgentKind::AmTft => "amtft".into(),
            AgentKind::CompoundDkc(k) => format!("dkc:{k}"),
        }
    }
}

/// Everything strategies may need: the trained cooperative and defect
/// pairs plus optional exact-debit tables and Q models for amTFT.
pub struct StrategyContext<G: Game> {
    pub coop: Option<[PolicyRef<G>; 2]>,
    pub defect: Option<[PolicyRef<G>; 2]>,
    pub amtft: AmTftConfig,
    pub exact_debit: Option<[ExactDebit<G>; 2]>,
    pub qmodels: [Option<Arc<QModel>>; 2],
}

impl<G: Game> StrategyContext<G> {
    pub fn new(coop: [PolicyRef<G>; 2], defect: [PolicyRef<G>; 2], amtft: AmTftConfig) -> Self {
        StrategyContext {
            coop: Some(coop),
            defect: Some(defect),
            amtft,
            exact_debit: None,
            qmodels: [None, None],
        }
    }

    fn coop(&self) -> Result<&[PolicyRef<G>; 2]> {
        self.coop
            .as_ref()
            .ok_or_else(|| Error::MissingArtifact("cooperative policy pair".into()))
    }

    fn defect(&self) -> Result<&[PolicyRef<G>; 2]> {
        self.defect
            .as_ref()
            .ok_or_else(|| Error::MissingArtifact("defect policy pair".into()))
    }

    fn estimator(&self) -> DebitEstimator<G> {
        match self.amtft.debit_source {
            crate::amtft::DebitSource::Exact => {
                DebitEstimator::Exact(self.exact_debit.clone().expect("exact debit tables"))
            }
            crate::amtft::DebitSource::QModel => DebitEstimator::QModel(self.qmodels.clone()),
            crate::amtft::DebitSource::Rollout => DebitEstimator::Rollout,
        }
    }
}

/// Build a stateful agent for one seat. Fails when the artifacts the kind
/// requires are missing.
pub fn make_agent<G: Game + 'static>(
    kind: &AgentKind,
    player: usize,
    ctx: &StrategyContext<G>,
) -> Result<Box<dyn Agent<G> + Send>> {
    let floor = Compliance::Floor(ctx.amtft.comply_floor);
    Ok(match kind {
        AgentKind::AllC => Box::new(PolicyAgent::sampling(player, ctx.coop()?[player].clone())),
        AgentKind::AllD => Box::new(PolicyAgent::sampling(player, ctx.defect()?[player].clone())),
        AgentKind::Grim => Box::new(GrimAgent::new(player, ctx.coop()?.clone(), ctx.defect()?.clone(), floor)),
        AgentKind::GrimStrict => Box::new(GrimAgent::new(
            player,
            ctx.coop()?.clone(),
            ctx.defect()?.clone(),
            Compliance::Strict,
        )),
        AgentKind::AmTft => {
            if matches!(ctx.amtft.debit_source, crate::amtft::DebitSource::Exact) && ctx.exact_debit.is_none() {
                return Err(Error::MissingArtifact("exact debit tables".into()));
            }
            Box::new(AmTftAgent::new(
                player,
                ctx.coop()?.clone(),
                ctx.defect()?.clone(),
                ctx.estimator(),
                ctx.amtft.clone(),
            )?)
        }
        AgentKind::CompoundDkc(k) => Box::new(CompoundAgent::new(
            player,
            *k,
            ctx.coop()?[player].clone(),
            ctx.defect()?[player].clone(),
        )),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::rpd::{pd_game, PdParams, PdState, RepeatedPd, COOPERATE, DEFECT};
    use crate::game::{run_episode, EpisodeStreams, TerminationRule};
    use crate::policy::FixedActionPolicy;
    use crate::rng::stream;

    fn ctx() -> StrategyContext<RepeatedPd> {
        StrategyContext::new(
            [Arc::new(FixedActionPolicy(COOPERATE)), Arc::new(FixedActionPolicy(COOPERATE))],
            [Arc::new(FixedActionPolicy(DEFECT)), Arc::new(FixedActionPolicy(DEFECT))],
            AmTftConfig::rpd(),
        )
    }

    #[test]
    fn strategy_ids_round_trip() {
        for id in ["allc", "alld", "grim", "grim-strict", "amtft", "dkc:3"] {
            assert_eq!(AgentKind::parse(id).unwrap().id(), id);
        }
        assert!(AgentKind::parse("nope").is_err());
        assert!(AgentKind::parse("dkc:x").is_err());
    }

    #[test]
    fn missing_artifacts_are_reported() {
        let mut c = ctx();
        c.defect = None;
        assert!(matches!(
            make_agent(&AgentKind::Grim, 0, &c),
            Err(Error::MissingArtifact(_))
        ));
        assert!(make_agent(&AgentKind::AllC, 0, &c).is_ok());
    }

    #[test]
    fn grim_triggers_once_and_stays_triggered() {
        let game = pd_game(PdParams::new(2.0));
        let c = ctx();
        let mut grim = GrimAgent::new(
            0,
            c.coop.clone().unwrap(),
            c.defect.clone().unwrap(),
            Compliance::Floor(0.1),
        );
        let mut rng = stream(0, "grim", 0);
        let mut state = PdState::Start;
        for t in 0..12 {
            let a = grim.act(&game, &state, &mut rng);
            let partner = if t == 5 { DEFECT } else { COOPERATE };
            let expected = if t <= 5 { COOPERATE } else { DEFECT };
            assert_eq!(a, expected, "step {t}");
            let joint = JointAction::new(a, partner);
            let next = game.transition(&state, joint, &mut rng).next_state;
            grim.observe_step(&game, &state, joint, &next, &mut rng);
            state = next;
        }
        assert!(grim.triggered());
    }

    #[test]
    fn fully_compliant_partner_never_triggers_grim() {
        let game = pd_game(PdParams::new(2.0));
        let c = ctx();
        let mut grim = make_agent(&AgentKind::Grim, 0, &c).unwrap();
        let mut partner = make_agent(&AgentKind::AllC, 1, &c).unwrap();
        let mut streams = EpisodeStreams::new(3, "grim-ep", 0);
        let traj = run_episode(&game, grim.as_mut(), partner.as_mut(), &TerminationRule::Fixed { length: 50 }, &mut streams).unwrap();
        assert!(traj.steps.iter().all(|s| s.action.a1 == COOPERATE));
    }

    #[test]
    fn compound_zero_is_all_cooperate() {
        let game = pd_game(PdParams::new(2.0));
        let c = ctx();
        let mut dkc = make_agent(&AgentKind::CompoundDkc(0), 0, &c).unwrap();
        let mut partner = make_agent(&AgentKind::AllD, 1, &c).unwrap();
        let mut streams = EpisodeStreams::new(4, "dkc", 0);
        let traj = run_episode(&game, dkc.as_mut(), partner.as_mut(), &TerminationRule::Fixed { length: 20 }, &mut streams).unwrap();
        assert!(traj.steps.iter().all(|s| s.action.a1 == COOPERATE));
    }

    #[test]
    fn compound_k_defects_exactly_k_steps() {
        let game = pd_game(PdParams::new(2.0));
        let c = ctx();
        let mut dkc = make_agent(&AgentKind::CompoundDkc(4), 0, &c).unwrap();
        let mut partner = make_agent(&AgentKind::AllC, 1, &c).unwrap();
        let mut streams = EpisodeStreams::new(5, "dkc", 0);
        let traj = run_episode(&game, dkc.as_mut(), partner.as_mut(), &TerminationRule::Fixed { length: 10 }, &mut streams).unwrap();
        let actions: Vec<usize> = traj.steps.iter().map(|s| s.action.a1).collect();
        assert_eq!(&actions[..4], &[DEFECT; 4]);
        assert!(actions[4..].iter().all(|&a| a == COOPERATE));
    }

    #[test]
    fn reset_restores_fresh_behavior() {
        let game = pd_game(PdParams::new(2.0));
        let c = ctx();
        let rule = TerminationRule::Fixed { length: 15 };
        let mut agent = make_agent(&AgentKind::Grim, 0, &c).unwrap();
        let mut deviator: Box<dyn Agent<RepeatedPd> + Send> = Box::new(DeviationInjector::new(
            make_agent(&AgentKind::AllC, 1, &c).unwrap(),
            4,
            DEFECT,
        ));
        let mut s1 = EpisodeStreams::new(6, "reset", 0);
        let first = run_episode(&game, agent.as_mut(), deviator.as_mut(), &rule, &mut s1).unwrap();
        agent.reset();
        deviator.reset();
        let mut s2 = EpisodeStreams::new(6, "reset", 0);
        let second = run_episode(&game, agent.as_mut(), deviator.as_mut(), &rule, &mut s2).unwrap();
        let acts = |t: &crate::game::Trajectory<PdState>| t.steps.iter().map(|s| s.action).collect::<Vec<_>>();
        assert_eq!(acts(&first), acts(&second));
        // Fresh agents with the same seeds give the same episode.
        let mut fresh_agent = make_agent(&AgentKind::Grim, 0, &c).unwrap();
        let mut fresh_dev: Box<dyn Agent<RepeatedPd> + Send> = Box::new(DeviationInjector::new(
            make_agent(&AgentKind::AllC, 1, &c).unwrap(),
            4,
            DEFECT,
        ));
        let mut s3 = EpisodeStreams::new(6, "reset", 0);
        let third = run_episode(&game, fresh_agent.as_mut(), fresh_dev.as_mut(), &rule, &mut s3).unwrap();
        assert_eq!(acts(&first), acts(&third));
    }
}
