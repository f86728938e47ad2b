use std::sync::Arc;
use amtft_core::envs::coins::{coins_game, CoinsParams};
use amtft_core::eval::{play_match, MatchSpec};
use amtft_core::nn::{ConvSpec, Model, PolicyArtifact};
use amtft_core::policy::{PolicyAgent, PolicyRef};
use amtft_core::training::{train_pair, RewardSchedule, TrainingConfig};
use amtft_core::game::Agent;

fn policy_factory(arts: &[PolicyArtifact; 2]) -> impl Fn(usize) -> amtft_core::Result<Box<dyn Agent<amtft_core::envs::coins::CoinsGame> + Send>> + Sync + '_ {
    move |p: usize| {
        let policy: PolicyRef<_> = Arc::new(arts[p].clone());
        Ok(Box::new(PolicyAgent::sampling(p, policy)))
    }
}

#[test]
fn probe_symmetry() {
    for (games, batch, lr, q) in [
        (6400usize, 32usize, 0.004f64, 0.1f64),
        (9600, 32, 0.004, 0.1),
        (6400, 32, 0.004, 0.2),
        (9600, 16, 0.002, 0.2),
    ] {
        let game = coins_game(CoinsParams { spawn_prob: q, ..CoinsParams::with_board(3) });
        let models = || [
            Model::Conv(ConvSpec::for_coins(3, true)),
            Model::Conv(ConvSpec::for_coins(3, true)),
        ];
        let mut cfg = TrainingConfig::coins_desk(RewardSchedule::Selfish, 4242);
        cfg.total_games = games;
        cfg.batch_size = batch;
        cfg.learning_rate = lr;
        let t0 = std::time::Instant::now();
        let defect = train_pair(&game, models(), &cfg).unwrap();
        let mut coop_cfg = TrainingConfig::coins_desk(RewardSchedule::Cooperative, 4242);
        coop_cfg.total_games = 3200;
        let coop = train_pair(&game, models(), &coop_cfg).unwrap();
        let spec = MatchSpec { length: 200, replicates: 48, seed: 99 };
        let fc = policy_factory(&coop.artifacts);
        let fd = policy_factory(&defect.artifacts);
        let dd = play_match(&game, "dd", &fd, &fd, &spec).unwrap();
        let cd = play_match(&game, "cd", &fc, &fd, &spec).unwrap();
        let dc = play_match(&game, "dc", &fd, &fc, &spec).unwrap();
        let cc = play_match(&game, "cc", &fc, &fc, &spec).unwrap();
        eprintln!(
            "games={games} batch={batch} lr={lr} q={q} ({:?}):\n  dd=({:.1},{:.1}) cc=({:.1},{:.1}) cd=({:.1},{:.1}) dc=({:.1},{:.1})\n  IncentC(allc)={:.2} IncentC(alld)={:.2}",
            t0.elapsed(),
            dd.mean[0], dd.mean[1], cc.mean[0], cc.mean[1], cd.mean[0], cd.mean[1], dc.mean[0], dc.mean[1],
            cd.mean[1] - cc.mean[1],   // S2(C,D) vs S2(C,C): want cd >> cc => IncentC(allc)=cc-cd < 0
            dc.mean[1] - dd.mean[1],
        );
    }
}
