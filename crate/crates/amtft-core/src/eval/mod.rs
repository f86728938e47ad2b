//! Tournament harness, strategy metrics, retraining experiment, and the
//! exact tabular oracles.

pub mod exact;
pub mod retrain;
pub mod theorem;

pub use exact::{exact_debit_tables, exact_q, policy_table, ExactSolution};
pub use retrain::{retrain_learner, RetrainOutput, RetrainPoint};
pub use theorem::{best_response_oracle, check_theorem, BrClassification, OracleParams, TheoremReport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{run_episode, Agent, EpisodeStreams, Game, TerminationRule};
use crate::strategies::{make_agent, AgentKind, StrategyContext};

/// Mean payoffs of one strategy pairing over fixed-length replicates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatchResult {
    pub strategies: (String, String),
    pub replicates: usize,
    pub episode_length: usize,
    /// Mean undiscounted total per player.
    pub mean: [f64; 2],
    /// Standard error of the mean per player.
    pub se: [f64; 2],
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MatchSpec {
    pub length: usize,
    pub replicates: usize,
    pub seed: u64,
}

type AgentFactory<'a, G> = &'a (dyn Fn(usize) -> Result<Box<dyn Agent<G> + Send>> + Sync);

/// Play `replicates` independent fixed-length episodes between fresh
/// agents built by the factories. Replicates run in parallel on derived
/// per-replicate streams and reduce in index order, so the result is
/// independent of scheduling.
pub fn play_match<G: Game + 'static>(
    game: &G,
    label: &str,
    factory1: AgentFactory<'_, G>,
    factory2: AgentFactory<'_, G>,
    spec: &MatchSpec,
) -> Result<MatchResult> {
    if spec.replicates == 0 {
        return Err(Error::Config("match needs at least one replicate".into()));
    }
    let totals: Vec<[f64; 2]> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let mut a1 = factory1(0)?;
            let mut a2 = factory2(1)?;
            let mut streams = EpisodeStreams::new(spec.seed, label, r as u64);
            let rule = TerminationRule::Fixed { length: spec.length };
            let traj = run_episode(game, a1.as_mut(), a2.as_mut(), &rule, &mut streams)?;
            Ok([traj.total_reward(0), traj.total_reward(1)])
        })
        .collect::<Result<_>>()?;
    let n = totals.len() as f64;
    let mut mean = [0.0; 2];
    let mut se = [0.0; 2];
    for p in 0..2 {
        mean[p] = totals.iter().map(|t| t[p]).sum::<f64>() / n;
        if totals.len() > 1 {
            let var = totals.iter().map(|t| (t[p] - mean[p]).powi(2)).sum::<f64>() / (n - 1.0);
            se[p] = (var / n).sqrt();
        }
    }
    Ok(MatchResult {
        strategies: (String::new(), String::new()),
        replicates: spec.replicates,
        episode_length: spec.length,
        mean,
        se,
    })
}

/// Pairwise payoff matrix with the derived Safety / SelfMatch / IncentC
/// columns. The metric definitions reference the pure cooperator and
/// defector, so the roster must contain "allc" and "alld".
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsTable {
    pub strategies: Vec<String>,
    /// matrix[row][col]: row plays seat 1, col plays seat 2.
    pub matrix: Vec<Vec<MatchResult>>,
    pub safety: Vec<f64>,
    pub self_match: Vec<f64>,
    pub incent_c: Vec<f64>,
    pub seed: u64,
}

impl MetricsTable {
    pub fn strategy_index(&self, id: &str) -> Option<usize> {
        self.strategies.iter().position(|s| s == id)
    }

    pub fn safety_of(&self, id: &str) -> Option<f64> {
        self.strategy_index(id).map(|i| self.safety[i])
    }

    pub fn self_match_of(&self, id: &str) -> Option<f64> {
        self.strategy_index(id).map(|i| self.self_match[i])
    }

    pub fn incent_c_of(&self, id: &str) -> Option<f64> {
        self.strategy_index(id).map(|i| self.incent_c[i])
    }

    /// Recompute the metric columns from the stored matrix.
    pub fn metrics_from_matrix(strategies: &[String], matrix: &[Vec<MatchResult>]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let c = strategies
            .iter()
            .position(|s| s == "allc")
            .ok_or_else(|| Error::Config("roster must include 'allc' for metrics".into()))?;
        let d = strategies
            .iter()
            .position(|s| s == "alld")
            .ok_or_else(|| Error::Config("roster must include 'alld' for metrics".into()))?;
        let n = strategies.len();
        let mut safety = Vec::with_capacity(n);
        let mut self_match = Vec::with_capacity(n);
        let mut incent_c = Vec::with_capacity(n);
        for x in 0..n {
            safety.push(matrix[x][d].mean[0] - matrix[d][d].mean[0]);
            self_match.push(matrix[x][x].mean[0]);
            incent_c.push(matrix[x][c].mean[1] - matrix[x][d].mean[1]);
        }
        Ok((safety, self_match, incent_c))
    }

    /// Metrics CSV: strategy, self_match, safety, incent_c.
    pub fn metrics_csv(&self) -> String {
        let mut out = format!("# seed={}\nstrategy,self_match,safety,incent_c\n", self.seed);
        for (i, s) in self.strategies.iter().enumerate() {
            out.push_str(&format!("{s},{},{},{}\n", self.self_match[i], self.safety[i], self.incent_c[i]));
        }
        out
    }

    /// Full matrix CSV: one row per ordered strategy pair.
    pub fn matrix_csv(&self) -> String {
        let mut out = format!("# seed={}\nrow,col,mean_row,mean_col,se_row,se_col,replicates\n", self.seed);
        for (i, row) in self.strategies.iter().enumerate() {
            for (j, col) in self.strategies.iter().enumerate() {
                let m = &self.matrix[i][j];
                out.push_str(&format!(
                    "{row},{col},{},{},{},{},{}\n",
                    m.mean[0], m.mean[1], m.se[0], m.se[1], m.replicates
                ));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TournamentConfig {
    pub length: usize,
    pub replicates: usize,
    pub seed: u64,
}

/// Full pairwise tournament (both orderings) plus derived metrics.
pub fn tournament<G: Game + 'static>(
    game: &G,
    roster: &[AgentKind],
    ctx: &StrategyContext<G>,
    cfg: &TournamentConfig,
) -> Result<MetricsTable> {
    if roster.is_empty() {
        return Err(Error::Config("empty tournament roster".into()));
    }
    let strategies: Vec<String> = roster.iter().map(|k| k.id()).collect();
    let mut matrix = Vec::with_capacity(roster.len());
    for (i, row_kind) in roster.iter().enumerate() {
        let mut row = Vec::with_capacity(roster.len());
        for (j, col_kind) in roster.iter().enumerate() {
            let label = format!("match-{}-{}", strategies[i], strategies[j]);
            let f1 = |player: usize| make_agent(row_kind, player, ctx);
            let f2 = |player: usize| make_agent(col_kind, player, ctx);
            let spec = MatchSpec {
                length: cfg.length,
                replicates: cfg.replicates,
                seed: cfg.seed,
            };
            let mut result = play_match(game, &label, &f1, &f2, &spec)?;
            result.strategies = (strategies[i].clone(), strategies[j].clone());
            row.push(result);
        }
        matrix.push(row);
    }
    let (safety, self_match, incent_c) = MetricsTable::metrics_from_matrix(&strategies, &matrix)?;
    Ok(MetricsTable {
        strategies,
        matrix,
        safety,
        self_match,
        incent_c,
        seed: cfg.seed,
    })
}
