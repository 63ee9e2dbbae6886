//! Policy learning with NFQ and bootstrapping-free NFQ (BSF-NFQ), plus the
//! greedy-policy evaluation harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::env::{self, EnvConfig, State};
use crate::error::{Error, Result};
use crate::model::{DynamicsModel, ModelWorkspace, Normalizer};
use crate::neural::{fit_epochs, Mlp, Samples, Workspace};
use crate::policy::Policy;
use crate::rollout::{value_mb_ws, ValueConfig};
use crate::seeds;
use crate::valuation::{check_divergence, default_value_scale, MeanSe, TransitionTable};

pub use crate::qfunction::{GreedyPolicy, QFunction, Q_LAYERS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "nfq")]
    Nfq,
    #[serde(rename = "bsf-nfq")]
    BsfNfq,
}

impl Algorithm {
    pub const ALL: [Algorithm; 2] = [Algorithm::Nfq, Algorithm::BsfNfq];

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Nfq => "nfq",
            Algorithm::BsfNfq => "bsf-nfq",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nfq" => Ok(Algorithm::Nfq),
            "bsf-nfq" | "bsf_nfq" | "bsfnfq" => Ok(Algorithm::BsfNfq),
            other => Err(Error::InvalidArgument(format!("unknown algorithm '{other}' (expected nfq or bsf-nfq)"))),
        }
    }
}

/// Regression settings of one fitted-Q iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Network initialization seed, reused by every iteration.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { epochs: 300, learning_rate: 0.01, batch_size: 100, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_episodes: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_episodes: 100, max_steps: 1000, seed: 0x5eed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub iterations: usize,
    pub gamma: f64,
    /// Rollout horizon of the BSF-NFQ targets.
    pub horizon: usize,
    pub fit: FitConfig,
    pub eval: EvalConfig,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self { iterations: 100, gamma: 0.99, horizon: 1000, fit: FitConfig::default(), eval: EvalConfig::default() }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("learning needs at least one iteration".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.fit.epochs == 0 || self.fit.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.eval.n_episodes == 0 || self.eval.max_steps == 0 {
            return Err(Error::Config("evaluation needs at least one episode and one step".into()));
        }
        Ok(())
    }
}

/// Shared inputs of every learning iteration.
pub struct LearningProblem {
    pub table: TransitionTable,
    pub state_input: Normalizer,
    pub output_scale: f64,
    design: Samples,
    env: EnvConfig,
}

impl LearningProblem {
    pub fn new(table: TransitionTable, env: EnvConfig, gamma: f64) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::InvalidArgument("dataset must be non-empty".into()));
        }
        let flat: Vec<f64> = table.states.iter().flat_map(|s| s.to_array()).collect();
        let state_input = Normalizer::fit(&flat, 4);
        let output_scale = default_value_scale(gamma);
        let design = QFunction::new(Mlp::zeros(&Q_LAYERS)?, state_input.clone(), output_scale)?
            .design(table.states.iter().copied().zip(table.actions.iter().copied()));
        Ok(Self { table, state_input, output_scale, design, env })
    }

    pub fn from_dataset(d: &crate::data::Dataset, gamma: f64) -> Result<Self> {
        Self::new(TransitionTable::from_dataset(d), d.env_config().clone(), gamma)
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.env
    }

    /// Fresh network from `fit.seed`, regressed on `targets` for a fixed
    /// number of epochs.
    pub fn fit(&self, targets: &[f64], fit: &FitConfig, iteration: usize) -> Result<QFunction> {
        let mut samples = self.design.clone();
        for (dst, t) in samples.targets_mut().iter_mut().zip(targets) {
            *dst = t / self.output_scale;
        }
        let init = Mlp::he_uniform(&Q_LAYERS, fit.seed)?;
        let (net, _) = fit_epochs(
            init,
            &samples,
            fit.epochs,
            fit.learning_rate,
            fit.batch_size,
            seeds::derive(fit.seed, 1 + iteration as u64),
        )?;
        QFunction::new(net, self.state_input.clone(), self.output_scale)
    }
}

/// `r + gamma * max_a Q_prev(s', a)`, with no bootstrap past terminal states.
pub fn nfq_targets(q_prev: &QFunction, table: &TransitionTable, gamma: f64) -> Vec<f64> {
    (0..table.len())
        .into_par_iter()
        .map_init(Workspace::default, |ws, i| {
            let boot = if table.terminal[i] || gamma == 0.0 { 0.0 } else { q_prev.max_value(&table.next_states[i], ws) };
            table.rewards[i] + gamma * boot
        })
        .collect()
}

/// `r + gamma * V_MB(s')` with the greedy policy of `q_prev` rolled out in
/// `m` for `horizon` steps, termination on.
pub fn bsf_targets(
    q_prev: &QFunction,
    table: &TransitionTable,
    m: &DynamicsModel,
    gamma: f64,
    horizon: usize,
    cfg: &EnvConfig,
) -> Vec<f64> {
    let vc = ValueConfig { gamma, horizon, terminate: true };
    (0..table.len())
        .into_par_iter()
        .map_init(
            || (GreedyPolicy::new(q_prev), ModelWorkspace::default()),
            |(pi, ws), i| {
                let boot = if table.terminal[i] || gamma == 0.0 {
                    0.0
                } else {
                    value_mb_ws(m, table.next_states[i], pi, &vc, cfg, ws)
                };
                table.rewards[i] + gamma * boot
            },
        )
        .collect()
}

/// One NFQ step; returns the new Q-function and the mean target.
pub fn nfq_iteration(
    q_prev: &QFunction,
    problem: &LearningProblem,
    gamma: f64,
    fit: &FitConfig,
    iteration: usize,
) -> Result<(QFunction, f64)> {
    let targets = nfq_targets(q_prev, &problem.table, gamma);
    fit_targets(problem, &targets, gamma, fit, iteration)
}

/// One BSF-NFQ step; returns the new Q-function and the mean target.
pub fn bsf_nfq_iteration(
    q_prev: &QFunction,
    problem: &LearningProblem,
    m: &DynamicsModel,
    gamma: f64,
    horizon: usize,
    fit: &FitConfig,
    iteration: usize,
) -> Result<(QFunction, f64)> {
    let targets = bsf_targets(q_prev, &problem.table, m, gamma, horizon, problem.env_config());
    fit_targets(problem, &targets, gamma, fit, iteration)
}

fn fit_targets(
    problem: &LearningProblem,
    targets: &[f64],
    gamma: f64,
    fit: &FitConfig,
    iteration: usize,
) -> Result<(QFunction, f64)> {
    check_divergence(targets, problem.table.divergence_bound(gamma), iteration)?;
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    Ok((problem.fit(targets, fit, iteration)?, mean))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub mean_return: f64,
    pub mean_steps: f64,
    pub survival_fraction: f64,
    pub perfect: bool,
}

/// Runs `n_episodes` seeded true-environment episodes in parallel.
pub fn evaluate_policy<P>(pi: &P, eval: &EvalConfig, gamma: f64, cfg: &EnvConfig) -> Result<PolicyEvaluation>
where
    P: Policy + Clone + Send + Sync,
{
    if eval.n_episodes == 0 {
        return Err(Error::InvalidArgument("n_episodes must be >= 1".into()));
    }
    let results: Vec<env::EpisodeResult> = (0..eval.n_episodes as u64)
        .into_par_iter()
        .map(|i| env::run_episode(&mut pi.clone(), seeds::derive(eval.seed, i), eval.max_steps, gamma, cfg))
        .collect();
    let n = results.len() as f64;
    let survived = results.iter().filter(|r| r.reached_max_steps).count();
    Ok(PolicyEvaluation {
        mean_return: results.iter().map(|r| r.discounted_return).sum::<f64>() / n,
        mean_steps: results.iter().map(|r| r.steps as f64).sum::<f64>() / n,
        survival_fraction: survived as f64 / n,
        perfect: survived == results.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_target: f64,
    pub mean_return: f64,
    pub mean_steps: f64,
    pub survival_fraction: f64,
    pub perfect: bool,
}

#[derive(Clone, Debug)]
pub struct LearningRun {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    /// Q-function after every iteration, aligned with `records`.
    pub q_functions: Vec<QFunction>,
}

impl LearningRun {
    pub fn perfect_count(&self) -> usize {
        self.records.iter().filter(|r| r.perfect).count()
    }

    /// Fraction of iterations whose greedy policy was perfect.
    pub fn optimal_ratio(&self) -> f64 {
        self.perfect_count() as f64 / self.records.len().max(1) as f64
    }

    pub fn q_file_name(iteration: usize) -> String {
        format!("q_{iteration:04}.json")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "iteration",
            "mean_target",
            "mean_return",
            "mean_steps",
            "survival_fraction",
            "perfect",
            "q_checkpoint",
        ])?;
        for r in &self.records {
            out.write_record([
                r.iteration.to_string(),
                r.mean_target.to_string(),
                r.mean_return.to_string(),
                r.mean_steps.to_string(),
                r.survival_fraction.to_string(),
                u8::from(r.perfect).to_string(),
                Self::q_file_name(r.iteration),
            ])?;
        }
        out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// Runs NFQ or BSF-NFQ from `Q_0 = 0`, evaluating the greedy policy after
/// every iteration. `model` is required for BSF-NFQ and ignored by NFQ.
pub fn learn(
    problem: &LearningProblem,
    algorithm: Algorithm,
    model: Option<&DynamicsModel>,
    cfg: &LearnConfig,
    seed: u64,
) -> Result<LearningRun> {
    learn_with(problem, algorithm, model, cfg, seed, |_| {})
}

/// [`learn`] with a callback after each iteration.
pub fn learn_with(
    problem: &LearningProblem,
    algorithm: Algorithm,
    model: Option<&DynamicsModel>,
    cfg: &LearnConfig,
    seed: u64,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<LearningRun> {
    cfg.validate()?;
    let model = match (algorithm, model) {
        (Algorithm::BsfNfq, None) => {
            return Err(Error::InvalidArgument("BSF-NFQ needs a dynamics model".into()));
        }
        (_, m) => m,
    };
    let fit = FitConfig { seed: seeds::derive(seed, 0), ..cfg.fit.clone() };
    let mut q = QFunction::new(Mlp::zeros(&Q_LAYERS)?, problem.state_input.clone(), problem.output_scale)?;
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut q_functions = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (next, mean_target) = match algorithm {
            Algorithm::Nfq => nfq_iteration(&q, problem, cfg.gamma, &fit, it)?,
            Algorithm::BsfNfq => {
                let m = model.expect("checked above");
                bsf_nfq_iteration(&q, problem, m, cfg.gamma, cfg.horizon, &fit, it)?
            }
        };
        q = next;
        let ev = evaluate_policy(&GreedyPolicy::new(&q), &cfg.eval, cfg.gamma, problem.env_config())?;
        let record = IterationRecord {
            iteration: it + 1,
            mean_target,
            mean_return: ev.mean_return,
            mean_steps: ev.mean_steps,
            survival_fraction: ev.survival_fraction,
            perfect: ev.perfect,
        };
        on_iteration(&record);
        records.push(record);
        q_functions.push(q.clone());
    }
    Ok(LearningRun { algorithm, seed, records, q_functions })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedLearning {
    pub seed: u64,
    pub perfect_policies: usize,
    pub optimal_ratio: f64,
    pub best_mean_return: f64,
}

/// Per-algorithm aggregate over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningSummary {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub n_seeds: usize,
    pub optimal_ratio: MeanSe,
    pub per_seed: Vec<SeedLearning>,
}

impl LearningSummary {
    pub fn of(runs: &[LearningRun]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::InvalidArgument("no learning runs".into()))?;
        if runs.iter().any(|r| r.algorithm != first.algorithm || r.records.len() != first.records.len()) {
            return Err(Error::InvalidArgument("runs differ in algorithm or iteration count".into()));
        }
        let per_seed: Vec<SeedLearning> = runs
            .iter()
            .map(|r| SeedLearning {
                seed: r.seed,
                perfect_policies: r.perfect_count(),
                optimal_ratio: r.optimal_ratio(),
                best_mean_return: r.records.iter().map(|x| x.mean_return).fold(f64::NEG_INFINITY, f64::max),
            })
            .collect();
        let ratios: Vec<f64> = per_seed.iter().map(|s| s.optimal_ratio).collect();
        Ok(Self {
            algorithm: first.algorithm,
            iterations: first.records.len(),
            n_seeds: runs.len(),
            optimal_ratio: MeanSe::of(&ratios),
            per_seed,
        })
    }
}

/// Greedy action of `q` at each state; handy for invariance checks.
pub fn greedy_actions(q: &QFunction, states: &[State]) -> Vec<crate::env::Action> {
    let mut pi = GreedyPolicy::new(q);
    states.iter().map(|s| pi.act(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;
    use crate::env::Action;
    use crate::policy::{ConstantPolicy, LinearController, UniformRandomPolicy};

    fn small_problem(gamma: f64) -> LearningProblem {
        let d = generate_dataset(500, 3, &EnvConfig::default()).unwrap();
        LearningProblem::from_dataset(&d, gamma).unwrap()
    }

    fn constant_q(problem: &LearningProblem, c: f64) -> QFunction {
        let mut net = Mlp::zeros(&Q_LAYERS).unwrap();
        let n = net.num_params();
        net.params_mut()[n - 1] = c / problem.output_scale;
        QFunction::new(net, problem.state_input.clone(), problem.output_scale).unwrap()
    }

    #[test]
    fn algorithm_names() {
        for a in Algorithm::ALL {
            assert_eq!(a.label().parse::<Algorithm>().unwrap(), a);
        }
        assert!("dqn".parse::<Algorithm>().is_err());
    }

    #[test]
    fn zero_q_targets_are_rewards() {
        let p = small_problem(0.99);
        let q0 = QFunction::zeros();
        assert_eq!(nfq_targets(&q0, &p.table, 0.99), p.table.rewards);
    }

    #[test]
    fn constant_q_shifts_targets() {
        let p = small_problem(0.9);
        let c = 7.5;
        let q = constant_q(&p, c);
        for (i, t) in nfq_targets(&q, &p.table, 0.9).iter().enumerate() {
            let boot = if p.table.terminal[i] { 0.0 } else { 0.9 * c };
            assert!((t - (p.table.rewards[i] + boot)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_model_bsf_targets_are_rewards() {
        let p = small_problem(0.99);
        let q = constant_q(&p, 3.0);
        let t = bsf_targets(&q, &p.table, &DynamicsModel::zeros(), 0.99, 50, p.env_config());
        assert_eq!(t, p.table.rewards);
    }

    #[test]
    fn nfq_and_bsf_coincide_without_discount() {
        let p = small_problem(0.0);
        let q = constant_q(&p, 2.0);
        let m = DynamicsModel::zeros();
        let fit = FitConfig { epochs: 3, ..Default::default() };
        let (a, ta) = nfq_iteration(&q, &p, 0.0, &fit, 0).unwrap();
        let (b, tb) = bsf_nfq_iteration(&q, &p, &m, 0.0, 100, &fit, 0).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
    }

    #[test]
    fn evaluation_of_random_policy_never_survives() {
        let eval = EvalConfig { n_episodes: 50, max_steps: 5000, seed: 1 };
        let ev = evaluate_policy(&UniformRandomPolicy::new(3), &eval, 0.99, &EnvConfig::default()).unwrap();
        assert_eq!(ev.survival_fraction, 0.0);
        assert!(!ev.perfect);
        assert!(ev.mean_steps < 60.0);
    }

    #[test]
    fn single_episode_and_perfect_flag() {
        let cfg = EnvConfig::default();
        let eval = EvalConfig { n_episodes: 1, max_steps: 300, seed: 9 };
        let ev = evaluate_policy(&LinearController::BALANCING, &eval, 0.99, &cfg).unwrap();
        let ep = env::run_episode(&mut { LinearController::BALANCING }, seeds::derive(9, 0), 300, 0.99, &cfg);
        assert_eq!(ev.mean_return, ep.discounted_return);
        assert!(ev.perfect);
        assert_eq!(ev.survival_fraction, 1.0);
        let ev = evaluate_policy(&ConstantPolicy(Action::Left), &eval, 0.99, &cfg).unwrap();
        assert!(!ev.perfect && ev.survival_fraction == 0.0);
    }

    #[test]
    fn run_records_match_iterations() {
        let p = small_problem(0.9);
        let cfg = LearnConfig {
            iterations: 3,
            gamma: 0.9,
            fit: FitConfig { epochs: 2, ..Default::default() },
            eval: EvalConfig { n_episodes: 5, max_steps: 50, seed: 1 },
            ..Default::default()
        };
        let run = learn(&p, Algorithm::Nfq, None, &cfg, 4).unwrap();
        assert_eq!(run.records.len(), 3);
        assert_eq!(run.q_functions.len(), 3);
        assert!(run.records.iter().all(|r| !r.perfect || r.survival_fraction == 1.0));
        assert!(learn(&p, Algorithm::BsfNfq, None, &cfg, 4).is_err());
        let again = learn(&p, Algorithm::Nfq, None, &cfg, 4).unwrap();
        assert_eq!(run.records, again.records);
    }

    #[test]
    fn one_iteration_without_discount_is_reward_regression() {
        let p = small_problem(0.0);
        let fit = FitConfig { epochs: 5, ..Default::default() };
        let (q, mean) = nfq_iteration(&QFunction::zeros(), &p, 0.0, &fit, 0).unwrap();
        assert_eq!(mean, p.table.rewards.iter().sum::<f64>() / p.table.len() as f64);
        assert_eq!(q, p.fit(&p.table.rewards, &fit, 0).unwrap());
    }

    #[test]
    fn summary_counts_perfect_iterations() {
        let rec = |i, perfect| IterationRecord {
            iteration: i,
            mean_target: 0.0,
            mean_return: i as f64,
            mean_steps: 0.0,
            survival_fraction: if perfect { 1.0 } else { 0.0 },
            perfect,
        };
        let run = |seed, flags: &[bool]| LearningRun {
            algorithm: Algorithm::Nfq,
            seed,
            records: flags.iter().enumerate().map(|(i, &f)| rec(i + 1, f)).collect(),
            q_functions: vec![],
        };
        let s = LearningSummary::of(&[run(0, &[true, false, false, false]), run(1, &[true, true, false, false])]).unwrap();
        assert_eq!(s.optimal_ratio.mean, 0.375);
        assert_eq!(s.per_seed[1].perfect_policies, 2);
        assert!(LearningSummary::of(&[run(0, &[true]), run(1, &[true, false])]).is_err());
    }

    #[test]
    fn divergence_aborts_learning() {
        let p = small_problem(0.99);
        let q = constant_q(&p, 1e7);
        let err = nfq_iteration(&q, &p, 0.99, &FitConfig::default(), 3).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration: 3, .. }));
    }
}
