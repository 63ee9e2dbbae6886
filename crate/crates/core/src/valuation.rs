//! Policy evaluation: fitted Q evaluation (FQE), the fitted model-based
//! value network, true returns, and RMSE / correlation reports.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::data::{split_indices, Dataset};
use crate::env::{self, Action, EnvConfig, State};
use crate::error::{Error, Result};
use crate::model::{DynamicsModel, Normalizer};
use crate::neural::{self, fit_epochs, Mlp, TrainConfig, Workspace};
use crate::policy::{LinearController, Policy};
use crate::rollout::{value_mb_batch, ValueConfig};
use crate::seeds;

pub use crate::qfunction::{GreedyPolicy, QFunction, Q_LAYERS};

/// Dataset columns in the layout the fitted-Q loops need.
#[derive(Clone, Debug)]
pub struct TransitionTable {
    pub states: Vec<State>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<State>,
    /// `s_next` violates the environment limits: no bootstrap beyond it.
    pub terminal: Vec<bool>,
}

impl TransitionTable {
    pub fn from_dataset(d: &Dataset) -> Self {
        let cfg = d.env_config();
        Self {
            states: d.tuples.iter().map(|t| t.s).collect(),
            actions: d.tuples.iter().map(|t| t.a).collect(),
            rewards: d.tuples.iter().map(|t| t.r).collect(),
            next_states: d.tuples.iter().map(|t| t.s_next).collect(),
            terminal: d.tuples.iter().map(|t| env::is_terminal(&t.s_next, cfg)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Abort threshold on the mean absolute regression target.
    pub fn divergence_bound(&self, gamma: f64) -> f64 {
        if gamma < 1.0 {
            10.0 * self.max_abs_reward().max(1e-12) / (1.0 - gamma)
        } else {
            f64::INFINITY
        }
    }
}

pub(crate) fn check_divergence(targets: &[f64], bound: f64, iteration: usize) -> Result<()> {
    let mean_abs = targets.iter().map(|t| t.abs()).sum::<f64>() / targets.len().max(1) as f64;
    if !mean_abs.is_finite() || mean_abs > bound {
        return Err(Error::Divergence { iteration, mean_abs_target: mean_abs, bound });
    }
    Ok(())
}

/// Output scale of Q networks trained on discounted returns.
pub fn default_value_scale(gamma: f64) -> f64 {
    if gamma < 1.0 {
        (1.0 / (1.0 - gamma)).max(1.0)
    } else {
        100.0
    }
}

fn state_normalizer(states: &[State]) -> Normalizer {
    let flat: Vec<f64> = states.iter().flat_map(|s| s.to_array()).collect();
    Normalizer::fit(&flat, 4)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FqeConfig {
    pub iterations: usize,
    pub epochs_per_iteration: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FqeConfig {
    fn default() -> Self {
        Self { iterations: 200, epochs_per_iteration: 2, learning_rate: 0.01, batch_size: 100, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct FqeResult {
    pub q: QFunction,
    /// Mean regression target of every iteration.
    pub mean_targets: Vec<f64>,
}

/// Fitted Q evaluation of `pi`:
/// `Q_{i+1}(s, a) <- r + gamma * Q_i(s', pi(s'))`, starting from `Q_0 = 0`.
///
/// One network is warm-started across iterations, each iteration with a
/// fresh Adam state; targets use the frozen previous iterate.
pub fn fqe<P>(d: &Dataset, pi: &P, gamma: f64, cfg: &FqeConfig) -> Result<FqeResult>
where
    P: Policy + Clone + Send + Sync,
{
    fqe_table(&TransitionTable::from_dataset(d), pi, gamma, cfg)
}

pub fn fqe_table<P>(table: &TransitionTable, pi: &P, gamma: f64, cfg: &FqeConfig) -> Result<FqeResult>
where
    P: Policy + Clone + Send + Sync,
{
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument("FQE needs at least one iteration".into()));
    }
    if table.is_empty() {
        return Err(Error::InvalidArgument("empty transition table".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let next_actions: Vec<Action> = table
        .next_states
        .par_iter()
        .map_init(|| pi.clone(), |p, s| p.act(s))
        .collect();
    let init = Mlp::he_uniform(&Q_LAYERS, seeds::derive(cfg.seed, 0))?;
    let mut q = QFunction::new(init, state_normalizer(&table.states), default_value_scale(gamma))?;
    let mut samples = q.design(table.states.iter().copied().zip(table.actions.iter().copied()));
    let bound = table.divergence_bound(gamma);
    let mut mean_targets = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let targets: Vec<f64> = if it == 0 {
            table.rewards.clone()
        } else {
            (0..table.len())
                .into_par_iter()
                .map_init(Workspace::default, |ws, i| {
                    let boot = if table.terminal[i] || gamma == 0.0 {
                        0.0
                    } else {
                        q.value_ws(&table.next_states[i], next_actions[i], ws)
                    };
                    table.rewards[i] + gamma * boot
                })
                .collect()
        };
        check_divergence(&targets, bound, it)?;
        mean_targets.push(targets.iter().sum::<f64>() / targets.len() as f64);
        for (dst, t) in samples.targets_mut().iter_mut().zip(&targets) {
            *dst = q.to_net_target(*t);
        }
        let (net, _) = fit_epochs(
            q.net.clone(),
            &samples,
            cfg.epochs_per_iteration,
            cfg.learning_rate,
            cfg.batch_size,
            seeds::derive(cfg.seed, 1 + it as u64),
        )?;
        q.net = net;
    }
    Ok(FqeResult { q, mean_targets })
}

/// Model-free state value `Q(s, pi(s))`.
pub fn value_mf<P: Policy + ?Sized>(q: &QFunction, s: &State, pi: &mut P) -> f64 {
    let a = pi.act(s);
    q.value(s, a)
}

/// Discounted return of `pi` on the true environment started exactly at `s0`.
pub fn true_return<P: Policy + ?Sized>(pi: &mut P, s0: State, gamma: f64, max_steps: usize, cfg: &EnvConfig) -> f64 {
    env::run_from(pi, s0, max_steps, gamma, cfg).discounted_return
}

/// Regresses a Q-shaped network on `(s, pi(s)) -> target`, with a seeded
/// 70:30 split for early stopping.
pub fn fit_mbro<P: Policy + ?Sized>(targets: &[(State, f64)], pi: &mut P, cfg: &TrainConfig) -> Result<QFunction> {
    if targets.len() < 2 {
        return Err(Error::InvalidArgument("fitted value network needs at least two targets".into()));
    }
    let states: Vec<State> = targets.iter().map(|(s, _)| *s).collect();
    let values: Vec<f64> = targets.iter().map(|(_, v)| *v).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64).sqrt();
    // Degenerate (constant) targets: shrink the network's contribution to noise level.
    let scale = if std > 1e-12 * mean.abs().max(1.0) { std } else { 1e-8 * mean.abs().max(1.0) };
    let init = Mlp::he_uniform(&Q_LAYERS, seeds::derive(cfg.seed, 0))?;
    let mut q = QFunction::new(init, state_normalizer(&states), scale)?.with_offset(mean);
    let mut samples = q.design(states.iter().map(|s| (*s, pi.act(s))));
    for (dst, v) in samples.targets_mut().iter_mut().zip(&values) {
        *dst = q.to_net_target(*v);
    }
    let split = split_indices(samples.len(), 0.7, seeds::derive(cfg.seed, 1))?;
    let result = neural::train(q.net.clone(), &samples.subset(&split.train), &samples.subset(&split.validation), cfg)?;
    q.net = result.best_params;
    Ok(q)
}

pub fn rmse(estimate: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(estimate.len(), truth.len());
    let n = estimate.len().max(1) as f64;
    (estimate.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum::<f64>() / n).sqrt()
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Sample mean with its standard error (`None` for fewer than two values).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub stderr: Option<f64>,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = (values.len() >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        });
        Self { mean, stderr }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Mbro,
    Fqe,
    FittedMbro,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub rmse: f64,
    pub correlation: Option<f64>,
}

impl EstimatorMetrics {
    pub fn of(estimate: &[f64], truth: &[f64]) -> Self {
        Self { rmse: rmse(estimate, truth), correlation: pearson(estimate, truth) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueRow {
    pub seed: u64,
    pub index: usize,
    pub start: State,
    pub true_return: f64,
    pub v_mb: f64,
    pub v_mf: f64,
    pub v_fitted_mbro: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub mbro: EstimatorMetrics,
    pub fqe: EstimatorMetrics,
    pub fitted_mbro: EstimatorMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub rmse: MeanSe,
    /// `None` if any seed had an undefined correlation.
    pub correlation: Option<MeanSe>,
}

impl EstimatorSummary {
    fn of(metrics: &[EstimatorMetrics]) -> Self {
        let rmses: Vec<f64> = metrics.iter().map(|m| m.rmse).collect();
        let corrs: Option<Vec<f64>> = metrics.iter().map(|m| m.correlation).collect();
        Self { rmse: MeanSe::of(&rmses), correlation: corrs.map(|c| MeanSe::of(&c)) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueSummary {
    pub n_seeds: usize,
    pub n_states: usize,
    pub mbro: EstimatorSummary,
    pub fqe: EstimatorSummary,
    pub fitted_mbro: EstimatorSummary,
    pub per_seed: Vec<SeedMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueReport {
    pub rows: Vec<ValueRow>,
    pub summary: ValueSummary,
}

impl ValueReport {
    pub fn from_rows(rows: Vec<ValueRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("no value rows".into()));
        }
        let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        seeds.dedup();
        let mut per_seed = Vec::new();
        let mut n_states = None;
        for &seed in &seeds {
            let rs: Vec<&ValueRow> = rows.iter().filter(|r| r.seed == seed).collect();
            match n_states {
                None => n_states = Some(rs.len()),
                Some(n) if n != rs.len() => {
                    return Err(Error::InvalidArgument("seeds cover different numbers of start states".into()))
                }
                _ => {}
            }
            let truth: Vec<f64> = rs.iter().map(|r| r.true_return).collect();
            let col = |f: fn(&ValueRow) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            per_seed.push(SeedMetrics {
                seed,
                mbro: EstimatorMetrics::of(&col(|r| r.v_mb), &truth),
                fqe: EstimatorMetrics::of(&col(|r| r.v_mf), &truth),
                fitted_mbro: EstimatorMetrics::of(&col(|r| r.v_fitted_mbro), &truth),
            });
        }
        let pick = |f: fn(&SeedMetrics) -> EstimatorMetrics| per_seed.iter().map(f).collect::<Vec<_>>();
        let summary = ValueSummary {
            n_seeds: seeds.len(),
            n_states: n_states.unwrap_or(0),
            mbro: EstimatorSummary::of(&pick(|m| m.mbro)),
            fqe: EstimatorSummary::of(&pick(|m| m.fqe)),
            fitted_mbro: EstimatorSummary::of(&pick(|m| m.fitted_mbro)),
            per_seed,
        };
        Ok(Self { rows, summary })
    }

    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "seed", "index", "x", "xdot", "theta", "thetadot", "true_return", "v_mbro", "v_fqe", "v_fitted_mbro",
        ])?;
        for r in &self.rows {
            let mut row = vec![r.seed.to_string(), r.index.to_string()];
            row.extend(r.start.to_array().iter().map(f64::to_string));
            row.extend([r.true_return, r.v_mb, r.v_mf, r.v_fitted_mbro].iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Estimate-minus-truth differences, one row per state and estimator.
    pub fn write_errors_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["seed", "index", "estimator", "estimate", "error"])?;
        for r in &self.rows {
            for (name, v) in [("mbro", r.v_mb), ("fqe", r.v_mf), ("fitted_mbro", r.v_fitted_mbro)] {
                out.write_record([
                    r.seed.to_string(),
                    r.index.to_string(),
                    name.to_string(),
                    v.to_string(),
                    (v - r.true_return).to_string(),
                ])?;
            }
        }
        out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// The learned artifacts of one seed.
pub struct Estimators<'a> {
    pub seed: u64,
    pub model: &'a DynamicsModel,
    pub q: &'a QFunction,
    pub fitted: &'a QFunction,
}

/// Computes the true return and the three estimates for every start state
/// and every seed, then aggregates RMSE and correlation per seed.
pub fn evaluate_estimators<P>(
    starts: &[State],
    pi: &P,
    sets: &[Estimators<'_>],
    vc: &ValueConfig,
    true_max_steps: usize,
    cfg: &EnvConfig,
) -> Result<ValueReport>
where
    P: Policy + Clone + Send + Sync,
{
    if starts.is_empty() || sets.is_empty() {
        return Err(Error::InvalidArgument("need start states and at least one estimator set".into()));
    }
    let truth: Vec<f64> = starts
        .par_iter()
        .map(|s| true_return(&mut pi.clone(), *s, vc.gamma, true_max_steps, cfg))
        .collect();
    let mut rows = Vec::with_capacity(starts.len() * sets.len());
    for set in sets {
        let mb = value_mb_batch(set.model, starts, pi, vc, cfg);
        for (i, s) in starts.iter().enumerate() {
            let mut p = pi.clone();
            rows.push(ValueRow {
                seed: set.seed,
                index: i,
                start: *s,
                true_return: truth[i],
                v_mb: mb[i],
                v_mf: value_mf(set.q, s, &mut p),
                v_fitted_mbro: value_mf(set.fitted, s, &mut p),
            });
        }
    }
    ValueReport::from_rows(rows)
}

/// Where evaluation start states come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartStates {
    /// Uniform sample of `s_t` over all dataset tuples.
    DatasetStates,
    /// First state of dataset episodes.
    EpisodeStarts,
    /// Fresh environment resets.
    Resets,
}

pub fn sample_start_states(d: &Dataset, source: StartStates, n: usize, seed: u64) -> Vec<State> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<usize> = match source {
        StartStates::DatasetStates => (0..d.len()).collect(),
        StartStates::EpisodeStarts => d.episode_starts(),
        StartStates::Resets => {
            return (0..n as u64).map(|i| env::reset(seeds::derive(seed, i), d.env_config())).collect()
        }
    };
    let mut picked: Vec<usize> = pool.choose_multiple(&mut rng, n.min(pool.len())).copied().collect();
    picked.sort_unstable();
    picked.into_iter().map(|i| d.tuples[i].s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValueStudyConfig {
    pub policy: LinearController,
    pub n_start_states: usize,
    pub start_states: StartStates,
    pub start_seed: u64,
    pub value: ValueConfig,
    pub true_max_steps: usize,
    pub fqe: FqeConfig,
    pub fitted: TrainConfig,
    pub n_fit_states: usize,
}

impl Default for ValueStudyConfig {
    fn default() -> Self {
        Self {
            policy: LinearController::BALANCING,
            n_start_states: 1000,
            start_states: StartStates::DatasetStates,
            start_seed: 12345,
            value: ValueConfig::default(),
            true_max_steps: 5000,
            fqe: FqeConfig::default(),
            fitted: TrainConfig { checkpoint_epochs: vec![], max_epochs: 1000, ..TrainConfig::default() },
            n_fit_states: 2000,
        }
    }
}

/// Per-seed artifacts of a value study.
pub struct SeedArtifacts {
    pub seed: u64,
    pub fqe: FqeResult,
    pub fitted: QFunction,
}

/// For every `(seed, model)` pair, trains an FQE Q-function and a fitted
/// model-based value network, then evaluates MBRO, FQE and fitted MBRO on a
/// common set of start states.
pub fn value_study(
    d: &Dataset,
    cfg: &ValueStudyConfig,
    models: &[(u64, &DynamicsModel)],
) -> Result<(ValueReport, Vec<SeedArtifacts>)> {
    let env_cfg = d.env_config().clone();
    let starts = sample_start_states(d, cfg.start_states, cfg.n_start_states, cfg.start_seed);
    let mut artifacts = Vec::with_capacity(models.len());
    for &(seed, model) in models {
        let fqe_cfg = FqeConfig { seed: seeds::derive(seed, 2), ..cfg.fqe.clone() };
        let fqe_result = fqe(d, &cfg.policy, cfg.value.gamma, &fqe_cfg)?;
        let fit_states = sample_start_states(d, StartStates::DatasetStates, cfg.n_fit_states, seeds::derive(seed, 3));
        let fit_values = value_mb_batch(model, &fit_states, &cfg.policy, &cfg.value, &env_cfg);
        let targets: Vec<(State, f64)> = fit_states.into_iter().zip(fit_values).collect();
        let fitted = fit_mbro(&targets, &mut { cfg.policy }, &cfg.fitted.with_seed(seeds::derive(seed, 4)))?;
        artifacts.push(SeedArtifacts { seed, fqe: fqe_result, fitted });
    }
    let sets: Vec<Estimators<'_>> = artifacts
        .iter()
        .zip(models)
        .map(|(a, (_, m))| Estimators { seed: a.seed, model: m, q: &a.fqe.q, fitted: &a.fitted })
        .collect();
    let report = evaluate_estimators(&starts, &cfg.policy, &sets, &cfg.value, cfg.true_max_steps, &env_cfg)?;
    Ok((report, artifacts))
}
