//! Experiment configuration with `desk` and `paper` presets, and the pipeline
//! stages that turn a configuration into output files.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{self, Dataset};
use crate::env::{self, EnvConfig, State};
use crate::error::{Error, Result};
use crate::learner::{self, Algorithm, EvalConfig, FitConfig, LearnConfig, LearningProblem, LearningRun, LearningSummary};
use crate::model::{self, DynamicsModel, QualityTier};
use crate::neural::TrainConfig;
use crate::policy::LinearController;
use crate::rollout::{self, ValueConfig};
use crate::seeds;
use crate::valuation::{self, FqeConfig, StartStates, ValueStudyConfig, ValueSummary};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset '{other}' (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub n_tuples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub split_ratio: f64,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSection {
    pub policy: LinearController,
    pub steps: usize,
    pub n_starts: usize,
    pub start_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuesSection {
    pub policy: LinearController,
    pub n_start_states: usize,
    pub start_states: StartStates,
    pub start_seed: u64,
    pub true_max_steps: usize,
    pub fqe: FqeConfig,
    pub fitted: TrainConfig,
    pub n_fit_states: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSection {
    pub nfq_iterations: usize,
    pub bsf_iterations: usize,
    pub fit: FitConfig,
    pub eval: EvalConfig,
}

/// Every hyperparameter of the pipeline. All randomness derives from
/// `dataset.seed` and `seeds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub gamma: f64,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    pub dataset: DatasetSection,
    pub dynamics: DynamicsSection,
    pub rollouts: RolloutSection,
    pub values: ValuesSection,
    pub learning: LearningSection,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let desk = Self {
            preset: Preset::Desk,
            gamma: 0.99,
            horizon: 1000,
            seeds: vec![0, 1, 2],
            env: EnvConfig::default(),
            dataset: DatasetSection { n_tuples: 20_000, seed: 0 },
            dynamics: DynamicsSection { split_ratio: 0.7, train: TrainConfig::default() },
            rollouts: RolloutSection { policy: LinearController::BALANCING, steps: 200, n_starts: 20, start_seed: 777 },
            values: ValuesSection {
                policy: LinearController::BALANCING,
                n_start_states: 200,
                start_states: StartStates::DatasetStates,
                start_seed: 12345,
                true_max_steps: 5000,
                fqe: FqeConfig::default(),
                fitted: TrainConfig { checkpoint_epochs: vec![], max_epochs: 1000, ..TrainConfig::default() },
                n_fit_states: 2000,
            },
            learning: LearningSection {
                nfq_iterations: 100,
                bsf_iterations: 20,
                fit: FitConfig::default(),
                eval: EvalConfig { n_episodes: 100, max_steps: 1000, seed: 0x5eed },
            },
        };
        match p {
            Preset::Desk => desk,
            Preset::Paper => Self {
                preset: Preset::Paper,
                seeds: (0..10).collect(),
                values: ValuesSection { n_start_states: 1000, ..desk.values.clone() },
                learning: LearningSection {
                    nfq_iterations: 1000,
                    bsf_iterations: 100,
                    eval: EvalConfig { n_episodes: 1000, max_steps: 5000, ..desk.learning.eval.clone() },
                    ..desk.learning.clone()
                },
                ..desk
            },
        }
    }

    /// Parses a TOML config on top of a preset. The file's own `preset` key
    /// is used unless `preset` is given.
    pub fn from_toml(text: &str, preset: Option<Preset>) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let chosen = match (preset, user.get("preset")) {
            (Some(p), _) => p,
            (None, Some(v)) => v.as_str().ok_or_else(|| Error::Config("preset must be a string".into()))?.parse()?,
            (None, None) => Preset::Desk,
        };
        let mut base = toml::Table::try_from(Self::preset(chosen)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        base.insert("preset".into(), toml::Value::String(chosen.to_string()));
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, preset)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Shifts the dataset seed and every run seed by `offset`.
    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        self.dataset.seed = self.dataset.seed.wrapping_add(offset);
        for s in &mut self.seeds {
            *s = s.wrapping_add(offset);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.value_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.dataset.n_tuples < 2 {
            return Err(Error::Config("dataset needs at least two tuples".into()));
        }
        if !(self.dynamics.split_ratio > 0.0 && self.dynamics.split_ratio < 1.0) {
            return Err(Error::Config("split_ratio must lie in (0, 1)".into()));
        }
        self.dynamics.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.values.fitted.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.values.n_start_states == 0 || self.values.n_fit_states < 2 || self.values.fqe.iterations == 0 {
            return Err(Error::Config("values: need start states, >= 2 fit states and >= 1 FQE iteration".into()));
        }
        if self.rollouts.steps == 0 || self.rollouts.n_starts == 0 {
            return Err(Error::Config("rollouts: steps and n_starts must be >= 1".into()));
        }
        for algo in Algorithm::ALL {
            self.learn_config(algo).validate()?;
        }
        Ok(())
    }

    pub fn value_config(&self) -> ValueConfig {
        ValueConfig { gamma: self.gamma, horizon: self.horizon, terminate: true }
    }

    pub fn value_study(&self) -> ValueStudyConfig {
        let v = &self.values;
        ValueStudyConfig {
            policy: v.policy,
            n_start_states: v.n_start_states,
            start_states: v.start_states,
            start_seed: v.start_seed,
            value: self.value_config(),
            true_max_steps: v.true_max_steps,
            fqe: v.fqe.clone(),
            fitted: v.fitted.clone(),
            n_fit_states: v.n_fit_states,
        }
    }

    pub fn learn_config(&self, algo: Algorithm) -> LearnConfig {
        LearnConfig {
            iterations: match algo {
                Algorithm::Nfq => self.learning.nfq_iterations,
                Algorithm::BsfNfq => self.learning.bsf_iterations,
            },
            gamma: self.gamma,
            horizon: self.horizon,
            fit: self.learning.fit.clone(),
            eval: self.learning.eval.clone(),
        }
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// File layout below the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("data").join("dataset.csv")
    }

    pub fn models(&self, seed: u64) -> PathBuf {
        self.root.join("models").join(format!("seed_{seed}"))
    }

    pub fn rollouts(&self, seed: u64) -> PathBuf {
        self.root.join("rollouts").join(format!("seed_{seed}"))
    }

    pub fn values(&self) -> PathBuf {
        self.root.join("values")
    }

    pub fn learning(&self, algo: Algorithm) -> PathBuf {
        self.root.join("learning").join(algo.label())
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// The pipeline bound to one configuration and output directory.
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(out);
        create_dir(&layout.root)?;
        write_file(&layout.config(), cfg.to_toml().as_bytes())?;
        Ok(Self { cfg, layout })
    }

    pub fn generate(&self) -> Result<Dataset> {
        let d = data::generate_dataset(self.cfg.dataset.n_tuples, self.cfg.dataset.seed, &self.cfg.env)?;
        let path = self.layout.dataset();
        create_dir(path.parent().expect("dataset path has a parent"))?;
        data::save_dataset(&d, &path)?;
        log::info!("wrote {} tuples to {}", d.len(), path.display());
        Ok(d)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let path = self.layout.dataset();
        if !path.exists() {
            return Err(Error::Config(format!("{} not found; run `generate` first", path.display())));
        }
        let d = data::load_dataset(&path)?;
        if d.env_config() != &self.cfg.env {
            return Err(Error::Config("dataset was generated with a different environment config".into()));
        }
        Ok(d)
    }

    pub fn train_models(&self) -> Result<BTreeMap<u64, Vec<TierError>>> {
        let d = self.load_dataset()?;
        let mut out = BTreeMap::new();
        for &seed in &self.cfg.seeds {
            let split = data::split_dataset(&d, self.cfg.dynamics.split_ratio, seeds::derive(seed, 0))?;
            let training = model::train_dynamics(&d, &split, &self.cfg.dynamics.train.with_seed(seeds::derive(seed, 1)))?;
            let dir = self.layout.models(seed);
            model::save_bundle(&dir, &training)?;
            for c in &training.curves {
                let bytes = csv_bytes(|b| write_curve_csv(c, b))?;
                write_file(&dir.join("curves").join(format!("{}.csv", c.name)), &bytes)?;
            }
            let errors: Vec<TierError> = training
                .tiers
                .iter()
                .map(|(tier, m)| TierError {
                    tier: *tier,
                    epoch: tier_epoch(*tier, &training.curves),
                    error: model::one_step_error(m, &d, &split.validation, &m.state_scale()),
                })
                .collect();
            write_file(&dir.join("one_step_errors.csv"), &csv_bytes(|b| write_tier_errors_csv(&errors, b))?)?;
            write_json(&dir.join("one_step_errors.json"), &errors)?;
            log::info!("seed {seed}: trained dynamics models into {}", dir.display());
            out.insert(seed, errors);
        }
        Ok(out)
    }

    pub fn load_model(&self, seed: u64, tier: QualityTier) -> Result<DynamicsModel> {
        let dir = self.layout.models(seed);
        if !dir.join("manifest.json").exists() {
            return Err(Error::Config(format!("{} has no model bundle; run `train-models` first", dir.display())));
        }
        model::load_model(&dir, tier)
    }

    pub fn rollout_compare(&self) -> Result<BTreeMap<u64, Vec<TierDivergence>>> {
        let r = &self.cfg.rollouts;
        let starts: Vec<State> =
            (0..r.n_starts as u64).map(|i| env::reset(seeds::derive(r.start_seed, i), &self.cfg.env)).collect();
        let mut out = BTreeMap::new();
        for &seed in &self.cfg.seeds {
            let dir = self.layout.rollouts(seed);
            let mut summaries = Vec::new();
            for tier in QualityTier::ALL {
                let m = self.load_model(seed, tier)?;
                let (blind, informed) = mean_divergence(&m, &starts, &r.policy, r.steps, &self.cfg.env)?;
                for (mode, profile) in [("blind", &blind), ("informed", &informed)] {
                    let bytes = csv_bytes(|b| rollout::write_divergence_csv(profile, b))?;
                    write_file(&dir.join(format!("{}_{mode}.csv", tier.label())), &bytes)?;
                }
                summaries.push(TierDivergence::new(tier, &blind, &informed));
            }
            write_json(&dir.join("summary.json"), &summaries)?;
            log::info!("seed {seed}: wrote rollout divergence profiles to {}", dir.display());
            out.insert(seed, summaries);
        }
        Ok(out)
    }

    pub fn evaluate_values(&self) -> Result<ValueSummary> {
        let d = self.load_dataset()?;
        let models: Vec<(u64, DynamicsModel)> = self
            .cfg
            .seeds
            .iter()
            .map(|&s| Ok((s, self.load_model(s, QualityTier::Best)?)))
            .collect::<Result<_>>()?;
        let refs: Vec<(u64, &DynamicsModel)> = models.iter().map(|(s, m)| (*s, m)).collect();
        let (report, _) = valuation::value_study(&d, &self.cfg.value_study(), &refs)?;
        let dir = self.layout.values();
        write_file(&dir.join("rows.csv"), &csv_bytes(|b| report.write_rows_csv(b))?)?;
        write_file(&dir.join("errors.csv"), &csv_bytes(|b| report.write_errors_csv(b))?)?;
        write_json(&dir.join("summary.json"), &report.summary)?;
        log::info!("wrote value estimates for {} start states to {}", report.summary.n_states, dir.display());
        Ok(report.summary)
    }

    pub fn learn(&self, algo: Algorithm) -> Result<LearningSummary> {
        let d = self.load_dataset()?;
        let problem = LearningProblem::from_dataset(&d, self.cfg.gamma)?;
        let lc = self.cfg.learn_config(algo);
        let dir = self.layout.learning(algo);
        let mut runs = Vec::new();
        for &seed in &self.cfg.seeds {
            let model = match algo {
                Algorithm::BsfNfq => Some(self.load_model(seed, QualityTier::Best)?),
                Algorithm::Nfq => None,
            };
            let run = learner::learn_with(&problem, algo, model.as_ref(), &lc, seed, |r| {
                log::info!(
                    "{algo} seed {seed} iteration {}: return {:.3}, survival {:.2}{}",
                    r.iteration,
                    r.mean_return,
                    r.survival_fraction,
                    if r.perfect { " (perfect)" } else { "" }
                )
            })?;
            save_run(&dir, &run)?;
            runs.push(run);
        }
        let summary = LearningSummary::of(&runs)?;
        write_json(&dir.join("summary.json"), &summary)?;
        Ok(summary)
    }

    /// Collects whatever stage summaries exist into `report/`.
    pub fn report(&self) -> Result<Report> {
        let mut report = Report { preset: self.cfg.preset, seeds: self.cfg.seeds.clone(), ..Report::default() };
        for &seed in &self.cfg.seeds {
            let p = self.layout.models(seed).join("one_step_errors.json");
            if p.exists() {
                report.one_step_errors.insert(seed, read_json(&p)?);
            }
            let p = self.layout.rollouts(seed).join("summary.json");
            if p.exists() {
                report.divergence.insert(seed, read_json(&p)?);
            }
        }
        let p = self.layout.values().join("summary.json");
        if p.exists() {
            report.values = Some(read_json(&p)?);
        }
        for algo in Algorithm::ALL {
            let p = self.layout.learning(algo).join("summary.json");
            if p.exists() {
                report.learning.push(read_json(&p)?);
            }
        }
        let checked = crate::schema::validate_tree(&self.layout.root)?;
        report.csv_files_checked = checked.len();
        let dir = self.layout.report();
        write_json(&dir.join("report.json"), &report)?;
        write_file(&dir.join("tables.csv"), &csv_bytes(|b| report.write_tables_csv(b))?)?;
        write_file(&dir.join("report.md"), report.to_markdown().as_bytes())?;
        Ok(report)
    }
}

fn save_run(dir: &Path, run: &LearningRun) -> Result<()> {
    let seed_dir = dir.join(format!("seed_{}", run.seed));
    write_file(&seed_dir.join("iterations.csv"), &csv_bytes(|b| run.write_csv(b))?)?;
    let qdir = seed_dir.join("q");
    create_dir(&qdir)?;
    for (r, q) in run.records.iter().zip(&run.q_functions) {
        q.save(&qdir.join(LearningRun::q_file_name(r.iteration)))?;
    }
    Ok(())
}

fn tier_epoch(tier: QualityTier, curves: &[model::LearningCurve]) -> usize {
    match tier.epoch() {
        Some(e) => e,
        None => curves.iter().map(|c| c.best_epoch).max().unwrap_or(0),
    }
}

fn write_curve_csv(c: &model::LearningCurve, w: &mut Vec<u8>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_loss", "val_loss"])?;
    for (e, (t, v)) in c.train_loss.iter().zip(&c.val_loss).enumerate() {
        out.write_record([e.to_string(), t.to_string(), v.to_string()])?;
    }
    out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// One-step validation error of one quality tier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierError {
    pub tier: QualityTier,
    /// Checkpoint epoch; for the best tier the latest best epoch over the five networks.
    pub epoch: usize,
    pub error: model::OneStepError,
}

fn write_tier_errors_csv(errors: &[TierError], w: &mut Vec<u8>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(crate::schema::ONE_STEP_ERRORS.header())?;
    for t in errors {
        let mut row = vec![t.tier.label().to_string(), t.epoch.to_string()];
        row.extend(t.error.rmse.iter().map(f64::to_string));
        row.push(t.error.mean_scaled.to_string());
        row.push(t.error.reward_rmse.to_string());
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Per-step blind and informed divergence averaged over `starts`.
pub fn mean_divergence(
    m: &DynamicsModel,
    starts: &[State],
    pi: &LinearController,
    steps: usize,
    cfg: &EnvConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let scale = m.state_scale();
    let mut blind = vec![0.0; steps + 1];
    let mut informed = vec![0.0; steps + 1];
    for s in starts {
        let c = rollout::compare_rollouts(m, *s, pi, steps, cfg, &scale)?;
        for (acc, v) in blind.iter_mut().zip(&c.blind_divergence) {
            *acc += v;
        }
        for (acc, v) in informed.iter_mut().zip(&c.informed_divergence) {
            *acc += v;
        }
    }
    let n = starts.len().max(1) as f64;
    blind.iter_mut().chain(informed.iter_mut()).for_each(|v| *v /= n);
    Ok((blind, informed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierDivergence {
    pub tier: QualityTier,
    pub blind_mean: f64,
    pub informed_mean: f64,
    pub blind_steps_0_10: f64,
    pub blind_steps_50_100: f64,
}

impl TierDivergence {
    pub fn new(tier: QualityTier, blind: &[f64], informed: &[f64]) -> Self {
        let all = |p: &[f64]| rollout::window_mean(p, 0, p.len());
        Self {
            tier,
            blind_mean: all(blind),
            informed_mean: all(informed),
            blind_steps_0_10: rollout::window_mean(blind, 0, 11),
            blind_steps_50_100: rollout::window_mean(blind, 50, 101),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub preset: Preset,
    pub seeds: Vec<u64>,
    pub one_step_errors: BTreeMap<u64, Vec<TierError>>,
    pub divergence: BTreeMap<u64, Vec<TierDivergence>>,
    pub values: Option<ValueSummary>,
    pub learning: Vec<LearningSummary>,
    pub csv_files_checked: usize,
}

impl Report {
    fn write_tables_csv(&self, w: &mut Vec<u8>) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(crate::schema::SUMMARY_TABLE.header())?;
        let se = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        if let Some(v) = &self.values {
            for (label, e) in [("mbro", &v.mbro), ("fitted_mbro", &v.fitted_mbro), ("fqe", &v.fqe)] {
                out.write_record(["value_rmse", label, &e.rmse.mean.to_string(), &se(e.rmse.stderr)])?;
                if let Some(c) = &e.correlation {
                    out.write_record(["value_correlation", label, &c.mean.to_string(), &se(c.stderr)])?;
                }
            }
        }
        for l in &self.learning {
            let r = &l.optimal_ratio;
            out.write_record(["optimal_policy_ratio", l.algorithm.label(), &r.mean.to_string(), &se(r.stderr)])?;
        }
        out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn to_markdown(&self) -> String {
        use std::fmt::Write as _;
        let pm = |m: &valuation::MeanSe| match m.stderr {
            Some(s) => format!("{:.4} ± {:.4}", m.mean, s),
            None => format!("{:.4}", m.mean),
        };
        let mut s = format!("# Results ({} preset, seeds {:?})\n\n", self.preset, self.seeds);
        if !self.one_step_errors.is_empty() {
            s.push_str("## One-step validation error\n\n| seed | tier | epoch | mean scaled error | reward RMSE |\n|---|---|---|---|---|\n");
            for (seed, errs) in &self.one_step_errors {
                for e in errs {
                    let _ = writeln!(
                        s,
                        "| {seed} | {} | {} | {:.6} | {:.6} |",
                        e.tier, e.epoch, e.error.mean_scaled, e.error.reward_rmse
                    );
                }
            }
            s.push('\n');
        }
        if !self.divergence.is_empty() {
            s.push_str("## Rollout divergence\n\n| seed | tier | blind mean | informed mean | blind 0-10 | blind 50-100 |\n|---|---|---|---|---|---|\n");
            for (seed, divs) in &self.divergence {
                for d in divs {
                    let _ = writeln!(
                        s,
                        "| {seed} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                        d.tier, d.blind_mean, d.informed_mean, d.blind_steps_0_10, d.blind_steps_50_100
                    );
                }
            }
            s.push('\n');
        }
        if let Some(v) = &self.values {
            let _ = writeln!(s, "## State-value estimates ({} start states, {} seeds)\n", v.n_states, v.n_seeds);
            s.push_str("| estimator | RMSE | correlation |\n|---|---|---|\n");
            for (label, e) in [("MBRO", &v.mbro), ("fitted MBRO", &v.fitted_mbro), ("FQE", &v.fqe)] {
                let corr = e.correlation.as_ref().map(pm).unwrap_or_else(|| "undefined".into());
                let _ = writeln!(s, "| {label} | {} | {corr} |", pm(&e.rmse));
            }
            s.push('\n');
        }
        if !self.learning.is_empty() {
            s.push_str("## Policy learning\n\n| algorithm | iterations | seeds | optimal-policy ratio |\n|---|---|---|---|\n");
            for l in &self.learning {
                let r = valuation::MeanSe { mean: 100.0 * l.optimal_ratio.mean, stderr: l.optimal_ratio.stderr.map(|x| 100.0 * x) };
                let _ = writeln!(s, "| {} | {} | {} | {} % |", l.algorithm, l.iterations, l.n_seeds, pm(&r));
            }
        }
        s
    }
}
