//! Learned simulator: four per-variable delta transition networks and a
//! reward network, trained from an offline dataset.
//!
//! Every transition network sees `(x, x_dot, theta, theta_dot, a)` and
//! predicts the change of its own state variable. The reward network sees
//! `(s, a, s_next)`. Inputs are z-scored with training-split statistics.
//! Delta targets are divided by their standard deviation but not centered,
//! so a network emitting zero predicts "no change".

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::{Dataset, Split};
use crate::env::{Action, State};
use crate::error::{Error, Result};
use crate::neural::{self, Mlp, Samples, TrainConfig, TrainResult, Workspace};
use crate::seeds;

pub const TRANSITION_LAYERS: [usize; 3] = [5, 16, 1];
pub const REWARD_LAYERS: [usize; 3] = [9, 16, 1];
pub const STATE_VARIABLES: [&str; 4] = ["x", "x_dot", "theta", "theta_dot"];

/// Checkpoint used to assemble a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityTier {
    Epoch1,
    Epoch10,
    Epoch100,
    Best,
}

impl QualityTier {
    pub const ALL: [QualityTier; 4] =
        [QualityTier::Epoch1, QualityTier::Epoch10, QualityTier::Epoch100, QualityTier::Best];

    pub fn label(self) -> &'static str {
        match self {
            QualityTier::Epoch1 => "epoch1",
            QualityTier::Epoch10 => "epoch10",
            QualityTier::Epoch100 => "epoch100",
            QualityTier::Best => "best",
        }
    }

    /// Completed-epoch count of a fixed checkpoint tier.
    pub fn epoch(self) -> Option<usize> {
        match self {
            QualityTier::Epoch1 => Some(1),
            QualityTier::Epoch10 => Some(10),
            QualityTier::Epoch100 => Some(100),
            QualityTier::Best => None,
        }
    }
}

impl fmt::Display for QualityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for QualityTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QualityTier::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown quality tier {s:?}")))
    }
}

/// Per-feature affine normalization `z = (v - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Column statistics of row-major `rows`; zero-variance columns get unit
    /// scale.
    pub fn fit(rows: &[f64], dim: usize) -> Self {
        let n = (rows.len() / dim).max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Self { mean, std }
    }

    /// Scale-only variant: zero mean, column RMS as scale.
    pub fn fit_scale(rows: &[f64], dim: usize) -> Self {
        let n = (rows.len() / dim).max(1) as f64;
        let mut sq = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for (s, v) in sq.iter_mut().zip(row) {
                *s += v * v;
            }
        }
        let std = sq.iter().map(|s| (s / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Self { mean: vec![0.0; dim], std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_into(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..v.len() {
            out[i] = (v[i] - self.mean[i]) / self.std[i];
        }
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.normalize_into(v, &mut out);
        out
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(i, z)| z * self.std[i] + self.mean[i]).collect()
    }

    fn denormalize_one(&self, i: usize, z: f64) -> f64 {
        z * self.std[i] + self.mean[i]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    pub sub_models: [Mlp; 4],
    pub reward_model: Mlp,
    /// Shared by all four transition networks: `(s, a)`.
    pub transition_input: Normalizer,
    /// Per-variable delta scale (mean is zero).
    pub delta_scale: Normalizer,
    /// `(s, a, s_next)`.
    pub reward_input: Normalizer,
    pub reward_target: Normalizer,
}

/// Scratch buffers for allocation-free model evaluation.
#[derive(Clone, Debug, Default)]
pub struct ModelWorkspace {
    transition_in: [f64; 5],
    reward_in: [f64; 9],
    net: Workspace,
}

impl DynamicsModel {
    /// All-zero networks with identity normalization: `predict_next` is the
    /// identity map and `predict_reward` is 0.
    pub fn zeros() -> Self {
        Self {
            sub_models: std::array::from_fn(|_| Mlp::zeros(&TRANSITION_LAYERS).unwrap()),
            reward_model: Mlp::zeros(&REWARD_LAYERS).unwrap(),
            transition_input: Normalizer::identity(5),
            delta_scale: Normalizer::identity(4),
            reward_input: Normalizer::identity(9),
            reward_target: Normalizer::identity(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for net in &self.sub_models {
            if net.layer_sizes()[0] != 5 || net.output_dim() != 1 {
                return Err(Error::InvalidArgument(format!(
                    "transition network must map 5 inputs to 1 output, got {:?}",
                    net.layer_sizes()
                )));
            }
        }
        if self.reward_model.input_dim() != 9 || self.reward_model.output_dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "reward network must map 9 inputs to 1 output, got {:?}",
                self.reward_model.layer_sizes()
            )));
        }
        let dims = [
            (self.transition_input.dim(), 5),
            (self.delta_scale.dim(), 4),
            (self.reward_input.dim(), 9),
            (self.reward_target.dim(), 1),
        ];
        for (actual, expected) in dims {
            if actual != expected {
                return Err(Error::DimensionMismatch { expected, actual });
            }
        }
        Ok(())
    }

    /// Standard deviation of each state variable in the training data.
    pub fn state_scale(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.transition_input.std[i])
    }

    pub fn predict_next_ws(&self, s: &State, a: Action, ws: &mut ModelWorkspace) -> State {
        let raw = [s.x, s.x_dot, s.theta, s.theta_dot, a.as_f64()];
        self.transition_input.normalize_into(&raw, &mut ws.transition_in);
        let mut next = s.to_array();
        for (i, net) in self.sub_models.iter().enumerate() {
            let z = net.predict_scalar(&ws.transition_in, &mut ws.net);
            next[i] += self.delta_scale.denormalize_one(i, z);
        }
        State::from_array(next)
    }

    pub fn predict_next(&self, s: &State, a: Action) -> State {
        self.predict_next_ws(s, a, &mut ModelWorkspace::default())
    }

    pub fn predict_reward_ws(&self, s: &State, a: Action, s_next: &State, ws: &mut ModelWorkspace) -> f64 {
        let raw = reward_features(s, a, s_next);
        self.reward_input.normalize_into(&raw, &mut ws.reward_in);
        let z = self.reward_model.predict_scalar(&ws.reward_in, &mut ws.net);
        self.reward_target.denormalize_one(0, z)
    }

    pub fn predict_reward(&self, s: &State, a: Action, s_next: &State) -> f64 {
        self.predict_reward_ws(s, a, s_next, &mut ModelWorkspace::default())
    }
}

fn transition_features(s: &State, a: Action) -> [f64; 5] {
    [s.x, s.x_dot, s.theta, s.theta_dot, a.as_f64()]
}

fn reward_features(s: &State, a: Action, s_next: &State) -> [f64; 9] {
    [
        s.x,
        s.x_dot,
        s.theta,
        s.theta_dot,
        a.as_f64(),
        s_next.x,
        s_next.x_dot,
        s_next.theta,
        s_next.theta_dot,
    ]
}

/// Learning record of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub name: String,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub saved_epochs: Vec<usize>,
}

impl LearningCurve {
    fn from_result(name: &str, r: &TrainResult) -> Self {
        Self {
            name: name.to_string(),
            train_loss: r.train_loss.clone(),
            val_loss: r.val_loss.clone(),
            best_epoch: r.best_epoch,
            stopped_epoch: r.stopped_epoch,
            saved_epochs: r.checkpoints.keys().copied().collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DynamicsTraining {
    pub tiers: BTreeMap<QualityTier, DynamicsModel>,
    /// Four transition networks followed by the reward network.
    pub curves: Vec<LearningCurve>,
    pub seeds: Vec<u64>,
}

/// Regression sets for the four delta networks and the reward network,
/// already normalized.
pub struct DynamicsSamples {
    pub transition: [Samples; 4],
    pub reward: Samples,
}

/// Training-target delta for state variable `var` of a tuple.
pub fn delta_target(s: &State, s_next: &State, var: usize) -> f64 {
    s_next.to_array()[var] - s.to_array()[var]
}

fn fit_normalizers(d: &Dataset, train_idx: &[usize]) -> (Normalizer, Normalizer, Normalizer, Normalizer) {
    let mut tin = Vec::with_capacity(train_idx.len() * 5);
    let mut deltas = Vec::with_capacity(train_idx.len() * 4);
    let mut rin = Vec::with_capacity(train_idx.len() * 9);
    let mut rt = Vec::with_capacity(train_idx.len());
    for &i in train_idx {
        let t = &d.tuples[i];
        tin.extend_from_slice(&transition_features(&t.s, t.a));
        deltas.extend((0..4).map(|v| delta_target(&t.s, &t.s_next, v)));
        rin.extend_from_slice(&reward_features(&t.s, t.a, &t.s_next));
        rt.push(t.r);
    }
    (Normalizer::fit(&tin, 5), Normalizer::fit_scale(&deltas, 4), Normalizer::fit(&rin, 9), Normalizer::fit(&rt, 1))
}

fn build_samples(d: &Dataset, idx: &[usize], norms: &(Normalizer, Normalizer, Normalizer, Normalizer)) -> DynamicsSamples {
    let (tin, dscale, rin, rt) = norms;
    let mut transition: [Samples; 4] = std::array::from_fn(|_| Samples::with_capacity(5, 1, idx.len()));
    let mut reward = Samples::with_capacity(9, 1, idx.len());
    let mut zin = [0.0; 5];
    let mut zr = [0.0; 9];
    for &i in idx {
        let t = &d.tuples[i];
        tin.normalize_into(&transition_features(&t.s, t.a), &mut zin);
        for (v, set) in transition.iter_mut().enumerate() {
            set.push(&zin, &[delta_target(&t.s, &t.s_next, v) / dscale.std[v]]);
        }
        rin.normalize_into(&reward_features(&t.s, t.a, &t.s_next), &mut zr);
        reward.push(&zr, &[(t.r - rt.mean[0]) / rt.std[0]]);
    }
    DynamicsSamples { transition, reward }
}

/// Trains the four transition networks and the reward network with early
/// stopping and assembles one model per quality tier from the saved epochs.
pub fn train_dynamics(d: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<DynamicsTraining> {
    if d.is_empty() || split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::InvalidArgument("dataset and both split sides must be non-empty".into()));
    }
    if let Some(&bad) = split.train.iter().chain(&split.validation).find(|&&i| i >= d.len()) {
        return Err(Error::InvalidArgument(format!("split index {bad} out of range for {} rows", d.len())));
    }
    let norms = fit_normalizers(d, &split.train);
    let tr = build_samples(d, &split.train, &norms);
    let va = build_samples(d, &split.validation, &norms);

    let mut train_cfg = cfg.clone();
    for e in [1, 10, 100] {
        if !train_cfg.checkpoint_epochs.contains(&e) {
            train_cfg.checkpoint_epochs.push(e);
        }
    }

    let seeds: Vec<u64> = (0..5).map(|k| seeds::derive(cfg.seed, k)).collect();
    let jobs: Vec<(usize, &Samples, &Samples, &[usize])> = (0..4)
        .map(|v| (v, &tr.transition[v], &va.transition[v], &TRANSITION_LAYERS[..]))
        .chain(std::iter::once((4, &tr.reward, &va.reward, &REWARD_LAYERS[..])))
        .collect();
    let results: Vec<TrainResult> = jobs
        .into_par_iter()
        .map(|(k, t, v, layers)| {
            let net = Mlp::he_uniform(layers, seeds[k])?;
            neural::train(net, t, v, &train_cfg.with_seed(seeds::derive(seeds[k], 1)))
        })
        .collect::<Result<_>>()?;

    let (tin, dscale, rin, rt) = norms;
    let pick = |r: &TrainResult, tier: QualityTier| -> Mlp {
        tier.epoch().and_then(|e| r.checkpoints.get(&e)).unwrap_or(&r.best_params).clone()
    };
    let tiers = QualityTier::ALL
        .into_iter()
        .map(|tier| {
            let m = DynamicsModel {
                sub_models: std::array::from_fn(|v| pick(&results[v], tier)),
                reward_model: pick(&results[4], tier),
                transition_input: tin.clone(),
                delta_scale: dscale.clone(),
                reward_input: rin.clone(),
                reward_target: rt.clone(),
            };
            (tier, m)
        })
        .collect();
    let names = ["x", "x_dot", "theta", "theta_dot", "reward"];
    let curves = results.iter().zip(names).map(|(r, n)| LearningCurve::from_result(n, r)).collect();
    Ok(DynamicsTraining { tiers, curves, seeds })
}

/// Per-variable one-step error statistics of a model on a set of tuples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneStepError {
    /// Root-mean-square error of each predicted next-state variable.
    pub rmse: [f64; 4],
    /// Mean Euclidean error in state-scale units.
    pub mean_scaled: f64,
    pub reward_rmse: f64,
}

pub fn one_step_error(m: &DynamicsModel, d: &Dataset, idx: &[usize], scale: &[f64; 4]) -> OneStepError {
    let mut ws = ModelWorkspace::default();
    let mut sq = [0.0; 4];
    let mut scaled = 0.0;
    let mut rsq = 0.0;
    for &i in idx {
        let t = &d.tuples[i];
        let p = m.predict_next_ws(&t.s, t.a, &mut ws).to_array();
        let truth = t.s_next.to_array();
        let mut dist = 0.0;
        for v in 0..4 {
            let e = p[v] - truth[v];
            sq[v] += e * e;
            dist += (e / scale[v]) * (e / scale[v]);
        }
        scaled += dist.sqrt();
        let r = m.predict_reward_ws(&t.s, t.a, &t.s_next, &mut ws) - t.r;
        rsq += r * r;
    }
    let n = idx.len().max(1) as f64;
    OneStepError {
        rmse: sq.map(|s| (s / n).sqrt()),
        mean_scaled: scaled / n,
        reward_rmse: (rsq / n).sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub tiers: Vec<QualityTier>,
    pub seeds: Vec<u64>,
    pub transition_input: Normalizer,
    pub delta_scale: Normalizer,
    pub reward_input: Normalizer,
    pub reward_target: Normalizer,
    pub curves: Vec<CurveSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub name: String,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_loss: f64,
    pub saved_epochs: Vec<usize>,
}

const NET_FILES: [&str; 5] = ["x.json", "x_dot.json", "theta.json", "theta_dot.json", "reward.json"];

/// Writes `manifest.json` plus one checkpoint directory per tier.
pub fn save_bundle(dir: &Path, training: &DynamicsTraining) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let any = training
        .tiers
        .values()
        .next()
        .ok_or_else(|| Error::InvalidArgument("no tiers to save".into()))?;
    for (tier, m) in &training.tiers {
        let tdir = dir.join(tier.label());
        std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
        for (net, file) in m.sub_models.iter().chain(std::iter::once(&m.reward_model)).zip(NET_FILES) {
            net.save(&tdir.join(file))?;
        }
    }
    let manifest = BundleManifest {
        tiers: training.tiers.keys().copied().collect(),
        seeds: training.seeds.clone(),
        transition_input: any.transition_input.clone(),
        delta_scale: any.delta_scale.clone(),
        reward_input: any.reward_input.clone(),
        reward_target: any.reward_target.clone(),
        curves: training
            .curves
            .iter()
            .map(|c| CurveSummary {
                name: c.name.clone(),
                best_epoch: c.best_epoch,
                stopped_epoch: c.stopped_epoch,
                best_val_loss: c.val_loss[c.best_epoch],
                saved_epochs: c.saved_epochs.clone(),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<BundleManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_model(dir: &Path, tier: QualityTier) -> Result<DynamicsModel> {
    let manifest = load_manifest(dir)?;
    if !manifest.tiers.contains(&tier) {
        return Err(Error::InvalidArgument(format!("bundle has no tier {tier}")));
    }
    let tdir = dir.join(tier.label());
    let nets = NET_FILES.iter().map(|f| Mlp::load(&tdir.join(f))).collect::<Result<Vec<_>>>()?;
    let mut nets = nets.into_iter();
    let m = DynamicsModel {
        sub_models: std::array::from_fn(|_| nets.next().unwrap()),
        reward_model: nets.next().unwrap(),
        transition_input: manifest.transition_input,
        delta_scale: manifest.delta_scale,
        reward_input: manifest.reward_input,
        reward_target: manifest.reward_target,
    };
    m.validate()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, split_dataset};
    use crate::env::EnvConfig;
    use proptest::prelude::*;

    #[test]
    fn zero_model_is_identity_with_zero_reward() {
        let m = DynamicsModel::zeros();
        let s = State::new(0.3, -1.0, 0.05, 2.0);
        assert_eq!(m.predict_next(&s, Action::Left), s);
        assert_eq!(m.predict_reward(&s, Action::Right, &s), 0.0);
        m.validate().unwrap();
    }

    #[test]
    fn zero_reward_net_returns_target_mean() {
        let mut m = DynamicsModel::zeros();
        m.reward_target = Normalizer { mean: vec![0.8], std: vec![0.1] };
        assert_eq!(m.predict_reward(&State::default(), Action::Left, &State::default()), 0.8);
    }

    #[test]
    fn delta_targets() {
        let s = State::new(0.0, 0.0, 0.1, 0.0);
        let n = State::new(0.0, 0.0, 0.12, 0.0);
        assert!((delta_target(&s, &n, 2) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn tier_labels_roundtrip() {
        for t in QualityTier::ALL {
            assert_eq!(t.label().parse::<QualityTier>().unwrap(), t);
        }
        assert!("epoch2".parse::<QualityTier>().is_err());
    }

    #[test]
    fn short_training_yields_all_tiers_and_bundle_roundtrip() {
        let d = generate_dataset(600, 1, &EnvConfig::default()).unwrap();
        let split = split_dataset(&d, 0.7, 2).unwrap();
        let cfg = TrainConfig { max_epochs: 12, patience_epochs: 50, ..Default::default() };
        let training = train_dynamics(&d, &split, &cfg).unwrap();
        assert_eq!(training.tiers.keys().copied().collect::<Vec<_>>(), QualityTier::ALL.to_vec());
        assert_eq!(training.curves.len(), 5);
        // Epoch 100 not reached: falls back to the best parameters.
        assert_eq!(training.tiers[&QualityTier::Epoch100], training.tiers[&QualityTier::Best]);

        let dir = tempfile::tempdir().unwrap();
        save_bundle(dir.path(), &training).unwrap();
        for tier in QualityTier::ALL {
            assert_eq!(load_model(dir.path(), tier).unwrap(), training.tiers[&tier]);
        }
    }

    proptest! {
        #[test]
        fn normalization_roundtrip(v in proptest::collection::vec(-100.0f64..100.0, 3), m in proptest::collection::vec(-5.0f64..5.0, 3), s in proptest::collection::vec(0.01f64..10.0, 3)) {
            let n = Normalizer { mean: m, std: s };
            let back = n.denormalize(&n.normalize(&v));
            for (a, b) in back.iter().zip(&v) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
