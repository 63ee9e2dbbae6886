//! Model rollouts: blind (fixed action sequence) and informed (state
//! feedback) trajectories, divergence against true trajectories, and the
//! model-based state value estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::env::{self, Action, EnvConfig, State};
use crate::error::{Error, Result};
use crate::model::{DynamicsModel, ModelWorkspace};
use crate::policy::{ActionSequence, Policy};

pub use crate::policy::{ConstantPolicy, LinearController, UniformRandomPolicy};

/// Simulated trajectory. `states` has one more entry than `actions` and
/// `rewards`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub states: Vec<State>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Step index of the terminal state that ended the rollout early.
    pub truncated_at: Option<usize>,
}

impl Rollout {
    fn start(s0: State, capacity: usize) -> Self {
        let mut states = Vec::with_capacity(capacity + 1);
        states.push(s0);
        Self {
            states,
            actions: Vec::with_capacity(capacity),
            rewards: Vec::with_capacity(capacity),
            truncated_at: None,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut ret = 0.0;
        let mut discount = 1.0;
        for r in &self.rewards {
            ret += discount * r;
            discount *= gamma;
        }
        ret
    }

    /// CSV with columns `step,x,xdot,theta,thetadot,action,reward`; the final
    /// state row leaves action and reward empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "x", "xdot", "theta", "thetadot", "action", "reward"])?;
        for (k, s) in self.states.iter().enumerate() {
            let mut row: Vec<String> = vec![k.to_string()];
            row.extend(s.to_array().iter().map(f64::to_string));
            match (self.actions.get(k), self.rewards.get(k)) {
                (Some(a), Some(r)) => {
                    row.push(a.index().to_string());
                    row.push(r.to_string());
                }
                _ => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Replays `actions` through the model without looking at the simulated
/// states.
pub fn rollout_blind(m: &DynamicsModel, s0: State, actions: &[Action]) -> Result<Rollout> {
    if actions.is_empty() {
        return Err(Error::InvalidArgument("blind rollout needs at least one action".into()));
    }
    let mut ws = ModelWorkspace::default();
    let mut out = Rollout::start(s0, actions.len());
    let mut s = s0;
    for &a in actions {
        let next = m.predict_next_ws(&s, a, &mut ws);
        out.rewards.push(m.predict_reward_ws(&s, a, &next, &mut ws));
        out.actions.push(a);
        out.states.push(next);
        s = next;
    }
    Ok(out)
}

/// Closed-loop model rollout: the policy sees every simulated state. With
/// `terminate`, the rollout stops at the first state that violates the
/// limits in `cfg`.
pub fn rollout_informed<P: Policy + ?Sized>(
    m: &DynamicsModel,
    s0: State,
    pi: &mut P,
    k_max: usize,
    terminate: bool,
    cfg: &EnvConfig,
) -> Result<Rollout> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be >= 1".into()));
    }
    let mut ws = ModelWorkspace::default();
    let mut out = Rollout::start(s0, k_max);
    let mut s = s0;
    for k in 0..k_max {
        if terminate && env::is_terminal(&s, cfg) {
            out.truncated_at = Some(k);
            break;
        }
        let a = pi.act(&s);
        let next = m.predict_next_ws(&s, a, &mut ws);
        out.rewards.push(m.predict_reward_ws(&s, a, &next, &mut ws));
        out.actions.push(a);
        out.states.push(next);
        s = next;
    }
    Ok(out)
}

/// The same closed-loop trajectory on the true environment.
pub fn true_trajectory<P: Policy + ?Sized>(
    s0: State,
    pi: &mut P,
    k_max: usize,
    terminate: bool,
    cfg: &EnvConfig,
) -> Rollout {
    let mut out = Rollout::start(s0, k_max);
    let mut s = s0;
    for k in 0..k_max {
        if terminate && env::is_terminal(&s, cfg) {
            out.truncated_at = Some(k);
            break;
        }
        let a = pi.act(&s);
        let next = env::physics_step(&s, a, cfg);
        out.rewards.push(env::transition_reward(&s, &next, cfg));
        out.actions.push(a);
        out.states.push(next);
        s = next;
    }
    out
}

/// Horizon, discount and termination rule of a model-based value estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueConfig {
    pub gamma: f64,
    pub horizon: usize,
    /// Stop summing once the simulated state leaves the permitted region.
    pub terminate: bool,
}

impl Default for ValueConfig {
    fn default() -> Self {
        Self { gamma: 0.99, horizon: 1000, terminate: true }
    }
}

impl ValueConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        Ok(())
    }
}

/// `sum_{k<K} gamma^k R(s_k, pi(s_k), s_{k+1})` along a closed-loop model
/// rollout from `s0`.
pub fn value_mb<P: Policy + ?Sized>(
    m: &DynamicsModel,
    s0: State,
    pi: &mut P,
    vc: &ValueConfig,
    cfg: &EnvConfig,
) -> f64 {
    value_mb_ws(m, s0, pi, vc, cfg, &mut ModelWorkspace::default())
}

pub fn value_mb_ws<P: Policy + ?Sized>(
    m: &DynamicsModel,
    s0: State,
    pi: &mut P,
    vc: &ValueConfig,
    cfg: &EnvConfig,
    ws: &mut ModelWorkspace,
) -> f64 {
    let mut s = s0;
    let mut ret = 0.0;
    let mut discount = 1.0;
    for _ in 0..vc.horizon {
        if vc.terminate && env::is_terminal(&s, cfg) {
            break;
        }
        let a = pi.act(&s);
        let next = m.predict_next_ws(&s, a, ws);
        ret += discount * m.predict_reward_ws(&s, a, &next, ws);
        discount *= vc.gamma;
        s = next;
    }
    ret
}

/// [`value_mb`] for many start states; each rollout gets its own policy clone.
pub fn value_mb_batch<P>(m: &DynamicsModel, starts: &[State], pi: &P, vc: &ValueConfig, cfg: &EnvConfig) -> Vec<f64>
where
    P: Policy + Clone + Send + Sync,
{
    starts
        .par_iter()
        .map_init(ModelWorkspace::default, |ws, s| value_mb_ws(m, *s, &mut pi.clone(), vc, cfg, ws))
        .collect()
}

/// Per-step Euclidean distance between two trajectories after dividing each
/// state variable by `scale`, up to the shorter length.
pub fn divergence_profile(true_traj: &Rollout, model_traj: &Rollout, scale: &[f64; 4]) -> Result<Vec<f64>> {
    let (a0, b0) = (true_traj.states[0], model_traj.states[0]);
    if a0 != b0 {
        return Err(Error::InvalidArgument(format!("start states differ: {a0:?} vs {b0:?}")));
    }
    Ok(true_traj
        .states
        .iter()
        .zip(&model_traj.states)
        .map(|(a, b)| {
            let (a, b) = (a.to_array(), b.to_array());
            (0..4).map(|i| ((a[i] - b[i]) / scale[i]).powi(2)).sum::<f64>().sqrt()
        })
        .collect())
}

/// Mean of `profile[lo..hi]` (clamped to the profile length).
pub fn window_mean(profile: &[f64], lo: usize, hi: usize) -> f64 {
    let hi = hi.min(profile.len());
    if lo >= hi {
        return f64::NAN;
    }
    profile[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
}

pub fn write_divergence_csv<W: Write>(profile: &[f64], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "divergence"])?;
    for (k, d) in profile.iter().enumerate() {
        out.write_record([k.to_string(), d.to_string()])?;
    }
    out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Blind and informed model trajectories from one start state, both compared
/// with the policy's true trajectory. The blind rollout replays the true
/// trajectory's actions.
#[derive(Clone, Debug)]
pub struct RolloutComparison {
    pub truth: Rollout,
    pub blind: Rollout,
    pub informed: Rollout,
    pub blind_divergence: Vec<f64>,
    pub informed_divergence: Vec<f64>,
}

pub fn compare_rollouts<P: Policy + Clone>(
    m: &DynamicsModel,
    s0: State,
    pi: &P,
    steps: usize,
    cfg: &EnvConfig,
    scale: &[f64; 4],
) -> Result<RolloutComparison> {
    let truth = true_trajectory(s0, &mut pi.clone(), steps, false, cfg);
    let blind = rollout_blind(m, s0, &truth.actions)?;
    let informed = rollout_informed(m, s0, &mut pi.clone(), steps, false, cfg)?;
    let blind_divergence = divergence_profile(&truth, &blind, scale)?;
    let informed_divergence = divergence_profile(&truth, &informed, scale)?;
    Ok(RolloutComparison { truth, blind, informed, blind_divergence, informed_divergence })
}

/// Blind rollout expressed as an informed rollout of an [`ActionSequence`].
pub fn rollout_sequence(m: &DynamicsModel, s0: State, actions: &[Action], cfg: &EnvConfig) -> Result<Rollout> {
    let mut seq = ActionSequence::new(actions.to_vec());
    rollout_informed(m, s0, &mut seq, actions.len(), false, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Normalizer;
    use crate::neural::Mlp;
    use proptest::prelude::*;

    /// Zero transition networks and a reward network that always emits 1.
    fn constant_reward_model() -> DynamicsModel {
        let mut m = DynamicsModel::zeros();
        m.reward_target = Normalizer { mean: vec![1.0], std: vec![1.0] };
        m
    }

    /// Small random model with non-trivial dynamics for algebraic identities.
    fn random_model(seed: u64) -> DynamicsModel {
        let mut m = DynamicsModel::zeros();
        for (i, net) in m.sub_models.iter_mut().enumerate() {
            *net = Mlp::he_uniform(&[5, 16, 1], seed + i as u64).unwrap();
        }
        m.reward_model = Mlp::he_uniform(&[9, 16, 1], seed + 10).unwrap();
        m.delta_scale = Normalizer { mean: vec![0.0; 4], std: vec![0.01, 0.1, 0.01, 0.1] };
        m
    }

    #[test]
    fn zero_model_blind_rollout_is_constant() {
        let m = DynamicsModel::zeros();
        let s0 = State::new(0.1, 0.2, -0.03, 0.4);
        let r = rollout_blind(&m, s0, &[Action::Left, Action::Right, Action::Left]).unwrap();
        assert!(r.states.iter().all(|s| *s == s0));
        assert_eq!(r.len(), 3);
        assert_eq!(rollout_blind(&m, s0, &[Action::Left]).unwrap().len(), 1);
        assert!(rollout_blind(&m, s0, &[]).is_err());
    }

    #[test]
    fn single_step_informed_matches_predict_next() {
        let m = random_model(3);
        let cfg = EnvConfig::default();
        let s0 = State::new(0.01, 0.0, 0.02, -0.1);
        let mut pi = LinearController::BALANCING;
        let r = rollout_informed(&m, s0, &mut pi, 1, true, &cfg).unwrap();
        let a = { LinearController::BALANCING }.act(&s0);
        assert_eq!(r.states, vec![s0, m.predict_next(&s0, a)]);
    }

    #[test]
    fn termination_truncates() {
        let m = DynamicsModel::zeros();
        let cfg = EnvConfig::default();
        let r = rollout_informed(&m, State::new(3.0, 0.0, 0.0, 0.0), &mut ConstantPolicy(Action::Left), 10, true, &cfg)
            .unwrap();
        assert_eq!(r.truncated_at, Some(0));
        assert!(r.is_empty());
        let r = rollout_informed(&m, State::new(3.0, 0.0, 0.0, 0.0), &mut ConstantPolicy(Action::Left), 10, false, &cfg)
            .unwrap();
        assert_eq!(r.len(), 10);
    }

    #[test]
    fn single_term_value() {
        let m = random_model(5);
        let cfg = EnvConfig::default();
        let s0 = State::new(0.0, 0.1, 0.01, 0.0);
        let vc = ValueConfig { gamma: 0.5, horizon: 1, terminate: true };
        let a = { LinearController::BALANCING }.act(&s0);
        let expected = m.predict_reward(&s0, a, &m.predict_next(&s0, a));
        assert_eq!(value_mb(&m, s0, &mut { LinearController::BALANCING }, &vc, &cfg), expected);
    }

    #[test]
    fn constant_reward_geometric_sum() {
        let m = constant_reward_model();
        let cfg = EnvConfig::default();
        let vc = ValueConfig { gamma: 0.99, horizon: 1000, terminate: true };
        let v = value_mb(&m, State::default(), &mut ConstantPolicy(Action::Left), &vc, &cfg);
        let closed = (1.0 - 0.99f64.powi(1000)) / 0.01;
        assert!((v - closed).abs() < 1e-9, "{v} vs {closed}");
        assert!((closed - 99.99568).abs() < 1e-5);
    }

    #[test]
    fn divergence_basics() {
        let m = DynamicsModel::zeros();
        let s0 = State::default();
        let a = rollout_blind(&m, s0, &[Action::Left; 10]).unwrap();
        let scale = [1.0; 4];
        assert!(divergence_profile(&a, &a, &scale).unwrap().iter().all(|&d| d == 0.0));
        let mut b = a.clone();
        b.states[7].theta += 0.5;
        let p = divergence_profile(&a, &b, &scale).unwrap();
        for (k, d) in p.iter().enumerate() {
            if k == 7 {
                assert_eq!(*d, 0.5);
            } else {
                assert_eq!(*d, 0.0);
            }
        }
        let mut c = a.clone();
        c.states[0].x = 1.0;
        assert!(divergence_profile(&a, &c, &scale).is_err());
    }

    #[test]
    fn rollout_csv_has_header_and_rows() {
        let r = rollout_blind(&DynamicsModel::zeros(), State::default(), &[Action::Right; 2]).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,x,xdot,theta,thetadot,action,reward");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], "2,0,0,0,0,,");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn blind_equals_positional_informed(seed in 0u64..1000, bits in proptest::collection::vec(any::<bool>(), 1..60)) {
            let m = random_model(seed);
            let actions: Vec<Action> = bits.iter().map(|&b| if b { Action::Right } else { Action::Left }).collect();
            let s0 = State::new(0.01, -0.02, 0.03, 0.0);
            let blind = rollout_blind(&m, s0, &actions).unwrap();
            let informed = rollout_sequence(&m, s0, &actions, &EnvConfig::default()).unwrap();
            prop_assert_eq!(blind, informed);
        }

        #[test]
        fn value_telescopes(seed in 0u64..1000, k in 2usize..200, gamma in 0.5f64..1.0) {
            let m = random_model(seed);
            let cfg = EnvConfig::default();
            let s0 = State::new(0.02, 0.0, -0.01, 0.05);
            let mut pi = LinearController::BALANCING;
            let full = value_mb(&m, s0, &mut pi, &ValueConfig { gamma, horizon: k, terminate: true }, &cfg);
            let a = pi.act(&s0);
            let s1 = m.predict_next(&s0, a);
            let r0 = m.predict_reward(&s0, a, &s1);
            let tail = value_mb(&m, s1, &mut pi, &ValueConfig { gamma, horizon: k - 1, terminate: true }, &cfg);
            prop_assert!((full - (r0 + gamma * tail)).abs() <= 1e-9 * (1.0 + full.abs()));
        }
    }
}
