//! Cart-pole ground-truth simulator.
//!
//! Dynamics follow the Gymnasium `CartPole-v1` explicit-Euler integrator. The
//! reward is the quadratic center-seeking reward
//! `r = (1 - (x / x_limit)^2 + 1 - (theta / theta_limit)^2) / 2`,
//! which is 1 with the pole upright in the middle of the track and 0 at the
//! corner of the permitted region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::Policy;

/// Cart-pole state `(x, x_dot, theta, theta_dot)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl State {
    pub const DIM: usize = 4;

    pub const fn new(x: f64, x_dot: f64, theta: f64, theta_dot: f64) -> Self {
        Self { x, x_dot, theta, theta_dot }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Component-wise negation, the mirror image of the state.
    pub fn mirrored(self) -> Self {
        Self::new(-self.x, -self.x_dot, -self.theta, -self.theta_dot)
    }
}

/// Discrete push direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Action::Left),
            1 => Ok(Action::Right),
            other => Err(Error::InvalidArgument(format!("action must be 0 or 1, got {other}"))),
        }
    }

    /// Encoding used as a network input feature.
    pub fn as_f64(self) -> f64 {
        self.index() as f64
    }

    pub fn flipped(self) -> Self {
        match self {
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }
}

/// Which state of a transition the reward is computed on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardOn {
    #[default]
    Successor,
    Current,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub force_magnitude: f64,
    pub time_step: f64,
    pub x_limit: f64,
    pub theta_limit: f64,
    pub init_range: f64,
    pub reward_on: RewardOn,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_magnitude: 10.0,
            time_step: 0.02,
            x_limit: 2.4,
            theta_limit: 0.2095,
            init_range: 0.05,
            reward_on: RewardOn::Successor,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gravity", self.gravity),
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_half_length", self.pole_half_length),
            ("force_magnitude", self.force_magnitude),
            ("time_step", self.time_step),
            ("x_limit", self.x_limit),
            ("theta_limit", self.theta_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.init_range.is_finite() && self.init_range >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "init_range must be non-negative, got {}",
                self.init_range
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("EnvConfig is always representable as TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

/// One explicit-Euler step of the cart-pole equations of motion.
pub fn physics_step(s: &State, a: Action, cfg: &EnvConfig) -> State {
    let force = match a {
        Action::Right => cfg.force_magnitude,
        Action::Left => -cfg.force_magnitude,
    };
    let total_mass = cfg.cart_mass + cfg.pole_mass;
    let pole_mass_length = cfg.pole_mass * cfg.pole_half_length;
    let (sin_t, cos_t) = s.theta.sin_cos();

    let temp = (force + pole_mass_length * s.theta_dot * s.theta_dot * sin_t) / total_mass;
    let theta_acc = (cfg.gravity * sin_t - cos_t * temp)
        / (cfg.pole_half_length * (4.0 / 3.0 - cfg.pole_mass * cos_t * cos_t / total_mass));
    let x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;

    let tau = cfg.time_step;
    State {
        x: s.x + tau * s.x_dot,
        x_dot: s.x_dot + tau * x_acc,
        theta: s.theta + tau * s.theta_dot,
        theta_dot: s.theta_dot + tau * theta_acc,
    }
}

pub fn is_terminal(s: &State, cfg: &EnvConfig) -> bool {
    s.x.abs() > cfg.x_limit || s.theta.abs() > cfg.theta_limit
}

/// Quadratic reward evaluated on a single state.
pub fn reward(s: &State, cfg: &EnvConfig) -> f64 {
    let px = s.x / cfg.x_limit;
    let pt = s.theta / cfg.theta_limit;
    (1.0 - px * px + 1.0 - pt * pt) / 2.0
}

/// Reward of the transition `s -> s_next`, honoring [`EnvConfig::reward_on`].
pub fn transition_reward(s: &State, s_next: &State, cfg: &EnvConfig) -> f64 {
    match cfg.reward_on {
        RewardOn::Successor => reward(s_next, cfg),
        RewardOn::Current => reward(s, cfg),
    }
}

/// Initial state with every component uniform in `[-init_range, init_range]`.
pub fn reset(seed: u64, cfg: &EnvConfig) -> State {
    let r = cfg.init_range;
    if r == 0.0 {
        return State::default();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    State::new(
        rng.gen_range(-r..=r),
        rng.gen_range(-r..=r),
        rng.gen_range(-r..=r),
        rng.gen_range(-r..=r),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub discounted_return: f64,
    pub steps: usize,
    pub reached_max_steps: bool,
}

/// Runs the true environment from `s0` under `policy`.
///
/// A start state that is already terminal yields a zero return and no steps.
/// The reward of the transition that enters a terminal state is counted.
pub fn run_from<P: Policy + ?Sized>(
    policy: &mut P,
    s0: State,
    max_steps: usize,
    gamma: f64,
    cfg: &EnvConfig,
) -> EpisodeResult {
    let mut s = s0;
    let mut ret = 0.0;
    let mut discount = 1.0;
    let mut steps = 0;
    while steps < max_steps && !is_terminal(&s, cfg) {
        let a = policy.act(&s);
        let next = physics_step(&s, a, cfg);
        ret += discount * transition_reward(&s, &next, cfg);
        discount *= gamma;
        s = next;
        steps += 1;
    }
    EpisodeResult { discounted_return: ret, steps, reached_max_steps: steps == max_steps }
}

/// Seeded episode: resets the environment and the policy with `seed`, then
/// runs until termination or `max_steps`.
pub fn run_episode<P: Policy + ?Sized>(
    policy: &mut P,
    seed: u64,
    max_steps: usize,
    gamma: f64,
    cfg: &EnvConfig,
) -> EpisodeResult {
    policy.reset(seed);
    run_from(policy, reset(seed, cfg), max_steps, gamma, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ConstantPolicy, UniformRandomPolicy};
    use proptest::prelude::*;

    /// Closed-form accelerations evaluated by hand for the zero state: with
    /// theta = 0 the centripetal term vanishes, so
    /// temp = F / M, theta_acc = -temp / (l (4/3 - m / M)), x_acc = temp - m l theta_acc / M.
    fn zero_state_oracle(force: f64) -> State {
        let (m_c, m_p, l, tau) = (1.0, 0.1, 0.5, 0.02);
        let big_m = m_c + m_p;
        let temp = force / big_m;
        let theta_acc = -temp / (l * (4.0 / 3.0 - m_p / big_m));
        let x_acc = temp - m_p * l * theta_acc / big_m;
        State::new(0.0, tau * x_acc, 0.0, tau * theta_acc)
    }

    #[test]
    fn zero_state_push_right_matches_hand_euler() {
        let cfg = EnvConfig::default();
        let next = physics_step(&State::default(), Action::Right, &cfg);
        let oracle = zero_state_oracle(10.0);
        // 10/1.1 = 9.0909..; theta_acc = -9.0909/(0.5*(4/3-0.0909)) = -14.6341..
        assert!((oracle.theta_dot - (-0.2926829268292683)).abs() < 1e-12);
        assert!((oracle.x_dot - 0.1951219512195122).abs() < 1e-12);
        for (a, b) in next.to_array().iter().zip(oracle.to_array()) {
            assert!((a - b).abs() < 1e-15, "{next:?} vs {oracle:?}");
        }
        assert!(next.x_dot > 0.0 && next.theta_dot < 0.0);
    }

    #[test]
    fn zero_state_actions_mirror() {
        let cfg = EnvConfig::default();
        let l = physics_step(&State::default(), Action::Left, &cfg);
        let r = physics_step(&State::default(), Action::Right, &cfg);
        assert_eq!(l, r.mirrored());
    }

    #[test]
    fn step_is_deterministic() {
        let cfg = EnvConfig::default();
        let s = State::new(0.1, -0.2, 0.03, 0.4);
        let a = physics_step(&s, Action::Left, &cfg);
        let b = physics_step(&s, Action::Left, &cfg);
        assert_eq!(a.to_array().map(f64::to_bits), b.to_array().map(f64::to_bits));
    }

    #[test]
    fn terminal_rule() {
        let cfg = EnvConfig::default();
        assert!(!is_terminal(&State::default(), &cfg));
        assert!(is_terminal(&State::new(2.5, 0.0, 0.0, 0.0), &cfg));
        assert!(is_terminal(&State::new(0.0, 0.0, 0.21, 0.0), &cfg));
        assert!(!is_terminal(&State::new(2.4, 0.0, 0.2095, 0.0), &cfg));
    }

    #[test]
    fn reward_values() {
        let cfg = EnvConfig::default();
        assert_eq!(reward(&State::default(), &cfg), 1.0);
        assert!((reward(&State::new(2.4, 0.0, 0.0, 0.0), &cfg) - 0.5).abs() < 1e-15);
        assert!(reward(&State::new(2.4, 0.0, 0.2095, 0.0), &cfg).abs() < 1e-15);
        assert!(reward(&State::new(3.0, 0.0, 0.3, 0.0), &cfg) < 0.0);
    }

    #[test]
    fn reward_switch_selects_state() {
        let mut cfg = EnvConfig::default();
        let s = State::new(1.2, 0.0, 0.0, 0.0);
        let n = State::default();
        assert_eq!(transition_reward(&s, &n, &cfg), 1.0);
        cfg.reward_on = RewardOn::Current;
        assert_eq!(transition_reward(&s, &n, &cfg), reward(&s, &cfg));
    }

    #[test]
    fn reset_contract() {
        let cfg = EnvConfig::default();
        for seed in 0..200 {
            let s = reset(seed, &cfg);
            assert!(s.to_array().iter().all(|v| v.abs() <= 0.05));
            assert_eq!(s, reset(seed, &cfg));
        }
        let zero = EnvConfig { init_range: 0.0, ..EnvConfig::default() };
        assert_eq!(reset(7, &zero), State::default());
    }

    #[test]
    fn one_step_episode_return() {
        let cfg = EnvConfig::default();
        let mut pi = ConstantPolicy(Action::Right);
        let res = run_episode(&mut pi, 3, 1, 0.99, &cfg);
        let s0 = reset(3, &cfg);
        let s1 = physics_step(&s0, Action::Right, &cfg);
        assert_eq!(res.steps, 1);
        assert!(res.reached_max_steps);
        assert_eq!(res.discounted_return, reward(&s1, &cfg));
    }

    #[test]
    fn terminal_start_gives_zero() {
        let cfg = EnvConfig::default();
        let mut pi = ConstantPolicy(Action::Left);
        let res = run_from(&mut pi, State::new(3.0, 0.0, 0.0, 0.0), 100, 0.99, &cfg);
        assert_eq!(res.steps, 0);
        assert_eq!(res.discounted_return, 0.0);
        assert!(!res.reached_max_steps);
    }

    #[test]
    fn random_policy_episode_length_near_reported_mean() {
        let cfg = EnvConfig::default();
        let n = 2000;
        let total: usize = (0..n)
            .map(|seed| {
                let mut pi = UniformRandomPolicy::new(0);
                run_episode(&mut pi, seed, 10_000, 1.0, &cfg).steps
            })
            .sum();
        let mean = total as f64 / n as f64;
        assert!((20.0..=25.0).contains(&mean), "mean length {mean}");
    }

    #[test]
    fn config_toml_roundtrip() {
        let cfg = EnvConfig { init_range: 0.01, reward_on: RewardOn::Current, ..Default::default() };
        assert_eq!(EnvConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = EnvConfig::from_toml("x_limit = 3.0\n").unwrap();
        assert_eq!(partial.x_limit, 3.0);
        assert_eq!(partial.theta_limit, 0.2095);
        assert!(EnvConfig::from_toml("gravity = -1.0\n").is_err());
    }

    proptest! {
        #[test]
        fn mirror_symmetry(x in -2.4f64..2.4, xd in -3.0f64..3.0, t in -0.3f64..0.3, td in -3.0f64..3.0, right in any::<bool>()) {
            let cfg = EnvConfig::default();
            let s = State::new(x, xd, t, td);
            let a = if right { Action::Right } else { Action::Left };
            let direct = physics_step(&s, a, &cfg).mirrored();
            let mirrored = physics_step(&s.mirrored(), a.flipped(), &cfg);
            for (p, q) in direct.to_array().iter().zip(mirrored.to_array()) {
                prop_assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()));
            }
        }

        #[test]
        fn reward_in_unit_interval_when_not_terminal(x in -2.4f64..=2.4, t in -0.2095f64..=0.2095) {
            let cfg = EnvConfig::default();
            let r = reward(&State::new(x, 0.0, t, 0.0), &cfg);
            prop_assert!((0.0..=1.0).contains(&r));
            if x != 0.0 || t != 0.0 {
                prop_assert!(r < 1.0);
            }
        }
    }
}
