//! Policies mapping cart-pole states to actions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, State};

/// A (possibly stateful) decision rule.
///
/// `reset` is called at the start of every episode or rollout; stateless
/// policies ignore it. Policies used from parallel code are cloned per task.
pub trait Policy {
    fn act(&mut self, state: &State) -> Action;

    fn reset(&mut self, _seed: u64) {}
}

impl<P: Policy + ?Sized> Policy for &mut P {
    fn act(&mut self, state: &State) -> Action {
        (**self).act(state)
    }

    fn reset(&mut self, seed: u64) {
        (**self).reset(seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConstantPolicy(pub Action);

impl Policy for ConstantPolicy {
    fn act(&mut self, _state: &State) -> Action {
        self.0
    }
}

/// Uniform coin flip per step, reseeded per episode from `(base_seed, seed)`.
#[derive(Clone, Debug)]
pub struct UniformRandomPolicy {
    base_seed: u64,
    rng: ChaCha8Rng,
}

impl UniformRandomPolicy {
    pub fn new(base_seed: u64) -> Self {
        Self { base_seed, rng: ChaCha8Rng::seed_from_u64(base_seed) }
    }
}

impl Policy for UniformRandomPolicy {
    fn act(&mut self, _state: &State) -> Action {
        if self.rng.gen::<bool>() {
            Action::Right
        } else {
            Action::Left
        }
    }

    fn reset(&mut self, seed: u64) {
        let mixed = self.base_seed.rotate_left(32) ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        self.rng = ChaCha8Rng::seed_from_u64(mixed);
    }
}

/// Blind policy: replays a fixed action list positionally, ignoring the state.
/// Past the end of the list the final action is repeated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionSequence {
    actions: Vec<Action>,
    cursor: usize,
}

impl ActionSequence {
    pub fn new(actions: Vec<Action>) -> Self {
        assert!(!actions.is_empty(), "action sequence must be non-empty");
        Self { actions, cursor: 0 }
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }
}

impl Policy for ActionSequence {
    fn act(&mut self, _state: &State) -> Action {
        let a = self.actions[self.cursor.min(self.actions.len() - 1)];
        self.cursor += 1;
        a
    }

    fn reset(&mut self, _seed: u64) {
        self.cursor = 0;
    }
}

/// Bang-bang state-feedback controller: push right iff `gains . s + bias > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearController {
    pub gains: [f64; 4],
    #[serde(default)]
    pub bias: f64,
}

impl LinearController {
    /// Keeps the pole upright and the cart near the middle of the track
    /// indefinitely from any reset state.
    pub const BALANCING: LinearController =
        LinearController { gains: [0.1, 0.3, 3.0, 1.0], bias: 0.0 };

    /// Balances the pole only; the cart drifts and eventually leaves the
    /// track, so returns vary strongly with the start state.
    pub const POLE_ONLY: LinearController =
        LinearController { gains: [0.0, 0.0, 1.0, 0.5], bias: 0.0 };
}

impl Policy for LinearController {
    fn act(&mut self, s: &State) -> Action {
        let z = self.gains[0] * s.x
            + self.gains[1] * s.x_dot
            + self.gains[2] * s.theta
            + self.gains[3] * s.theta_dot
            + self.bias;
        if z > 0.0 {
            Action::Right
        } else {
            Action::Left
        }
    }
}
