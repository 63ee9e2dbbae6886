use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::env::{Action, State};
use crate::error::{Error, Result};
use crate::model::Normalizer;
use crate::neural::{Checkpoint, Mlp, Samples, Workspace};
use crate::policy::Policy;

pub const Q_LAYERS: [usize; 3] = [5, 64, 1];

/// `Q(s, a) = output_offset + output_scale * net(z(s), a)` with z-scored
/// state inputs and the raw 0/1 action as fifth input.
#[derive(Clone, Debug, PartialEq)]
pub struct QFunction {
    pub net: Mlp,
    pub state_input: Normalizer,
    pub output_scale: f64,
    pub output_offset: f64,
}

impl QFunction {
    pub fn new(net: Mlp, state_input: Normalizer, output_scale: f64) -> Result<Self> {
        if net.input_dim() != 5 || net.output_dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "Q network must map 5 inputs to 1 output, got {:?}",
                net.layer_sizes()
            )));
        }
        if state_input.dim() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, actual: state_input.dim() });
        }
        if !(output_scale.is_finite() && output_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("output scale must be positive, got {output_scale}")));
        }
        Ok(Self { net, state_input, output_scale, output_offset: 0.0 })
    }

    pub fn with_offset(mut self, output_offset: f64) -> Self {
        self.output_offset = output_offset;
        self
    }

    /// Maps a value to the network's output space.
    pub fn to_net_target(&self, value: f64) -> f64 {
        (value - self.output_offset) / self.output_scale
    }

    /// The identically-zero Q-function.
    pub fn zeros() -> Self {
        Self { net: Mlp::zeros(&Q_LAYERS).unwrap(), state_input: Normalizer::identity(4), output_scale: 1.0, output_offset: 0.0 }
    }

    pub fn features(&self, s: &State, a: Action) -> [f64; 5] {
        let mut f = [0.0; 5];
        self.state_input.normalize_into(&s.to_array(), &mut f[..4]);
        f[4] = a.as_f64();
        f
    }

    pub fn value_ws(&self, s: &State, a: Action, ws: &mut Workspace) -> f64 {
        let f = self.features(s, a);
        self.output_offset + self.output_scale * self.net.predict_scalar(&f, ws)
    }

    pub fn value(&self, s: &State, a: Action) -> f64 {
        self.value_ws(s, a, &mut Workspace::default())
    }

    /// `[Q(s, left), Q(s, right)]`. Single-hidden-layer networks share the
    /// state part of the first layer between both actions.
    pub fn values_ws(&self, s: &State, ws: &mut Workspace) -> [f64; 2] {
        if self.net.layer_sizes().len() != 3 {
            return [self.value_ws(s, Action::Left, ws), self.value_ws(s, Action::Right, ws)];
        }
        let f = self.features(s, Action::Left);
        let (w1, b1) = self.net.layer(0);
        let (w2, b2) = self.net.layer(1);
        let mut out = [b2[0], b2[0]];
        for h in 0..b1.len() {
            let row = &w1[h * 5..h * 5 + 5];
            let pre = b1[h] + row[0] * f[0] + row[1] * f[1] + row[2] * f[2] + row[3] * f[3];
            let pre_right = pre + row[4];
            if pre > 0.0 {
                out[0] += w2[h] * pre;
            }
            if pre_right > 0.0 {
                out[1] += w2[h] * pre_right;
            }
        }
        [
            self.output_offset + self.output_scale * out[0],
            self.output_offset + self.output_scale * out[1],
        ]
    }

    pub fn values(&self, s: &State) -> [f64; 2] {
        self.values_ws(s, &mut Workspace::default())
    }

    /// Greedy action; ties go to [`Action::Left`].
    pub fn argmax(&self, s: &State, ws: &mut Workspace) -> Action {
        let [l, r] = self.values_ws(s, ws);
        if r > l {
            Action::Right
        } else {
            Action::Left
        }
    }

    pub fn max_value(&self, s: &State, ws: &mut Workspace) -> f64 {
        let [l, r] = self.values_ws(s, ws);
        l.max(r)
    }

    /// Network inputs for `(state, action)` pairs, targets left at zero.
    pub fn design(&self, pairs: impl Iterator<Item = (State, Action)>) -> Samples {
        let mut s = Samples::new(5, 1);
        for (st, a) in pairs {
            s.push(&self.features(&st, a), &[0.0]);
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = QFile {
            net: self.net.to_checkpoint(),
            state_input: self.state_input.clone(),
            output_scale: self.output_scale,
            output_offset: self.output_offset,
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: QFile = serde_json::from_str(&text)?;
        Ok(Self::new(Mlp::from_checkpoint(&file.net)?, file.state_input, file.output_scale)?.with_offset(file.output_offset))
    }
}

#[derive(Serialize, Deserialize)]
struct QFile {
    net: Checkpoint,
    state_input: Normalizer,
    output_scale: f64,
    #[serde(default)]
    output_offset: f64,
}

/// `pi(s) = argmax_a Q(s, a)`, ties broken toward [`Action::Left`].
#[derive(Clone, Debug)]
pub struct GreedyPolicy<'q> {
    q: &'q QFunction,
    ws: Workspace,
}

impl<'q> GreedyPolicy<'q> {
    pub fn new(q: &'q QFunction) -> Self {
        Self { q, ws: Workspace::for_net(&q.net) }
    }

    pub fn q(&self) -> &QFunction {
        self.q
    }
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, s: &State) -> Action {
        self.q.argmax(s, &mut self.ws)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_q(seed: u64) -> QFunction {
        QFunction::new(
            Mlp::he_uniform(&Q_LAYERS, seed).unwrap(),
            Normalizer { mean: vec![0.0, 0.1, 0.0, -0.1], std: vec![0.2, 0.5, 0.1, 0.8] },
            3.0,
        )
        .unwrap()
        .with_offset(-1.5)
    }

    #[test]
    fn zero_q_is_zero_and_picks_left() {
        let q = QFunction::zeros();
        let s = State::new(0.3, 0.0, -0.1, 1.0);
        assert_eq!(q.values(&s), [0.0, 0.0]);
        assert_eq!(GreedyPolicy::new(&q).act(&s), Action::Left);
    }

    proptest! {
        #[test]
        fn shared_first_layer_matches_forward(seed in 0u64..500, x in -2.0f64..2.0, t in -0.2f64..0.2) {
            let q = random_q(seed);
            let s = State::new(x, 0.3, t, -0.4);
            let fast = q.values(&s);
            prop_assert!((fast[0] - q.value(&s, Action::Left)).abs() < 1e-12);
            prop_assert!((fast[1] - q.value(&s, Action::Right)).abs() < 1e-12);
        }

        #[test]
        fn greedy_ignores_constant_shift(seed in 0u64..500, c in -50.0f64..50.0, x in -2.0f64..2.0, t in -0.2f64..0.2) {
            let q = random_q(seed);
            let mut shifted = q.clone();
            // The output bias is the last parameter.
            let n = shifted.net.num_params();
            shifted.net.params_mut()[n - 1] += c / shifted.output_scale;
            let s = State::new(x, -0.1, t, 0.2);
            prop_assert_eq!(GreedyPolicy::new(&q).act(&s), GreedyPolicy::new(&shifted).act(&s));
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let q = random_q(1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.json");
        q.save(&p).unwrap();
        assert_eq!(QFunction::load(&p).unwrap(), q);
    }
}
