use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Fully connected network with ReLU hidden layers and a linear output.
///
/// Parameters live in one flat buffer. Layer `l` stores its weight matrix
/// row-major as `[out][in]`, followed by its `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Reusable activation buffers for forward and backward passes.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    activations: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn for_net(net: &Mlp) -> Self {
        Self {
            activations: net.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: net.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn fits(&self, net: &Mlp) -> bool {
        self.activations.len() == net.layer_sizes.len()
            && self.activations.iter().zip(&net.layer_sizes).all(|(a, &n)| a.len() == n)
    }
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must have at least two positive entries, got {layer_sizes:?}"
            )));
        }
        Ok(Self { layer_sizes: layer_sizes.to_vec(), params: vec![0.0; param_count(layer_sizes)] })
    }

    /// He-uniform weights `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases.
    pub fn he_uniform(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in net.layer_sizes.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(layer_sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::DimensionMismatch { expected: net.params.len(), actual: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("parameters must be finite".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Weight matrix and bias vector of layer `l` (0-based).
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let offset: usize = param_count(&self.layer_sizes[..=l]);
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = &self.params[offset..offset + n_in * n_out];
        let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        (w, b)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), actual: input.len() });
        }
        let mut ws = Workspace::for_net(self);
        Ok(self.forward_ws(input, &mut ws).to_vec())
    }

    /// Forward pass into a caller-owned workspace. Panics on a dimension
    /// mismatch; use [`Mlp::forward`] for checked input.
    pub fn forward_ws<'w>(&self, input: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
        assert_eq!(input.len(), self.input_dim());
        if !ws.fits(self) {
            *ws = Workspace::for_net(self);
        }
        ws.activations[0].copy_from_slice(input);
        let n_layers = self.layer_sizes.len() - 1;
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (w, rest) = self.params[offset..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (prev, next) = ws.activations.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut next[0];
            let hidden = l + 1 < n_layers;
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(x.iter()) {
                    acc += wi * xi;
                }
                y[o] = if hidden && acc < 0.0 { 0.0 } else { acc };
            }
            offset += n_in * n_out + n_out;
        }
        &ws.activations[n_layers]
    }

    /// Scalar output of a single-output network.
    pub fn predict_scalar(&self, input: &[f64], ws: &mut Workspace) -> f64 {
        debug_assert_eq!(self.output_dim(), 1);
        self.forward_ws(input, ws)[0]
    }

    /// Accumulates `scale * d(sum_j (y_j - t_j)^2)/d(params)` for one sample
    /// into `grad` and returns the sample's squared error.
    pub(crate) fn accumulate_sample_gradient(
        &self,
        input: &[f64],
        target: &[f64],
        scale: f64,
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        self.forward_ws(input, ws);
        let n_layers = self.layer_sizes.len() - 1;
        let mut sq = 0.0;
        {
            let out = &ws.activations[n_layers];
            let d = &mut ws.deltas[n_layers];
            for j in 0..out.len() {
                let r = out[j] - target[j];
                sq += r * r;
                d[j] = 2.0 * r * scale;
            }
        }
        let mut offset = self.params.len();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            let w = &self.params[offset..offset + n_in * n_out];
            let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let (d_lo, d_hi) = ws.deltas.split_at_mut(l + 1);
            let d = &d_hi[0];
            let a_prev = &ws.activations[l];
            for o in 0..n_out {
                let dv = d[o];
                gb[o] += dv;
                if dv != 0.0 {
                    let grow = &mut gw[o * n_in..(o + 1) * n_in];
                    for (g, a) in grow.iter_mut().zip(a_prev.iter()) {
                        *g += dv * a;
                    }
                }
            }
            if l > 0 {
                let d_prev = &mut d_lo[l];
                for i in 0..n_in {
                    if a_prev[i] > 0.0 {
                        let mut acc = 0.0;
                        for o in 0..n_out {
                            acc += w[o * n_in + i] * d[o];
                        }
                        d_prev[i] = acc;
                    } else {
                        d_prev[i] = 0.0;
                    }
                }
            }
        }
        sq
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            layer_sizes: self.layer_sizes.clone(),
            params: self.params.iter().map(|p| format!("{p:.16e}")).collect(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let params = c
            .params
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad parameter {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(&c.layer_sizes, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_checkpoint())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

/// On-disk network form. Parameters are decimal strings with 17 significant
/// digits, which round-trip every `f64` exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_sizes: Vec<usize>,
    pub params: Vec<String>,
}
