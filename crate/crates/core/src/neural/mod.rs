//! Small feed-forward networks trained from scratch: forward pass,
//! backpropagation, Adam and mini-batch training with early stopping.

mod adam;
mod mlp;
mod train;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use mlp::{param_count, Checkpoint, Mlp, Workspace};
pub use train::{fit_epochs, train, TrainConfig, TrainResult};

use crate::error::{Error, Result};

/// Row-major regression samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Samples {
    in_dim: usize,
    out_dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Samples {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, inputs: Vec::new(), targets: Vec::new() }
    }

    pub fn with_capacity(in_dim: usize, out_dim: usize, n: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            inputs: Vec::with_capacity(n * in_dim),
            targets: Vec::with_capacity(n * out_dim),
        }
    }

    pub fn from_flat(in_dim: usize, out_dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 || inputs.len() % in_dim != 0 {
            return Err(Error::InvalidArgument("input buffer not a multiple of in_dim".into()));
        }
        let n = inputs.len() / in_dim;
        if targets.len() != n * out_dim {
            return Err(Error::DimensionMismatch { expected: n * out_dim, actual: targets.len() });
        }
        Ok(Self { in_dim, out_dim, inputs, targets })
    }

    pub fn push(&mut self, input: &[f64], target: &[f64]) {
        assert_eq!(input.len(), self.in_dim);
        assert_eq!(target.len(), self.out_dim);
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
    }

    pub fn len(&self) -> usize {
        if self.in_dim == 0 {
            0
        } else {
            self.inputs.len() / self.in_dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.in_dim..(i + 1) * self.in_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.out_dim..(i + 1) * self.out_dim]
    }

    pub fn targets_mut(&mut self) -> &mut [f64] {
        &mut self.targets
    }

    pub fn subset(&self, idx: &[usize]) -> Samples {
        let mut out = Samples::with_capacity(self.in_dim, self.out_dim, idx.len());
        for &i in idx {
            out.push(self.input(i), self.target(i));
        }
        out
    }

    fn check_against(&self, net: &Mlp) -> Result<()> {
        if self.in_dim != net.input_dim() {
            return Err(Error::DimensionMismatch { expected: net.input_dim(), actual: self.in_dim });
        }
        if self.out_dim != net.output_dim() {
            return Err(Error::DimensionMismatch { expected: net.output_dim(), actual: self.out_dim });
        }
        Ok(())
    }
}

/// Mean over samples of the summed squared output error.
pub fn mse(net: &Mlp, data: &Samples) -> Result<f64> {
    data.check_against(net)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    let mut ws = Workspace::for_net(net);
    let mut total = 0.0;
    for i in 0..data.len() {
        let y = net.forward_ws(data.input(i), &mut ws);
        total += y.iter().zip(data.target(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

/// Exact gradient of [`mse`] over the selected rows, by backpropagation.
/// Returns `(loss, gradient)`.
pub fn mse_gradient(net: &Mlp, data: &Samples) -> Result<(f64, Vec<f64>)> {
    data.check_against(net)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; net.num_params()];
    let mut ws = Workspace::for_net(net);
    let loss = batch_gradient(net, data, &idx, &mut grad, &mut ws);
    Ok((loss, grad))
}

/// Overwrites `grad` with the batch MSE gradient and returns the batch loss.
pub(crate) fn batch_gradient(
    net: &Mlp,
    data: &Samples,
    idx: &[usize],
    grad: &mut [f64],
    ws: &mut Workspace,
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / idx.len() as f64;
    let mut sq = 0.0;
    for &i in idx {
        sq += net.accumulate_sample_gradient(data.input(i), data.target(i), scale, grad, ws);
    }
    sq * scale
}
