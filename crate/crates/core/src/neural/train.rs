use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{batch_gradient, mse, AdamState, Mlp, Samples, Workspace};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub checkpoint_epochs: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 100,
            patience_epochs: 100,
            max_epochs: 2000,
            checkpoint_epochs: vec![1, 10, 100],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.patience_epochs == 0 {
            return Err(Error::InvalidArgument("patience_epochs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub best_params: Mlp,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Parameters after each reached epoch listed in `checkpoint_epochs`.
    pub checkpoints: BTreeMap<usize, Mlp>,
    /// Index `e` holds the loss after `e` completed epochs; index 0 is the
    /// untrained network.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub stopped_epoch: usize,
}

impl TrainResult {
    /// Running minimum of the validation curve.
    pub fn running_best(&self) -> Vec<f64> {
        self.val_loss
            .iter()
            .scan(f64::INFINITY, |best, &v| {
                *best = best.min(v);
                Some(*best)
            })
            .collect()
    }
}

struct EpochRunner {
    adam: AdamState,
    order: Vec<usize>,
    grad: Vec<f64>,
    ws: Workspace,
    rng: ChaCha8Rng,
}

impl EpochRunner {
    fn new(net: &Mlp, n: usize, seed: u64) -> Self {
        Self {
            adam: AdamState::new(net.num_params()),
            order: (0..n).collect(),
            grad: vec![0.0; net.num_params()],
            ws: Workspace::for_net(net),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One shuffled pass of mini-batch Adam. The trailing partial batch is
    /// used. Returns the sample-weighted mean batch loss.
    fn run(&mut self, net: &mut Mlp, data: &Samples, lr: f64, batch_size: usize) -> Result<f64> {
        self.order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in self.order.chunks(batch_size) {
            let loss = batch_gradient(net, data, chunk, &mut self.grad, &mut self.ws);
            total += loss * chunk.len() as f64;
            self.adam.step(net.params_mut(), &self.grad, lr)?;
        }
        Ok(total / data.len() as f64)
    }
}

/// Mini-batch Adam with early stopping on the validation loss.
///
/// Improvement means strictly lower than the best validation loss so far;
/// training stops once `patience_epochs` epochs pass without one.
pub fn train(net: Mlp, train_set: &Samples, val_set: &Samples, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    let mut net = net;
    let initial_val = mse(&net, val_set)?;
    let initial_train = mse(&net, train_set)?;
    if !initial_val.is_finite() || !initial_train.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, message: "initial loss is not finite".into() });
    }

    let mut runner = EpochRunner::new(&net, train_set.len(), cfg.seed);
    let mut result = TrainResult {
        best_params: net.clone(),
        best_epoch: 0,
        best_val_loss: initial_val,
        checkpoints: BTreeMap::new(),
        train_loss: vec![initial_train],
        val_loss: vec![initial_val],
        stopped_epoch: 0,
    };

    for epoch in 1..=cfg.max_epochs {
        let train_loss = runner.run(&mut net, train_set, cfg.learning_rate, cfg.batch_size)?;
        let val_loss = mse(&net, val_set)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                message: format!("train loss {train_loss}, validation loss {val_loss}"),
            });
        }
        result.train_loss.push(train_loss);
        result.val_loss.push(val_loss);
        result.stopped_epoch = epoch;
        if val_loss < result.best_val_loss {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            result.best_params = net.clone();
        }
        if cfg.checkpoint_epochs.contains(&epoch) {
            result.checkpoints.insert(epoch, net.clone());
        }
        if epoch - result.best_epoch >= cfg.patience_epochs {
            break;
        }
    }
    Ok(result)
}

/// Fixed-budget training without validation; returns the final network and
/// the per-epoch training loss.
pub fn fit_epochs(
    net: Mlp,
    data: &Samples,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> Result<(Mlp, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set must be non-empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut net = net;
    let mut runner = EpochRunner::new(&net, data.len(), seed);
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let loss = runner.run(&mut net, data, learning_rate, batch_size)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, message: format!("train loss {loss}") });
        }
        losses.push(loss);
    }
    Ok((net, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn linear_task(n: usize, seed: u64) -> Samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Samples::new(3, 1);
        for _ in 0..n {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = 2.0 * x[0] - 1.0 * x[1] + 0.5 * x[2] + 0.3;
            s.push(&x, &[y]);
        }
        s
    }

    #[test]
    fn stops_immediately_when_already_exact() {
        let net = Mlp::zeros(&[3, 4, 1]).unwrap();
        let mut data = Samples::new(3, 1);
        data.push(&[1.0, 2.0, 3.0], &[0.0]);
        data.push(&[-1.0, 0.0, 3.0], &[0.0]);
        let cfg = TrainConfig { patience_epochs: 1, ..Default::default() };
        let res = train(net, &data, &data, &cfg).unwrap();
        assert_eq!(res.stopped_epoch, 1);
        assert_eq!(res.best_epoch, 0);
    }

    #[test]
    fn checkpoints_at_requested_epochs() {
        let tr = linear_task(300, 1);
        let va = linear_task(100, 2);
        let cfg = TrainConfig { max_epochs: 120, patience_epochs: 1000, ..Default::default() };
        let res = train(Mlp::he_uniform(&[3, 8, 1], 0).unwrap(), &tr, &va, &cfg).unwrap();
        assert_eq!(res.checkpoints.keys().copied().collect::<Vec<_>>(), vec![1, 10, 100]);
        for ck in res.checkpoints.values() {
            assert!(res.best_val_loss <= mse(ck, &va).unwrap());
        }
        assert_eq!(mse(&res.best_params, &va).unwrap(), res.best_val_loss);
        assert_eq!(res.val_loss.len(), 121);
        let rb = res.running_best();
        assert!(rb.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn loss_drops_on_linear_regression() {
        let tr = linear_task(500, 3);
        let va = linear_task(200, 4);
        let cfg = TrainConfig { max_epochs: 200, ..Default::default() };
        let res = train(Mlp::he_uniform(&[3, 16, 1], 5).unwrap(), &tr, &va, &cfg).unwrap();
        let final_train = mse(&res.best_params, &tr).unwrap();
        assert!(final_train < 0.01 * res.train_loss[0], "{final_train} vs {}", res.train_loss[0]);
    }

    #[test]
    fn same_seed_same_result() {
        let tr = linear_task(200, 3);
        let va = linear_task(50, 4);
        let cfg = TrainConfig { max_epochs: 30, seed: 9, ..Default::default() };
        let a = train(Mlp::he_uniform(&[3, 8, 1], 1).unwrap(), &tr, &va, &cfg).unwrap();
        let b = train(Mlp::he_uniform(&[3, 8, 1], 1).unwrap(), &tr, &va, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut data = Samples::new(1, 1);
        data.push(&[1.0], &[f64::MAX]);
        data.push(&[2.0], &[f64::MAX]);
        let cfg = TrainConfig { max_epochs: 5, ..Default::default() };
        let err = train(Mlp::zeros(&[1, 1]).unwrap(), &data, &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    }

    #[test]
    fn empty_sets_rejected() {
        let data = linear_task(10, 0);
        let empty = Samples::new(3, 1);
        let cfg = TrainConfig::default();
        assert!(train(Mlp::zeros(&[3, 1]).unwrap(), &data, &empty, &cfg).is_err());
    }
}
