//! Fixtures for the criterion benchmarks under `benches/`.

use rolloutq::data::{generate_dataset, Dataset};
use rolloutq::env::EnvConfig;
use rolloutq::model::{DynamicsModel, Normalizer, REWARD_LAYERS, TRANSITION_LAYERS};
use rolloutq::neural::{Mlp, Samples};
use rolloutq::seeds;

/// A model with random networks and small deltas, so rollouts stay bounded.
pub fn random_model(seed: u64) -> DynamicsModel {
    let mut m = DynamicsModel::zeros();
    for (j, net) in m.sub_models.iter_mut().enumerate() {
        *net = Mlp::he_uniform(&TRANSITION_LAYERS, seeds::derive(seed, j as u64)).unwrap();
    }
    m.reward_model = Mlp::he_uniform(&REWARD_LAYERS, seeds::derive(seed, 4)).unwrap();
    m.delta_scale = Normalizer { mean: vec![0.0; 4], std: vec![1e-3; 4] };
    m
}

pub fn dataset(n: usize) -> Dataset {
    generate_dataset(n, 0, &EnvConfig::default()).unwrap()
}

/// `n` samples with inputs and targets taken from a deterministic pattern.
pub fn regression_samples(in_dim: usize, n: usize) -> Samples {
    let mut s = Samples::with_capacity(in_dim, 1, n);
    for i in 0..n {
        let x: Vec<f64> = (0..in_dim).map(|j| ((i * 7 + j * 13) % 17) as f64 / 8.5 - 1.0).collect();
        let t = x.iter().sum::<f64>().sin();
        s.push(&x, &[t]);
    }
    s
}
