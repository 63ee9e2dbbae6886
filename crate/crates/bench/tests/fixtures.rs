use rolloutq::env::{EnvConfig, State};
use rolloutq::policy::LinearController;
use rolloutq::rollout::{value_mb, ValueConfig};
use rolloutq_bench::{dataset, random_model, regression_samples};

#[test]
fn random_model_rollouts_stay_finite() {
    let m = random_model(3);
    m.validate().unwrap();
    let vc = ValueConfig { gamma: 0.99, horizon: 1000, terminate: false };
    let v = value_mb(&m, State::default(), &mut { LinearController::BALANCING }, &vc, &EnvConfig::default());
    assert!(v.is_finite());
}

#[test]
fn fixtures_have_requested_sizes() {
    assert_eq!(dataset(300).len(), 300);
    let s = regression_samples(5, 40);
    assert_eq!((s.len(), s.in_dim()), (40, 5));
}
