use rolloutq::data::{load_dataset, sidecar_path};
use rolloutq::experiment::{ExperimentConfig, Pipeline, Preset};
use rolloutq::learner::Algorithm;
use rolloutq::model::{load_manifest, QualityTier};
use rolloutq::schema;
use rolloutq::Error;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Preset::Desk);
    cfg.seeds = vec![1];
    cfg.horizon = 100;
    cfg.dataset.n_tuples = 1200;
    cfg.dynamics.train.max_epochs = 40;
    cfg.rollouts.n_starts = 2;
    cfg.rollouts.steps = 110;
    cfg.values.n_start_states = 15;
    cfg.values.true_max_steps = 200;
    cfg.values.n_fit_states = 60;
    cfg.values.fqe.iterations = 4;
    cfg.values.fitted.max_epochs = 20;
    cfg.learning.nfq_iterations = 2;
    cfg.learning.bsf_iterations = 2;
    cfg.learning.fit.epochs = 2;
    cfg.learning.eval.n_episodes = 4;
    cfg.learning.eval.max_steps = 60;
    cfg
}

#[test]
fn stages_emit_valid_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(), dir.path()).unwrap();
    let d = p.generate().unwrap();
    assert_eq!(load_dataset(&p.layout.dataset()).unwrap().tuples, d.tuples);
    assert!(sidecar_path(&p.layout.dataset()).exists());

    let errors = p.train_models().unwrap();
    let tiers: Vec<QualityTier> = errors[&1].iter().map(|e| e.tier).collect();
    assert_eq!(tiers, QualityTier::ALL.to_vec());
    assert_eq!(load_manifest(&p.layout.models(1)).unwrap().tiers, QualityTier::ALL.to_vec());
    for tier in QualityTier::ALL {
        p.load_model(1, tier).unwrap().validate().unwrap();
    }

    let div = p.rollout_compare().unwrap();
    assert_eq!(div[&1].len(), 4);
    let best = std::fs::read_to_string(p.layout.rollouts(1).join("best_informed.csv")).unwrap();
    assert_eq!(best.lines().next(), Some("step,divergence"));
    assert_eq!(best.lines().count(), 112);

    let values = p.evaluate_values().unwrap();
    assert_eq!((values.n_states, values.n_seeds), (15, 1));

    for algo in Algorithm::ALL {
        let s = p.learn(algo).unwrap();
        assert_eq!(s.iterations, 2);
        assert_eq!(s.optimal_ratio.stderr, None);
    }

    let report = p.report().unwrap();
    assert!(report.values.is_some());
    assert_eq!(report.learning.len(), 2);
    assert_eq!(report.csv_files_checked, 19);
    for (path, _) in schema::validate_tree(dir.path()).unwrap() {
        assert!(path.starts_with(dir.path()));
    }
    let md = std::fs::read_to_string(p.layout.report().join("report.md")).unwrap();
    assert!(md.contains("| MBRO |"));
}

#[test]
fn corrupted_csv_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(), dir.path()).unwrap();
    p.generate().unwrap();
    let path = p.layout.dataset();
    let text = std::fs::read_to_string(&path).unwrap();
    let broken = text.replacen("\n", "\n1,2,3\n", 2);
    std::fs::write(&path, broken).unwrap();
    assert!(matches!(schema::validate_tree(dir.path()), Err(Error::Parse { .. })));
    assert!(load_dataset(&path).is_err());
}

#[test]
fn config_written_to_output_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(), dir.path()).unwrap();
    let again = ExperimentConfig::load(&p.layout.config(), None).unwrap();
    assert_eq!(again, tiny());
}
