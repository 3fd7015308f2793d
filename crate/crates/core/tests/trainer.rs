use std::fs;

use gauda_core::data::{gen_toy2d, Toy2dSpec};
use gauda_core::ensemble::EnsembleConfig;
use gauda_core::numeric::RngStream;
use gauda_core::trainer::{
    run_training, GaudaConfig, Policy, PolicyKind, RunOptions, Toy2dSimulator, TrainerConfig, TrainingData,
};

fn toy() -> (Toy2dSpec, TrainingData) {
    let spec = Toy2dSpec {
        n_major: 400,
        imbalance: 0.1,
        minority: 1,
        ..Toy2dSpec::default()
    };
    let data = gen_toy2d(&spec, &mut RngStream::new(3, 0)).unwrap();
    (spec, TrainingData::from_toy2d(&data))
}

fn config(kind: PolicyKind) -> TrainerConfig {
    TrainerConfig::new(
        Policy::new(kind, false),
        GaudaConfig {
            total_steps: 120,
            batch: 16,
            val_interval: 30,
            n_c: 1,
            synth_batch: 20,
            aug_probability: 0.0,
            ..GaudaConfig::default()
        },
        EnsembleConfig {
            members: 3,
            hidden: vec![8],
            dropout: 0.2,
            lr: 1e-2,
        },
    )
}

#[test]
fn identical_runs_write_identical_metrics() {
    let (spec, data) = toy();
    let sim = Toy2dSimulator(spec);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_training(
            &config(PolicyKind::Gauda),
            &data,
            RunOptions::new(5).with_run_dir(d.path(), false).with_synthesizer(&sim),
        )
        .unwrap();
    }
    let a = fs::read(dirs[0].path().join("metrics.csv")).unwrap();
    let b = fs::read(dirs[1].path().join("metrics.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (spec, data) = toy();
    let sim = Toy2dSimulator(spec);
    for kind in [PolicyKind::Gauda, PolicyKind::UncertaintyAs, PolicyKind::As] {
        let cfg = config(kind);
        let whole = tempfile::tempdir().unwrap();
        let full = run_training(
            &cfg,
            &data,
            RunOptions::new(9).with_run_dir(whole.path(), false).with_synthesizer(&sim),
        )
        .unwrap();
        assert!(full.completed);

        let split = tempfile::tempdir().unwrap();
        let mut opts = RunOptions::new(9).with_run_dir(split.path(), false).with_synthesizer(&sim);
        opts.halt_after = Some(60);
        let partial = run_training(&cfg, &data, opts).unwrap();
        assert!(!partial.completed);
        assert_eq!(partial.steps, 60);
        let resumed = run_training(
            &cfg,
            &data,
            RunOptions::new(9).with_run_dir(split.path(), true).with_synthesizer(&sim),
        )
        .unwrap();
        assert!(resumed.completed);
        assert_eq!(
            fs::read(whole.path().join("metrics.csv")).unwrap(),
            fs::read(split.path().join("metrics.csv")).unwrap(),
            "{kind:?}"
        );
        assert_eq!(full.test.unwrap().accuracy, resumed.test.unwrap().accuracy);
    }
}

#[test]
fn resuming_a_finished_run_does_not_retrain() {
    let (_, data) = toy();
    let cfg = config(PolicyKind::None);
    let dir = tempfile::tempdir().unwrap();
    let first = run_training(&cfg, &data, RunOptions::new(1).with_run_dir(dir.path(), false)).unwrap();
    let before = fs::read(dir.path().join("metrics.csv")).unwrap();
    let again = run_training(&cfg, &data, RunOptions::new(1).with_run_dir(dir.path(), true)).unwrap();
    assert_eq!(before, fs::read(dir.path().join("metrics.csv")).unwrap());
    assert_eq!(first.test.unwrap().accuracy, again.test.unwrap().accuracy);
}

#[test]
fn resume_rejects_a_changed_config() {
    let (_, data) = toy();
    let dir = tempfile::tempdir().unwrap();
    let mut opts = RunOptions::new(1).with_run_dir(dir.path(), false);
    opts.halt_after = Some(30);
    run_training(&config(PolicyKind::None), &data, opts).unwrap();
    let mut changed = config(PolicyKind::None);
    changed.gauda.batch = 8;
    let err = run_training(&changed, &data, RunOptions::new(1).with_run_dir(dir.path(), true)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn gauda_without_replacement_or_synthesis_equals_plain_training() {
    let (_, data) = toy();
    let plain = run_training(&config(PolicyKind::None), &data, RunOptions::new(4)).unwrap();
    let mut cfg = config(PolicyKind::Gauda);
    cfg.gauda.replace_fraction = 0.0;
    cfg.gauda.synthesis = false;
    let gauda = run_training(&cfg, &data, RunOptions::new(4)).unwrap();
    let (a, b) = (plain.test.unwrap(), gauda.test.unwrap());
    assert_eq!(a.accuracy, b.accuracy);
    assert_eq!(a.class_scores, b.class_scores);
    assert!(gauda.pool.entries.is_empty());
}

#[test]
fn online_synthesis_targets_selected_classes_within_budget() {
    let (spec, data) = toy();
    let sim = Toy2dSimulator(spec);
    let mut cfg = config(PolicyKind::Gauda);
    cfg.gauda.synth_budget = Some(50);
    let r = run_training(&cfg, &data, RunOptions::new(2).with_synthesizer(&sim)).unwrap();
    let added: usize = r.pool.added_by_class.values().sum();
    assert_eq!(added, 50);
    let selected: Vec<String> = r
        .metrics
        .rows()
        .iter()
        .filter(|row| row.metric == "selected")
        .map(|row| row.label.clone())
        .collect();
    assert!(!selected.is_empty());
    for c in r.pool.added_by_class.keys() {
        assert!(selected.contains(&c.to_string()), "class {c} synthesised without selection");
    }
}
