use std::path::Path;

use asd_core::model::ModelFamily;
use asd_core::pipeline::{
    extract_features, fit_norm, generate_synthetic, ingest, load_config, score_stage, train_stage,
    RunConfig, SynthSpec, Workspace,
};
use asd_core::trainer::BEST_CKPT;

fn corpus(dir: &Path) -> std::path::PathBuf {
    let spec = SynthSpec {
        machine_types: vec!["fan".into(), "valve".into()],
        n_train: 5,
        n_test_normal: 2,
        n_test_anomaly: 2,
        seconds: 1.5,
        ..SynthSpec::default()
    };
    generate_synthetic(dir, &spec).unwrap()
}

fn tiny(extra: &[(&str, &str)]) -> RunConfig {
    let mut o: Vec<(String, String)> = [
        ("model.encoder_filters", "[2, 2, 2]"),
        ("model.bottleneck_dim", "4"),
        ("train.max_epochs", "2"),
        ("train.batch_size", "8"),
    ]
    .iter()
    .chain(extra)
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    o.sort();
    load_config(None, &o).unwrap()
}

#[test]
fn stages_are_restartable() {
    let d = tempfile::tempdir().unwrap();
    let manifest = corpus(&d.path().join("c"));
    let ws = Workspace::new(d.path().join("w"));
    let cfg = tiny(&[]);
    ingest(&ws, &manifest).unwrap();
    let r = extract_features(&ws, &cfg).unwrap();
    assert_eq!((r.computed, r.cached), (18, 0));
    let fh = cfg.frontend_hash();
    let norm = std::fs::read(ws.norm_path(&fh)).unwrap();
    let out = train_stage(&ws, &cfg, |_| {}).unwrap();
    let ckpt = std::fs::read(out.run_dir.join(BEST_CKPT)).unwrap();
    let scores = score_stage(&ws, &cfg, None, None).unwrap();
    let scored = std::fs::read(&scores.path).unwrap();
    assert_eq!(scores.records.len(), 8);

    std::fs::remove_file(ws.norm_path(&fh)).unwrap();
    fit_norm(&ws, &cfg).unwrap();
    assert_eq!(std::fs::read(ws.norm_path(&fh)).unwrap(), norm);

    std::fs::remove_dir_all(ws.features_dir(&fh)).unwrap();
    let again = extract_features(&ws, &cfg).unwrap();
    assert_eq!(again.computed, 18);
    assert!(!again.norm_written || std::fs::read(ws.norm_path(&fh)).unwrap() == norm);

    std::fs::remove_dir_all(&out.run_dir).unwrap();
    let out2 = train_stage(&ws, &cfg, |_| {}).unwrap();
    assert_eq!(std::fs::read(out2.run_dir.join(BEST_CKPT)).unwrap(), ckpt);
    assert!(!scores.path.exists());
    let s2 = score_stage(&ws, &cfg, None, None).unwrap();
    assert_eq!(std::fs::read(&s2.path).unwrap(), scored);
}

#[test]
fn every_family_trains_and_scores() {
    let d = tempfile::tempdir().unwrap();
    let manifest = corpus(&d.path().join("c"));
    let ws = Workspace::new(d.path().join("w"));
    ingest(&ws, &manifest).unwrap();
    for extra in [
        vec![("model.family", "\"semi-supervised\""), ("model.loss_weights.alpha", "0.7"), ("model.loss_weights.beta", "0.3")],
        vec![("model.family", "\"baseline-dense\"")],
    ] {
        let cfg = tiny(&extra);
        extract_features(&ws, &cfg).unwrap();
        let out = train_stage(&ws, &cfg, |_| {}).unwrap();
        if cfg.model.family == ModelFamily::SemiSupervised {
            assert_eq!(out.model.config.n_classes, Some(2));
            assert!(out.history.records.iter().all(|r| r.cce > 0.0));
        }
        let s = score_stage(&ws, &cfg, None, None).unwrap();
        assert_eq!(s.records.len(), 8);
        assert!(s.records.iter().all(|r| r.anomaly_score.is_finite()));
    }
}
