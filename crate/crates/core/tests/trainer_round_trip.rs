//! End-to-end training smoke test: fit a small model on synthetic faces,
//! verify the loss actually falls, and check that a checkpoint written to
//! disk reproduces the fitted model's predictions bit for bit.

use become_net::datapipe::synth::{generate, SynthConfig};
use become_net::network::{BeCoMENetParams, NetworkConfig};
use become_net::trainer::{evaluate, fit, predict, TrainConfig};

#[test]
fn training_learns_and_checkpoints_reproduce_predictions() {
    let data = generate::<f64>(&SynthConfig {
        seed: 5,
        n_subjects: 6,
        samples_per_subject: 10,
        au_count: 4,
        expr_count: 3,
        image_size: 32,
    })
    .unwrap();

    let mut net = NetworkConfig::with_dims(32, 32, 68, 4, 3);
    net.conv_channels = [4, 8, 8];
    net.landmark_channels = 4;
    net.fc_units = 32;

    let cfg = TrainConfig {
        batch_size: 8,
        lr_base: 1e-4,
        lr_max: 3e-3,
        max_epochs: 6,
        patience: 10,
        seed: 21,
        ..TrainConfig::default()
    };

    let result = fit(&net, &data, &cfg).unwrap();
    assert!(!result.history.is_empty());
    assert!(result.history.len() <= cfg.max_epochs);
    let first = result.history.first().unwrap().mean_loss.total;
    let last = result.history.last().unwrap().mean_loss.total;
    assert!(
        last < first,
        "mean epoch loss should fall during training: {first} -> {last}"
    );
    assert!(result.best_epoch < result.history.len());

    // The early-stopping checkpoint must be the best validation epoch.
    let best_recorded = result
        .history
        .iter()
        .map(|e| e.val_mean_f1)
        .fold(f64::MIN, f64::max);
    assert_eq!(result.best_val_f1, best_recorded);

    // Round-trip the fitted parameters through the on-disk format.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    result.params.save_path(&path).unwrap();
    let restored: BeCoMENetParams<f64> = BeCoMENetParams::load_path(&path).unwrap();

    let direct = predict(&result.params, &data, cfg.threshold).unwrap();
    let reloaded = predict(&restored, &data, cfg.threshold).unwrap();
    assert_eq!(
        direct.score().to_json().unwrap(),
        reloaded.score().to_json().unwrap(),
        "a reloaded checkpoint must predict identically"
    );

    // Evaluation is deterministic and threshold-sensitive interfaces hold up.
    let a = evaluate(&result.params, &data, cfg.threshold).unwrap();
    let b = evaluate(&result.params, &data, cfg.threshold).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.au_samples, data.au_samples().len());
    assert_eq!(a.expr_samples, data.expr_samples().len());
    assert!(a.expr_accuracy.is_some());
    for au in &a.per_au {
        assert!(au.f1.is_finite());
        assert!(!au.degenerate, "every unit appears in this dataset");
    }
}
