//! Gradient check of the whole training objective: two-branch backbone into
//! both heads, task losses with imbalance weights, and both correlation
//! penalties, differentiated with respect to every network parameter.

use become_net::betagraph::ScreeningConfig;
use become_net::diffcomp::{grad_check, Probes, Tape, Tensor, Var};
use become_net::losses::{self, LabelWeights};
use become_net::network::{BeCoMENetParams, NetworkConfig, ParamVars};
use become_net::rngstream;

fn reduced_config() -> NetworkConfig {
    let mut cfg = NetworkConfig::with_dims(16, 16, 8, 3, 3);
    cfg.conv_channels = [4, 8, 8];
    cfg.landmark_channels = 4;
    cfg.fc_units = 32;
    cfg
}

#[test]
fn full_objective_gradient_matches_finite_differences() {
    let cfg = reduced_config();
    let batch = 3usize;

    let images: Vec<Tensor<f64>> = (0..batch)
        .map(|s| {
            Tensor::from_fn(&[cfg.image_h, cfg.image_w], |i| {
                0.5 + 0.45 * ((i as f64 * 0.37) + s as f64 * 1.1).sin()
            })
        })
        .collect();
    let landmark_sets: Vec<Tensor<f64>> = (0..batch)
        .map(|s| {
            Tensor::from_fn(&[cfg.landmarks, 2], |i| {
                0.4 + 0.2 * ((i + 3 * s) as f64 * 0.61).cos()
            })
        })
        .collect();

    let au_targets =
        Tensor::new(vec![3, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
    let expr_onehot =
        Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let weights = LabelWeights::from_labels(&au_targets, &expr_onehot).unwrap();
    let identity = [0.31_f64, -1.12, 0.77];
    let screening = ScreeningConfig::default();

    let params = BeCoMENetParams::<f64>::build(cfg.clone(), 2024).unwrap();
    let inputs: Vec<Tensor<f64>> = params.tensors().to_vec();

    let build = move |tape: &mut Tape<f64>, vars: &[Var]| {
        let net = ParamVars::from_vars(cfg.clone(), vars.to_vec())?;
        let mut rng = rngstream::stream(0, "eval-mode-unused");
        let mut rows = Vec::with_capacity(batch);
        for (image, landmarks) in images.iter().zip(&landmark_sets) {
            rows.push(net.forward_features(tape, image, landmarks, false, &mut rng)?);
        }
        let z = tape.stack_rows(&rows)?;
        let au = net.forward_au(tape, z)?;
        let expr = net.forward_expr(tape, z)?;
        let bgc_au = become_net::betagraph::bgc_loss(tape, z, &au_targets, &identity, &screening)?;
        let bgc_expr =
            become_net::betagraph::bgc_loss(tape, z, &expr_onehot, &identity, &screening)?;
        losses::total_loss(
            tape,
            au,
            &au_targets,
            expr,
            &expr_onehot,
            Some(bgc_au),
            Some(bgc_expr),
            &weights,
        )
    };

    let report = grad_check(
        &build,
        &inputs,
        1e-5,
        Probes::Sampled { count: 300, seed: 99 },
    )
    .unwrap();

    let clean = report.probes - report.skipped_nonsmooth;
    assert!(
        clean >= 150,
        "too few probes survived kink filtering: {clean} of {}",
        report.probes
    );
    assert!(
        report.max_rel_err < 1e-3,
        "analytic vs numeric gradient mismatch: {report}"
    );
}
