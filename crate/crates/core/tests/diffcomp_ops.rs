//! Forward values checked against straightforward oracle implementations and
//! gradients checked against central finite differences, operation by
//! operation and through a composite network block.

use approx::assert_relative_eq;
use become_net::diffcomp::{grad_check, Probes, Tape, Tensor, Var};
use become_net::Result;
use become_net_testkit as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contract a tensor output to a scalar with fixed pseudo-random weights so
/// finite differences exercise every output coordinate's gradient path.
fn scalarize(tape: &mut Tape<f64>, v: Var) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let len: usize = shape.iter().product();
    let weights = Tensor::new(
        shape,
        (0..len).map(|i| 0.3 + 0.7 * (1.7 * i as f64).sin()).collect(),
    )?;
    let weighted = tape.mul_const(v, weights)?;
    tape.sum(weighted)
}

fn assert_grads_ok(report: &become_net::diffcomp::GradCheckReport, tol: f64) {
    assert!(
        report.max_rel_err < tol,
        "gradient mismatch: {report} (tolerance {tol:.1e})"
    );
    assert!(report.probes > 0, "no probes were compared: {report}");
}

#[test]
fn conv2d_forward_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (c_in, c_out, h, w) = (2, 3, 5, 4);
    let input = rand_tensor(&[c_in, h, w], &mut rng);
    let kernels = rand_tensor(&[c_out, c_in, 3, 3], &mut rng);
    let bias = rand_tensor(&[c_out], &mut rng);

    let mut tape = Tape::<f64>::new();
    let x = tape.constant(input.clone());
    let k = tape.constant(kernels.clone());
    let b = tape.constant(bias.clone());
    let y = tape.conv2d(x, k, b).unwrap();

    let expect = oracle::conv2d_same3x3_oracle(input.data(), c_in, h, w, kernels.data(), bias.data(), c_out);
    assert_eq!(tape.value(y).shape(), [c_out, h, w]);
    for (got, want) in tape.value(y).data().iter().zip(&expect) {
        assert_relative_eq!(got, want, max_relative = 1e-12, epsilon = 1e-14);
    }
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let inputs = [
        rand_tensor(&[2, 4, 3], &mut rng),
        rand_tensor(&[2, 2, 3, 3], &mut rng),
        rand_tensor(&[2], &mut rng),
    ];
    let report = grad_check(
        &|tape: &mut Tape<f64>, vars: &[Var]| {
            let y = tape.conv2d(vars[0], vars[1], vars[2])?;
            scalarize(tape, y)
        },
        &inputs,
        1e-5,
        Probes::Exhaustive,
    )
    .unwrap();
    assert_eq!(report.skipped_nonsmooth, 0);
    assert_grads_ok(&report, 1e-7);
}

#[test]
fn maxpool2_forward_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (c, h, w) = (3, 5, 6);
    let input = rand_tensor(&[c, h, w], &mut rng);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(input.clone());
    let y = tape.maxpool2(x).unwrap();
    let (expect, oh, ow) = oracle::maxpool2_oracle(input.data(), c, h, w);
    assert_eq!(tape.value(y).shape(), [c, oh, ow]);
    assert_eq!(tape.value(y).data(), &expect[..]);
}

#[test]
fn maxpool2_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let inputs = [rand_tensor(&[2, 4, 4], &mut rng)];
    let report = grad_check(
        &|tape: &mut Tape<f64>, vars: &[Var]| {
            let y = tape.maxpool2(vars[0])?;
            scalarize(tape, y)
        },
        &inputs,
        1e-6,
        Probes::Exhaustive,
    )
    .unwrap();
    assert_grads_ok(&report, 1e-7);
}

#[test]
fn pointwise_conv1d_forward_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let (l, c_in, c_out) = (7, 2, 4);
    let input = rand_tensor(&[l, c_in], &mut rng);
    let kernels = rand_tensor(&[c_out, c_in], &mut rng);
    let bias = rand_tensor(&[c_out], &mut rng);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(input.clone());
    let k = tape.constant(kernels.clone());
    let b = tape.constant(bias.clone());
    let y = tape.pointwise_conv1d(x, k, b).unwrap();
    let expect = oracle::pointwise_conv1d_oracle(input.data(), l, c_in, kernels.data(), bias.data(), c_out);
    assert_eq!(tape.value(y).shape(), [l, c_out]);
    for (got, want) in tape.value(y).data().iter().zip(&expect) {
        assert_relative_eq!(got, want, max_relative = 1e-12, epsilon = 1e-14);
    }
}

#[test]
fn pointwise_conv1d_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let inputs = [
        rand_tensor(&[5, 2], &mut rng),
        rand_tensor(&[3, 2], &mut rng),
        rand_tensor(&[3], &mut rng),
    ];
    let report = grad_check(
        &|tape: &mut Tape<f64>, vars: &[Var]| {
            let y = tape.pointwise_conv1d(vars[0], vars[1], vars[2])?;
            scalarize(tape, y)
        },
        &inputs,
        1e-5,
        Probes::Exhaustive,
    )
    .unwrap();
    assert_grads_ok(&report, 1e-7);
}

#[test]
fn dense_forward_matches_oracle_for_both_ranks() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let (n_in, n_out, rows) = (6, 4, 3);
    let weights = rand_tensor(&[n_out, n_in], &mut rng);
    let bias = rand_tensor(&[n_out], &mut rng);
    let single = rand_tensor(&[n_in], &mut rng);
    let batch = rand_tensor(&[rows, n_in], &mut rng);

    let mut tape = Tape::<f64>::new();
    let w = tape.constant(weights.clone());
    let b = tape.constant(bias.clone());
    let xs = tape.constant(single.clone());
    let xb = tape.constant(batch.clone());
    let ys = tape.dense(xs, w, b).unwrap();
    let yb = tape.dense(xb, w, b).unwrap();

    let expect_single = oracle::dense_oracle(single.data(), weights.data(), bias.data(), n_out);
    for (got, want) in tape.value(ys).data().iter().zip(&expect_single) {
        assert_relative_eq!(got, want, max_relative = 1e-12, epsilon = 1e-14);
    }
    for r in 0..rows {
        let expect_row = oracle::dense_oracle(
            &batch.data()[r * n_in..(r + 1) * n_in],
            weights.data(),
            bias.data(),
            n_out,
        );
        for (got, want) in tape.value(yb).data()[r * n_out..(r + 1) * n_out].iter().zip(&expect_row) {
            assert_relative_eq!(got, want, max_relative = 1e-12, epsilon = 1e-14);
        }
    }
}

#[test]
fn dense_gradients_match_finite_differences_for_both_ranks() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for input_shape in [vec![5], vec![3, 5]] {
        let inputs = [
            rand_tensor(&input_shape, &mut rng),
            rand_tensor(&[4, 5], &mut rng),
            rand_tensor(&[4], &mut rng),
        ];
        let report = grad_check(
            &|tape: &mut Tape<f64>, vars: &[Var]| {
                let y = tape.dense(vars[0], vars[1], vars[2])?;
                scalarize(tape, y)
            },
            &inputs,
            1e-5,
            Probes::Exhaustive,
        )
        .unwrap();
        assert_grads_ok(&report, 1e-7);
    }
}

#[test]
fn softmax_forward_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let input = rand_tensor(&[4], &mut rng);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(input.clone());
    let y = tape.softmax(x).unwrap();
    let expect = oracle::softmax_oracle(input.data());
    for (got, want) in tape.value(y).data().iter().zip(&expect) {
        assert_relative_eq!(got, want, max_relative = 1e-12);
    }
}

#[test]
fn elementwise_op_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    // sigmoid, softmax, affine chained; all smooth.
    let inputs = [rand_tensor(&[2, 4], &mut rng)];
    let report = grad_check(
        &|tape: &mut Tape<f64>, vars: &[Var]| {
            let a = tape.affine(vars[0], 1.5, -0.25)?;
            let s = tape.sigmoid(a)?;
            let sm = tape.softmax(s)?;
            scalarize(tape, sm)
        },
        &inputs,
        1e-5,
        Probes::Exhaustive,
    )
    .unwrap();
    assert_eq!(report.skipped_nonsmooth, 0);
    assert_grads_ok(&report, 1e-7);
}

#[test]
fn log_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let data: Vec<f64> = (0..6).map(|_| rng.gen_range(0.1..2.0)).collect();
    let inputs = [Tensor::new(vec![6], data).unwrap()];
    let report = grad_check(
        &|tape: &mut Tape<f64>, vars: &[Var]| {
            let l = tape.log(vars[0])?;
            scalarize(tape, l)
        },
        &inputs,
        1e-6,
        Probes::Exhaustive,
    )
    .unwrap();
    assert_grads_ok(&report, 1e-7);
}

#[test]
fn concat_and_stack_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(112);
    let inputs = [
        rand_tensor(&[3], &mut rng),
        rand_tensor(&[3], &mut rng),
        rand_tensor(&[3], &mut rng),
    ];
    let report = grad_check(
        &|tape: &mut Tape<f64>, vars: &[Var]| {
            let cat = tape.concat(&[vars[0], vars[1]])?;
            let rows = tape.stack_rows(&[vars[1], vars[2]])?;
            let a = scalarize(tape, cat)?;
            let b = scalarize(tape, rows)?;
            tape.add(a, b)
        },
        &inputs,
        1e-5,
        Probes::Exhaustive,
    )
    .unwrap();
    assert_grads_ok(&report, 1e-8);
}

#[test]
fn dropout_gradients_match_finite_differences_with_fixed_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(113);
    let inputs = [rand_tensor(&[8], &mut rng)];
    let report = grad_check(
        &|tape: &mut Tape<f64>, vars: &[Var]| {
            // The mask must be identical on every evaluation for finite
            // differences to see the same function.
            let mut mask_rng = ChaCha8Rng::seed_from_u64(42);
            let d = tape.dropout(vars[0], 0.5, true, &mut mask_rng)?;
            scalarize(tape, d)
        },
        &inputs,
        1e-5,
        Probes::Exhaustive,
    )
    .unwrap();
    assert_grads_ok(&report, 1e-8);
}

#[test]
fn composite_network_block_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(114);
    // conv -> relu -> pool -> dense -> sigmoid -> mean, the exact layer
    // pattern the image branch uses, at a miniature size.
    let inputs = [
        rand_tensor(&[1, 6, 6], &mut rng),
        rand_tensor(&[2, 1, 3, 3], &mut rng),
        rand_tensor(&[2], &mut rng),
        rand_tensor(&[3, 18], &mut rng),
        rand_tensor(&[3], &mut rng),
    ];
    let report = grad_check(
        &|tape: &mut Tape<f64>, vars: &[Var]| {
            let c = tape.conv2d(vars[0], vars[1], vars[2])?;
            let r = tape.relu(c)?;
            let p = tape.maxpool2(r)?;
            // dense flattens the pooled [2, 3, 3] block to a length-18 vector.
            let d = tape.dense(p, vars[3], vars[4])?;
            let s = tape.sigmoid(d)?;
            tape.mean(s)
        },
        &inputs,
        1e-5,
        Probes::Exhaustive,
    )
    .unwrap();
    // Random 6x6 inputs put some conv outputs near the ReLU threshold; those
    // probes are skipped, the rest must agree tightly.
    assert!(report.probes > 100, "{report}");
    assert_grads_ok(&report, 1e-6);
}
