//! Task losses: weighted multi-label cross-entropy for the AU head,
//! weighted categorical cross-entropy for the expression head, and the
//! additive multi-task composition with the correlation penalties.

use crate::diffcomp::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Probabilities are clamped into [PROB_FLOOR, 1 - PROB_FLOOR] before any
/// logarithm so exact 0/1 predictions stay finite.
pub const PROB_FLOOR: f64 = 1e-7;

/// Per-class weights countering label imbalance.
///
/// The fields are public so alternative weighting schemes can be injected;
/// [`LabelWeights::from_labels`] provides the default inverse-frequency
/// forms.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelWeights<R: Real> {
    /// Multiplier on the positive term of each AU: w_c = N_neg,c / max(N_pos,c, 1).
    pub au_pos_weights: Vec<R>,
    /// Multiplier on each expression class: w_j = N / (k * max(N_j, 1)).
    pub expr_class_weights: Vec<R>,
}

impl<R: Real> LabelWeights<R> {
    /// Unit weights: plain (unweighted) cross-entropies.
    pub fn uniform(au_count: usize, expr_count: usize) -> Self {
        Self {
            au_pos_weights: vec![R::one(); au_count],
            expr_class_weights: vec![R::one(); expr_count],
        }
    }

    /// Inverse-frequency weights counted from the label matrices:
    /// `au_targets` is [n, c] binary, `expr_onehot` is [m, k] one-hot rows.
    pub fn from_labels(au_targets: &Tensor<R>, expr_onehot: &Tensor<R>) -> Result<Self> {
        let (n, c) = matrix_dims(au_targets, "au_targets")?;
        let (m, k) = matrix_dims(expr_onehot, "expr_onehot")?;
        if n == 0 || m == 0 {
            return Err(Error::invalid("cannot derive label weights from an empty dataset"));
        }
        check_binary(au_targets, "au_targets")?;
        check_one_hot(expr_onehot)?;

        let au_pos_weights = (0..c)
            .map(|j| {
                let pos = (0..n)
                    .filter(|&i| au_targets.data()[i * c + j] == R::one())
                    .count();
                let neg = n - pos;
                R::of(neg as f64 / pos.max(1) as f64)
            })
            .collect();
        let expr_class_weights = (0..k)
            .map(|j| {
                let count = (0..m)
                    .filter(|&i| expr_onehot.data()[i * k + j] == R::one())
                    .count();
                R::of(m as f64 / (k as f64 * count.max(1) as f64))
            })
            .collect();
        let weights = Self { au_pos_weights, expr_class_weights };
        weights.validate()?;
        Ok(weights)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |w: &[R]| w.iter().all(|v| v.is_finite() && *v > R::zero());
        if !ok(&self.au_pos_weights) || !ok(&self.expr_class_weights) {
            return Err(Error::invalid("label weights must be finite and positive"));
        }
        Ok(())
    }
}

fn matrix_dims<R: Real>(t: &Tensor<R>, what: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [n, c] => Ok((*n, *c)),
        other => Err(Error::shape(what, "[rows, classes]", format!("{other:?}"))),
    }
}

fn check_binary<R: Real>(t: &Tensor<R>, what: &'static str) -> Result<()> {
    if t.data().iter().any(|v| *v != R::zero() && *v != R::one()) {
        return Err(Error::invalid(format!("{what} must contain only 0/1 entries")));
    }
    Ok(())
}

fn check_one_hot<R: Real>(t: &Tensor<R>) -> Result<()> {
    let (m, k) = matrix_dims(t, "onehot")?;
    for i in 0..m {
        let row = &t.data()[i * k..(i + 1) * k];
        let ones = row.iter().filter(|v| **v == R::one()).count();
        if ones != 1 || row.iter().any(|v| *v != R::zero() && *v != R::one()) {
            return Err(Error::invalid(format!("row {i} of one-hot targets is not one-hot")));
        }
    }
    Ok(())
}

/// Weighted multi-label cross-entropy over a batch of AU probabilities:
/// mean over batch and AUs of -[w_c * y * log p + (1 - y) * log(1 - p)].
///
/// `probs` is a tape value of shape [batch, c]; `targets` is a constant
/// binary matrix of the same shape.
pub fn wmce<R: Real>(
    tape: &mut Tape<R>,
    probs: Var,
    targets: &Tensor<R>,
    weights: &LabelWeights<R>,
) -> Result<Var> {
    let (b, c) = matrix_dims(tape.value(probs), "wmce probs")?;
    if targets.shape() != [b, c] {
        return Err(Error::shape("wmce targets", format!("[{b}, {c}]"), format!("{:?}", targets.shape())));
    }
    if weights.au_pos_weights.len() != c {
        return Err(Error::shape(
            "wmce weights",
            format!("{c} AU weights"),
            format!("{}", weights.au_pos_weights.len()),
        ));
    }
    weights.validate()?;
    check_binary(targets, "wmce targets")?;
    if b == 0 {
        return Err(Error::invalid("wmce requires a nonempty batch"));
    }

    // Constant masks: w_c*y on the positive term, (1-y) on the negative.
    let pos_mask = Tensor::from_fn(&[b, c], |i| {
        targets.data()[i] * weights.au_pos_weights[i % c]
    });
    let neg_mask = Tensor::from_fn(&[b, c], |i| R::one() - targets.data()[i]);

    let p = tape.clamp(probs, R::of(PROB_FLOOR), R::of(1.0 - PROB_FLOOR))?;
    let log_p = tape.log(p)?;
    let one_minus_p = tape.affine(p, -R::one(), R::one())?;
    let log_1p = tape.log(one_minus_p)?;
    let pos = tape.mul_const(log_p, pos_mask)?;
    let neg = tape.mul_const(log_1p, neg_mask)?;
    let both = tape.add(pos, neg)?;
    let total = tape.sum(both)?;
    tape.affine(total, R::of(-1.0 / (b * c) as f64), R::zero())
}

/// Weighted categorical cross-entropy over a batch of expression
/// probabilities: mean over batch of -w_{class(i)} * log p_{i, class(i)}.
pub fn wcce<R: Real>(
    tape: &mut Tape<R>,
    probs: Var,
    onehot: &Tensor<R>,
    weights: &LabelWeights<R>,
) -> Result<Var> {
    let (b, k) = matrix_dims(tape.value(probs), "wcce probs")?;
    if onehot.shape() != [b, k] {
        return Err(Error::shape("wcce targets", format!("[{b}, {k}]"), format!("{:?}", onehot.shape())));
    }
    if weights.expr_class_weights.len() != k {
        return Err(Error::shape(
            "wcce weights",
            format!("{k} class weights"),
            format!("{}", weights.expr_class_weights.len()),
        ));
    }
    weights.validate()?;
    check_one_hot(onehot)?;
    if b == 0 {
        return Err(Error::invalid("wcce requires a nonempty batch"));
    }

    let mask = Tensor::from_fn(&[b, k], |i| {
        onehot.data()[i] * weights.expr_class_weights[i % k]
    });
    let p = tape.clamp(probs, R::of(PROB_FLOOR), R::of(1.0 - PROB_FLOOR))?;
    let log_p = tape.log(p)?;
    let picked = tape.mul_const(log_p, mask)?;
    let total = tape.sum(picked)?;
    tape.affine(total, R::of(-1.0 / b as f64), R::zero())
}

/// Multi-task objective: L = (wmce + bgc_au) + (wcce + bgc_expr).
///
/// The correlation terms are optional so ablations can drop them without
/// changing the task-loss path.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<R: Real>(
    tape: &mut Tape<R>,
    au_probs: Var,
    au_targets: &Tensor<R>,
    expr_probs: Var,
    expr_onehot: &Tensor<R>,
    bgc_au: Option<Var>,
    bgc_expr: Option<Var>,
    weights: &LabelWeights<R>,
) -> Result<Var> {
    let mut au_loss = wmce(tape, au_probs, au_targets, weights)?;
    if let Some(bgc) = bgc_au {
        au_loss = tape.add(au_loss, bgc)?;
    }
    let mut expr_loss = wcce(tape, expr_probs, expr_onehot, weights)?;
    if let Some(bgc) = bgc_expr {
        expr_loss = tape.add(expr_loss, bgc)?;
    }
    tape.add(au_loss, expr_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    type T = Tensor<f64>;

    fn eval_wmce(probs: T, targets: T, w: &LabelWeights<f64>) -> f64 {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(probs);
        let loss = wmce(&mut tape, p, &targets, w).unwrap();
        tape.value(loss).item().unwrap()
    }

    fn eval_wcce(probs: T, onehot: T, w: &LabelWeights<f64>) -> f64 {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(probs);
        let loss = wcce(&mut tape, p, &onehot, w).unwrap();
        tape.value(loss).item().unwrap()
    }

    #[test]
    fn weights_from_balanced_labels_are_unit() {
        let au = T::new(vec![4, 1], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let expr = T::new(
            vec![4, 2],
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let w = LabelWeights::from_labels(&au, &expr).unwrap();
        assert_eq!(w.au_pos_weights, vec![1.0]);
        assert_eq!(w.expr_class_weights, vec![1.0, 1.0]);
    }

    #[test]
    fn rare_positive_au_gets_count_ratio_weight() {
        // 3 positives out of 30 -> 27 / 3 = 9.
        let au = T::from_fn(&[30, 1], |i| if i < 3 { 1.0 } else { 0.0 });
        let expr = T::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let w = LabelWeights::from_labels(&au, &expr).unwrap();
        assert_relative_eq!(w.au_pos_weights[0], 9.0);
    }

    #[test]
    fn au_with_no_positives_uses_floored_denominator() {
        let au = T::zeros(&[5, 2]);
        let expr = T::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let w = LabelWeights::from_labels(&au, &expr).unwrap();
        assert_eq!(w.au_pos_weights, vec![5.0, 5.0]);
        w.validate().unwrap();
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let au = T::zeros(&[0, 2]);
        let expr = T::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        assert!(LabelWeights::from_labels(&au, &expr).is_err());
    }

    #[test]
    fn wmce_vanishes_when_probs_match_targets() {
        let targets = T::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let loss = eval_wmce(targets.clone(), targets, &LabelWeights::uniform(2, 2));
        assert!(loss.abs() < 1e-6, "loss = {loss}");
        assert!(loss >= 0.0);
    }

    #[test]
    fn wmce_at_half_probability_is_ln2() {
        let probs = T::new(vec![1, 1], vec![0.5]).unwrap();
        let targets = T::new(vec![1, 1], vec![1.0]).unwrap();
        let loss = eval_wmce(probs, targets, &LabelWeights::uniform(1, 2));
        assert_relative_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn wmce_matches_hand_arithmetic() {
        // 2 samples, 2 AUs, weights (2, 0.5).
        let probs = T::new(vec![2, 2], vec![0.9, 0.2, 0.4, 0.7]).unwrap();
        let targets = T::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let w = LabelWeights {
            au_pos_weights: vec![2.0, 0.5],
            expr_class_weights: vec![1.0],
        };
        let expected = -(2.0 * 0.9f64.ln()
            + (1.0 - 0.2f64).ln()
            + (1.0 - 0.4f64).ln()
            + 0.5 * 0.7f64.ln())
            / 4.0;
        let loss = eval_wmce(probs, targets, &w);
        assert_relative_eq!(loss, expected, epsilon = 1e-14);
    }

    #[test]
    fn wcce_reference_points() {
        // Correct class with p -> 1 gives ~0.
        let probs = T::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let onehot = T::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let w = LabelWeights::uniform(2, 3);
        assert!(eval_wcce(probs, onehot, &w).abs() < 1e-6);

        // Uniform probabilities with unit weights give ln k.
        let probs = T::full(&[2, 4], 0.25);
        let onehot = T::new(
            vec![2, 4],
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        let w = LabelWeights::uniform(2, 4);
        assert_relative_eq!(eval_wcce(probs, onehot, &w), 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn wcce_matches_weighted_hand_case() {
        let probs = T::new(vec![2, 2], vec![0.8, 0.2, 0.3, 0.7]).unwrap();
        let onehot = T::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let w = LabelWeights {
            au_pos_weights: vec![1.0],
            expr_class_weights: vec![3.0, 0.25],
        };
        let expected = -(3.0 * 0.8f64.ln() + 0.25 * 0.7f64.ln()) / 2.0;
        assert_relative_eq!(eval_wcce(probs, onehot, &w), expected, epsilon = 1e-14);
    }

    #[test]
    fn wcce_rejects_rows_that_are_not_one_hot() {
        let probs = T::full(&[1, 3], 1.0 / 3.0);
        let w = LabelWeights::uniform(1, 3);
        for bad in [
            T::new(vec![1, 3], vec![1.0, 1.0, 0.0]).unwrap(),
            T::new(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap(),
            T::new(vec![1, 3], vec![0.5, 0.5, 0.0]).unwrap(),
        ] {
            let mut tape = Tape::<f64>::new();
            let p = tape.constant(probs.clone());
            assert!(wcce(&mut tape, p, &bad, &w).is_err());
        }
    }

    #[test]
    fn lowering_the_true_label_probability_never_lowers_either_loss() {
        let w = LabelWeights::uniform(2, 3);
        let targets = T::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let base = eval_wmce(
            T::new(vec![1, 2], vec![0.7, 0.3]).unwrap(),
            targets.clone(),
            &w,
        );
        for lower in [0.6, 0.4, 0.1, 0.0] {
            let l = eval_wmce(
                T::new(vec![1, 2], vec![lower, 0.3]).unwrap(),
                targets.clone(),
                &w,
            );
            assert!(l >= base, "wmce fell from {base} to {l} at p={lower}");
        }
        // Raising the probability of a negative AU must not lower the loss.
        for higher in [0.5, 0.9, 1.0] {
            let l = eval_wmce(
                T::new(vec![1, 2], vec![0.7, higher]).unwrap(),
                targets.clone(),
                &w,
            );
            assert!(l >= base);
        }

        let onehot = T::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let base = eval_wcce(
            T::new(vec![1, 3], vec![0.2, 0.6, 0.2]).unwrap(),
            onehot.clone(),
            &w,
        );
        for lower in [0.5, 0.2, 0.01] {
            let l = eval_wcce(
                T::new(vec![1, 3], vec![0.2, lower, 0.2]).unwrap(),
                onehot.clone(),
                &w,
            );
            assert!(l >= base);
        }
    }

    #[test]
    fn total_is_the_sum_of_its_parts() {
        let au_probs = T::new(vec![2, 2], vec![0.9, 0.2, 0.4, 0.7]).unwrap();
        let au_targets = T::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let expr_probs = T::new(vec![2, 2], vec![0.8, 0.2, 0.3, 0.7]).unwrap();
        let expr_onehot = T::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let w = LabelWeights::uniform(2, 2);

        let part_wmce = eval_wmce(au_probs.clone(), au_targets.clone(), &w);
        let part_wcce = eval_wcce(expr_probs.clone(), expr_onehot.clone(), &w);

        let mut tape = Tape::<f64>::new();
        let ap = tape.constant(au_probs);
        let ep = tape.constant(expr_probs);
        let bgc_au = tape.constant(T::scalar(0.125));
        let bgc_expr = tape.constant(T::scalar(-0.0625));
        let total = total_loss(
            &mut tape,
            ap,
            &au_targets,
            ep,
            &expr_onehot,
            Some(bgc_au),
            Some(bgc_expr),
            &w,
        )
        .unwrap();
        let got = tape.value(total).item().unwrap();
        assert_relative_eq!(got, part_wmce + part_wcce + 0.125 - 0.0625, epsilon = 1e-14);

        // Without the correlation terms the composition is just the two
        // task losses.
        let mut tape = Tape::<f64>::new();
        let ap = tape.constant(T::new(vec![2, 2], vec![0.9, 0.2, 0.4, 0.7]).unwrap());
        let ep = tape.constant(T::new(vec![2, 2], vec![0.8, 0.2, 0.3, 0.7]).unwrap());
        let total =
            total_loss(&mut tape, ap, &au_targets, ep, &expr_onehot, None, None, &w).unwrap();
        assert_relative_eq!(
            tape.value(total).item().unwrap(),
            part_wmce + part_wcce,
            epsilon = 1e-14
        );
    }

    #[test]
    fn total_gradient_is_linear_in_the_parts() {
        use crate::diffcomp::{grad_check, Probes};

        let au_targets = T::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let expr_onehot = T::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let w = LabelWeights {
            au_pos_weights: vec![1.5, 0.75],
            expr_class_weights: vec![2.0, 0.5],
        };
        let au_probs = T::new(vec![2, 2], vec![0.85, 0.25, 0.45, 0.65]).unwrap();
        let expr_probs = T::new(vec![2, 2], vec![0.3, 0.7, 0.6, 0.4]).unwrap();

        let targets = au_targets.clone();
        let onehot = expr_onehot.clone();
        let report = grad_check(
            &move |tape: &mut Tape<f64>, vars: &[Var]| {
                total_loss(tape, vars[0], &targets, vars[1], &onehot, None, None, &w)
            },
            &[au_probs, expr_probs],
            1e-6,
            Probes::Exhaustive,
        )
        .unwrap();
        assert!(
            report.max_rel_err < 1e-7,
            "finite differences disagree: {report}"
        );
    }
}
