//! Finite-difference validation of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Which coordinates of the inputs to probe.
#[derive(Clone, Copy, Debug)]
pub enum Probes {
    /// Every coordinate of every input. Appropriate for unit-level checks.
    Exhaustive,
    /// `count` coordinates drawn uniformly (with replacement) from the
    /// concatenated input space. Appropriate for full-model checks where an
    /// exhaustive sweep would take hours.
    Sampled { count: usize, seed: u64 },
}

/// The probe with the largest relative error.
#[derive(Clone, Copy, Debug)]
pub struct WorstProbe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of a [`grad_check`] run.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Probes actually compared (excludes skipped ones).
    pub probes: usize,
    /// Probes skipped because the +/- evaluations crossed a non-smooth
    /// boundary (ReLU sign flip, pooling argmax change, clamp saturation),
    /// where central differences do not estimate the one-sided derivative.
    pub skipped_nonsmooth: usize,
    pub max_rel_err: f64,
    pub worst: Option<WorstProbe>,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} probes, {} skipped at kinks, max relative error {:.3e}",
            self.probes, self.skipped_nonsmooth, self.max_rel_err
        )?;
        if let Some(w) = &self.worst {
            write!(
                f,
                " (input {} index {}: analytic {:.9e}, numeric {:.9e})",
                w.input, w.index, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

/// Compare tape gradients of a scalar-valued function against central finite
/// differences with step `eps`.
///
/// `build` must be deterministic given the same inputs (seed any dropout
/// identically on every call). Relative error uses the larger magnitude of
/// the two derivatives with an absolute floor of `1e-3`, so tiny derivatives
/// are compared absolutely. Probes where the two shifted evaluations land on
/// different smooth pieces of the function are skipped and counted, not
/// failed: a central difference across a kink says nothing about either
/// one-sided derivative.
pub fn grad_check<R, F>(
    build: &F,
    inputs: &[Tensor<R>],
    eps: f64,
    probes: Probes,
) -> Result<GradCheckReport>
where
    R: Real,
    F: Fn(&mut Tape<R>, &[Var]) -> Result<Var>,
{
    if inputs.is_empty() {
        return Err(Error::invalid("grad_check needs at least one input"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::shape(
            "grad_check output",
            "scalar",
            format!("{:?}", tape.value(out).shape()),
        ));
    }
    let base_sig = tape.nonsmooth_signature();
    tape.backward(out)?;
    let analytic: Vec<Tensor<R>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            tape.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    drop(tape);

    let sizes: Vec<usize> = inputs.iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::invalid("grad_check inputs are all empty"));
    }
    let coords: Vec<(usize, usize)> = match probes {
        Probes::Exhaustive => (0..inputs.len())
            .flat_map(|i| (0..sizes[i]).map(move |j| (i, j)))
            .collect(),
        Probes::Sampled { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    let mut flat = rng.gen_range(0..total);
                    let mut input = 0;
                    while flat >= sizes[input] {
                        flat -= sizes[input];
                        input += 1;
                    }
                    (input, flat)
                })
                .collect()
        }
    };

    let eval = |input: usize, index: usize, delta: f64| -> Result<(f64, u64)> {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(k, tensor)| {
                let mut copy = tensor.clone();
                if k == input {
                    copy.data_mut()[index] = R::of(tensor.data()[index].as_f64() + delta);
                }
                t.leaf(copy)
            })
            .collect();
        let o = build(&mut t, &vs)?;
        Ok((t.value(o).item()?.as_f64(), t.nonsmooth_signature()))
    };

    let mut report = GradCheckReport::default();
    for (input, index) in coords {
        let (f_plus, sig_plus) = eval(input, index, eps)?;
        let (f_minus, sig_minus) = eval(input, index, -eps)?;
        if sig_plus != base_sig || sig_minus != base_sig {
            report.skipped_nonsmooth += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let a = analytic[input].data()[index].as_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        report.probes += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some(WorstProbe {
                input,
                index,
                analytic: a,
                numeric,
            });
        }
    }
    Ok(report)
}
