//! Reference oracles for the workspace test suites.
//!
//! Everything in here is written from scratch against textbook definitions
//! (quadrature, Stirling series, brute-force layer arithmetic) so that the
//! main crates can be checked against an independent computation path. Keep
//! this crate free of dependencies on the crates it is used to verify.

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fb, fm, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, fm, flm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, fb, frm, right, 0.5 * tol, depth - 1)
}

/// ln Gamma(x) by the Stirling series after shifting the argument above 32,
/// where the truncated series is accurate to ~1e-22.
pub fn lgamma_oracle(x: f64) -> f64 {
    assert!(x > 0.0, "lgamma_oracle requires x > 0, got {x}");
    let mut shift = 0.0;
    let mut z = x;
    while z < 32.0 {
        shift += z.ln();
        z += 1.0;
    }
    let zi = 1.0 / z;
    let z2 = zi * zi;
    // Bernoulli-number coefficients of the asymptotic series.
    let series = zi
        * (1.0 / 12.0
            + z2 * (-1.0 / 360.0
                + z2 * (1.0 / 1260.0
                    + z2 * (-1.0 / 1680.0
                        + z2 * (1.0 / 1188.0
                            + z2 * (-691.0 / 360_360.0 + z2 * (1.0 / 156.0)))))));
    (z - 0.5) * z.ln() - z + 0.5 * (2.0 * std::f64::consts::PI).ln() + series - shift
}

/// Unnormalized lower incomplete beta integral over [0, x].
///
/// For a < 1 the substitution t = u^(1/a) removes the endpoint singularity at
/// t = 0; the (1-t)^(b-1) factor is only evaluated for t <= x, so callers must
/// keep x away from 1 (the regularized wrapper does this via the symmetry
/// relation).
fn lower_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    // Two passes: a coarse one to learn the integral's magnitude, then a
    // fine one at a tolerance relative to that magnitude. A fixed absolute
    // tolerance would leave deep-tail integrals (1e-13 of the complete
    // integral and smaller) with double-digit relative error. A coarse
    // underestimate only tightens the fine pass, so the scheme is safe for
    // the right-peaked integrands large `a` produces.
    fn refine<G: Fn(f64) -> f64>(g: &G, hi: f64) -> f64 {
        let rough = adaptive_simpson(g, 0.0, hi, 1e-12);
        let tol = (rough.abs() * 1e-14).max(1e-300);
        adaptive_simpson(g, 0.0, hi, tol)
    }
    if a < 1.0 {
        let inv_a = 1.0 / a;
        let g = |u: f64| (1.0 - u.powf(inv_a)).powf(b - 1.0);
        refine(&g, x.powf(a)) * inv_a
    } else {
        let g = |t: f64| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0);
        refine(&g, x)
    }
}

/// Regularized incomplete beta function I_x(a, b) by adaptive quadrature.
///
/// The complete beta function is also computed by quadrature (as two pieces
/// split at the mean a/(a+b)), so nothing here shares code with a Lanczos or
/// continued-fraction implementation.
pub fn reg_inc_beta_oracle(x: f64, a: f64, b: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "shape parameters must be positive");
    assert!((0.0..=1.0).contains(&x), "x must lie in [0, 1], got {x}");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let split = a / (a + b);
    if x > split {
        return 1.0 - reg_inc_beta_oracle(1.0 - x, b, a);
    }
    let complete = lower_inc_beta(split, a, b) + lower_inc_beta(b / (a + b), b, a);
    lower_inc_beta(x, a, b) / complete
}

/// Survival function P(T > t) of Student's t with `df` degrees of freedom,
/// by direct quadrature of the density.
pub fn student_t_sf_oracle(t: f64, df: u32) -> f64 {
    assert!(df >= 1);
    if t < 0.0 {
        return 1.0 - student_t_sf_oracle(-t, df);
    }
    let nu = df as f64;
    let log_norm = lgamma_oracle(0.5 * (nu + 1.0))
        - lgamma_oracle(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln();
    let pdf = |x: f64| (log_norm - 0.5 * (nu + 1.0) * (1.0 + x * x / nu).ln()).exp();
    0.5 - adaptive_simpson(&pdf, 0.0, t, 1e-15)
}

/// 3x3 convolution with stride 1 and zero "same" padding, brute force.
/// `input` is [c_in, h, w] row major, `kernels` is [c_out, c_in, 3, 3].
pub fn conv2d_same3x3_oracle(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kernels: &[f64],
    bias: &[f64],
    c_out: usize,
) -> Vec<f64> {
    assert_eq!(input.len(), c_in * h * w);
    assert_eq!(kernels.len(), c_out * c_in * 9);
    assert_eq!(bias.len(), c_out);
    let mut out = vec![0.0; c_out * h * w];
    for co in 0..c_out {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[co];
                for ci in 0..c_in {
                    for ky in 0..3usize {
                        for kx in 0..3usize {
                            let sy = y as isize + ky as isize - 1;
                            let sx = x as isize + kx as isize - 1;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc += input[(ci * h + sy as usize) * w + sx as usize]
                                * kernels[((co * c_in + ci) * 3 + ky) * 3 + kx];
                        }
                    }
                }
                out[(co * h + y) * w + x] = acc;
            }
        }
    }
    out
}

/// 2x2 max pooling with stride 2 (floor semantics), brute force.
pub fn maxpool2_oracle(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    assert_eq!(input.len(), c * h * w);
    let oh = h / 2;
    let ow = w / 2;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = input[(ch * h + 2 * y + dy) * w + 2 * x + dx];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(ch * oh + y) * ow + x] = best;
            }
        }
    }
    (out, oh, ow)
}

/// Fully connected layer y = W x + b with W stored [n_out, n_in] row major.
pub fn dense_oracle(x: &[f64], weights: &[f64], bias: &[f64], n_out: usize) -> Vec<f64> {
    let n_in = x.len();
    assert_eq!(weights.len(), n_out * n_in);
    assert_eq!(bias.len(), n_out);
    (0..n_out)
        .map(|o| {
            bias[o]
                + x.iter()
                    .zip(&weights[o * n_in..(o + 1) * n_in])
                    .map(|(xi, wi)| xi * wi)
                    .sum::<f64>()
        })
        .collect()
}

/// Pointwise (kernel size 1) 1-D convolution: [l, c_in] -> [l, c_out],
/// kernels stored [c_out, c_in].
pub fn pointwise_conv1d_oracle(
    x: &[f64],
    l: usize,
    c_in: usize,
    kernels: &[f64],
    bias: &[f64],
    c_out: usize,
) -> Vec<f64> {
    assert_eq!(x.len(), l * c_in);
    assert_eq!(kernels.len(), c_out * c_in);
    let mut out = vec![0.0; l * c_out];
    for i in 0..l {
        for co in 0..c_out {
            let mut acc = bias[co];
            for ci in 0..c_in {
                acc += x[i * c_in + ci] * kernels[co * c_in + ci];
            }
            out[i * c_out + co] = acc;
        }
    }
    out
}

/// Numerically stable softmax.
pub fn softmax_oracle(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}
