//! Special functions for the beta and Student-t distributions.
//!
//! These back the edge-screening quantile and the validity-study t-tests, so
//! their accuracy is load-bearing: with `f64` the incomplete beta is good to
//! roughly 1e-15 relative and its inverse reproduces its argument to 1e-13
//! absolute. The test suite cross-checks every routine against independent
//! quadrature-based implementations.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lanczos coefficients (g = 7, 9 terms), accurate to ~15 significant digits.
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn log_gamma<R: Real>(x: R) -> Result<R> {
    if !(x > R::zero()) {
        return Err(Error::invalid(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(log_gamma_unchecked(x))
}

fn log_gamma_unchecked<R: Real>(x: R) -> R {
    let half = R::of(0.5);
    if x < half {
        // Reflection keeps the Lanczos series in its accurate range.
        let pi = R::of(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - log_gamma_unchecked(R::one() - x);
    }
    let z = x - R::one();
    let mut acc = R::of(LANCZOS[0]);
    for (k, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += R::of(*c) / (z + R::of(k as f64));
    }
    let g = R::of(7.5);
    let t = z + g;
    let half_ln_two_pi = R::of(0.918938533204672741780329736406);
    half_ln_two_pi + (z + half) * t.ln() - t + acc.ln()
}

/// Natural log of the beta function B(a, b) for positive arguments.
pub fn ln_beta<R: Real>(a: R, b: R) -> Result<R> {
    if !(a > R::zero()) || !(b > R::zero()) {
        return Err(Error::invalid(format!(
            "ln_beta requires positive shape parameters, got a={a}, b={b}"
        )));
    }
    Ok(log_gamma_unchecked(a) + log_gamma_unchecked(b) - log_gamma_unchecked(a + b))
}

/// Regularized incomplete beta function I_x(a, b) for `0 <= x <= 1` and
/// positive shapes, by Lentz's continued fraction with the symmetry switch
/// at x > (a+1)/(a+b+2).
pub fn reg_inc_beta<R: Real>(x: R, a: R, b: R) -> Result<R> {
    if !(a > R::zero()) || !(b > R::zero()) {
        return Err(Error::invalid(format!(
            "reg_inc_beta requires positive shape parameters, got a={a}, b={b}"
        )));
    }
    if !(x >= R::zero() && x <= R::one()) {
        return Err(Error::invalid(format!("reg_inc_beta requires 0 <= x <= 1, got {x}")));
    }
    if x == R::zero() {
        return Ok(R::zero());
    }
    if x == R::one() {
        return Ok(R::one());
    }
    let front = (a * x.ln() + b * (R::one() - x).ln() - ln_beta(a, b)?).exp();
    if x < (a + R::one()) / (a + b + R::of(2.0)) {
        Ok(front * beta_cf(x, a, b)? / a)
    } else {
        let front_sym = front; // same symmetric prefactor, swapped shapes
        Ok(R::one() - front_sym * beta_cf(R::one() - x, b, a)? / b)
    }
}

/// Continued fraction from Lentz's method; converges only for
/// x < (a+1)/(a+b+2), which the caller's symmetry switch guarantees.
fn beta_cf<R: Real>(x: R, a: R, b: R) -> Result<R> {
    let tiny = R::of(1e-300).max(R::min_positive_value());
    let eps = R::epsilon() * R::of(4.0);
    let qab = a + b;
    let qap = a + R::one();
    let qam = a - R::one();
    let mut c = R::one();
    let mut d = R::one() - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = R::one() / d;
    let mut h = d;
    for m in 1..=500usize {
        let mf = R::of(m as f64);
        let m2 = R::of(2.0 * m as f64);
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = R::one() + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = R::one() + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = R::one() / d;
        h = h * d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = R::one() + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = R::one() + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = R::one() / d;
        let del = d * c;
        h = h * del;
        if (del - R::one()).abs() < eps {
            return Ok(h);
        }
    }
    Err(Error::Convergence {
        routine: "reg_inc_beta continued fraction",
        iterations: 500,
    })
}

/// Inverse of [`reg_inc_beta`] in its first argument: returns `x` with
/// I_x(a, b) = q. Newton iterations safeguarded by a shrinking bisection
/// bracket.
///
/// With `f64` the result satisfies |I_x(a,b) - q| <= 1e-13 wherever such an
/// `x` is representable. Quantiles crushed against 0 or 1 (where one ulp of
/// `x` moves I by more than that) get the representable value that comes
/// closest.
pub fn inv_reg_inc_beta<R: Real>(q: R, a: R, b: R) -> Result<R> {
    if !(a > R::zero()) || !(b > R::zero()) {
        return Err(Error::invalid(format!(
            "inv_reg_inc_beta requires positive shape parameters, got a={a}, b={b}"
        )));
    }
    if !(q >= R::zero() && q <= R::one()) {
        return Err(Error::invalid(format!(
            "inv_reg_inc_beta requires 0 <= q <= 1, got {q}"
        )));
    }
    if q == R::zero() {
        return Ok(R::zero());
    }
    if q == R::one() {
        return Ok(R::one());
    }
    let ln_b = ln_beta(a, b)?;
    let f_tol = R::of(1e-13).max(R::epsilon() * R::of(100.0));
    let mut lo = R::zero();
    let mut hi = R::one();
    // The mean of the distribution is a well-behaved starting point.
    let mut x = a / (a + b);
    let mut best = x;
    let mut best_err = R::infinity();
    for _ in 0..200 {
        let f = reg_inc_beta(x, a, b)? - q;
        if f.abs() < best_err {
            best_err = f.abs();
            best = x;
        }
        if f.abs() <= f_tol {
            return Ok(x);
        }
        if f > R::zero() {
            hi = x;
        } else {
            lo = x;
        }
        // Newton step using the beta density as the derivative.
        let ln_pdf = (a - R::one()) * x.ln() + (b - R::one()) * (R::one() - x).ln() - ln_b;
        let pdf = ln_pdf.exp();
        let mut next = if pdf > R::zero() { x - f / pdf } else { x };
        if !(next > lo && next < hi) || !next.is_finite() {
            next = (lo + hi) * R::of(0.5);
        }
        if next == x
            || ((next == lo || next == hi) && hi - lo <= R::epsilon() * R::of(4.0))
        {
            // The bracket has collapsed to adjacent representable values;
            // no further refinement is possible.
            return Ok(best);
        }
        x = next;
    }
    Ok(best)
}

/// One-sided survival function of the Student-t distribution:
/// P(T >= t) with `df` degrees of freedom.
pub fn student_t_sf<R: Real>(t: R, df: R) -> Result<R> {
    if !(df > R::zero()) {
        return Err(Error::invalid(format!(
            "student_t_sf requires positive degrees of freedom, got {df}"
        )));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("student_t_sf statistic"));
    }
    if t < R::zero() {
        return Ok(R::one() - student_t_sf(-t, df)?);
    }
    let x = df / (df + t * t);
    let half = R::of(0.5);
    Ok(half * reg_inc_beta(x, df * half, half)?)
}
