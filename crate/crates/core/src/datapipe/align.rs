//! Face alignment: a two-point similarity transform (rotation, uniform
//! scale, translation) that levels the eyes and places them at canonical
//! positions, followed by inverse-warp bilinear resampling.

use crate::diffcomp::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Output side length of an aligned face.
pub const ALIGNED_SIZE: usize = 256;
/// Canonical left-eye center: 30% of the width from the left edge, 35% of
/// the height from the top.
pub const LEFT_EYE_TARGET: (f64, f64) = (0.30 * ALIGNED_SIZE as f64, 0.35 * ALIGNED_SIZE as f64);
/// Canonical right-eye center, mirroring the left.
pub const RIGHT_EYE_TARGET: (f64, f64) = (0.70 * ALIGNED_SIZE as f64, 0.35 * ALIGNED_SIZE as f64);

/// The similarity transform determined by two point correspondences,
/// represented as the complex map z -> alpha*z + beta.
#[derive(Clone, Copy, Debug)]
pub struct Similarity {
    alpha: (f64, f64),
    beta: (f64, f64),
}

fn c_sub(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 - b.0, a.1 - b.1)
}

fn c_mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn c_div(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let d = b.0 * b.0 + b.1 * b.1;
    ((a.0 * b.0 + a.1 * b.1) / d, (a.1 * b.0 - a.0 * b.1) / d)
}

impl Similarity {
    /// The unique rotate+scale+translate map sending `from0 -> to0` and
    /// `from1 -> to1`.
    pub fn from_two_points(
        from0: (f64, f64),
        from1: (f64, f64),
        to0: (f64, f64),
        to1: (f64, f64),
    ) -> Result<Self> {
        let denom = c_sub(from1, from0);
        if (denom.0 * denom.0 + denom.1 * denom.1).sqrt() < 1e-9 {
            return Err(Error::invalid("source points are coincident"));
        }
        let alpha = c_div(c_sub(to1, to0), denom);
        let beta = c_sub(to0, c_mul(alpha, from0));
        Ok(Self { alpha, beta })
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let m = c_mul(self.alpha, p);
        (m.0 + self.beta.0, m.1 + self.beta.1)
    }

    pub fn inverse_apply(&self, p: (f64, f64)) -> (f64, f64) {
        c_div(c_sub(p, self.beta), self.alpha)
    }
}

/// Warp a grayscale image so its eye centers land on the canonical
/// positions, producing a 256x256 tensor in [0,1]. Pixels that map outside
/// the source are zero. Eye coordinates are in source pixel units
/// (x right, y down).
pub fn align_face<R: Real>(
    raw: &Tensor<R>,
    left_eye: (f64, f64),
    right_eye: (f64, f64),
) -> Result<Tensor<R>> {
    let (h, w) = match raw.shape() {
        [h, w] => (*h, *w),
        other => return Err(Error::shape("align_face", "[h, w]", format!("{other:?}"))),
    };
    let transform =
        Similarity::from_two_points(left_eye, right_eye, LEFT_EYE_TARGET, RIGHT_EYE_TARGET)?;
    let src = raw.data();
    let sample = |x: f64, y: f64| -> f64 {
        // Bilinear interpolation with zero fill outside [0, w-1] x [0, h-1].
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mut acc = 0.0;
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let sx = x0 + dx;
                let sy = y0 + dy;
                if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                    acc += wx * wy * src[sy as usize * w + sx as usize].as_f64();
                }
            }
        }
        acc
    };
    Ok(Tensor::from_fn(&[ALIGNED_SIZE, ALIGNED_SIZE], |i| {
        let out = (
            (i % ALIGNED_SIZE) as f64,
            (i / ALIGNED_SIZE) as f64,
        );
        let (sx, sy) = transform.inverse_apply(out);
        R::of(sample(sx, sy).clamp(0.0, 1.0))
    }))
}
