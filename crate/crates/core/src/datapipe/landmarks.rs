//! The 68-point facial landmark layout: canonical neutral geometry, the
//! left/right/midline partition, and the horizontal-mirror permutation.
//!
//! Index ranges follow the standard 68-point annotation scheme: jaw 0-16,
//! brows 17-21 / 22-26, nose bridge 27-30, nose base 31-35, eyes 36-41 /
//! 42-47, outer lips 48-59, inner lips 60-67. "Left"/"right" always mean
//! image-left/image-right.

use crate::diffcomp::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const LANDMARK_COUNT: usize = 68;
pub const HALF_LANDMARK_COUNT: usize = 39;

/// Neutral-face coordinates on a 256x256 grid (x right, y down). Every
/// value is an exact multiple of 1/256 once normalized, and the table is
/// exactly bilaterally symmetric: `CANONICAL_GRID[MIRROR[i]] = (256 - x, y)`.
pub const CANONICAL_GRID: [(u16, u16); LANDMARK_COUNT] = [
    // Jaw 0-16.
    (54, 92),
    (57, 116),
    (61, 140),
    (67, 162),
    (77, 183),
    (90, 201),
    (104, 215),
    (116, 226),
    (128, 230),
    (140, 226),
    (152, 215),
    (166, 201),
    (179, 183),
    (189, 162),
    (195, 140),
    (199, 116),
    (202, 92),
    // Left brow 17-21, right brow 22-26.
    (66, 74),
    (78, 66),
    (92, 62),
    (106, 64),
    (118, 70),
    (138, 70),
    (150, 64),
    (164, 62),
    (178, 66),
    (190, 74),
    // Nose bridge 27-30 (midline), nose base 31-35.
    (128, 88),
    (128, 104),
    (128, 120),
    (128, 136),
    (112, 148),
    (120, 152),
    (128, 154),
    (136, 152),
    (144, 148),
    // Left eye 36-41, right eye 42-47.
    (72, 90),
    (84, 84),
    (98, 85),
    (110, 90),
    (98, 96),
    (84, 95),
    (146, 90),
    (158, 85),
    (172, 84),
    (184, 90),
    (172, 95),
    (158, 96),
    // Outer lips 48-59.
    (96, 184),
    (106, 177),
    (117, 173),
    (128, 172),
    (139, 173),
    (150, 177),
    (160, 184),
    (150, 192),
    (139, 197),
    (128, 198),
    (117, 197),
    (106, 192),
    // Inner lips 60-67.
    (104, 184),
    (116, 182),
    (128, 181),
    (140, 182),
    (152, 184),
    (140, 186),
    (128, 187),
    (116, 186),
];

/// Horizontal-mirror permutation: point i maps to MIRROR[i]. An involution;
/// midline points are fixed.
pub const MIRROR: [usize; LANDMARK_COUNT] = [
    16, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0, // jaw
    26, 25, 24, 23, 22, 21, 20, 19, 18, 17, // brows
    27, 28, 29, 30, // bridge
    35, 34, 33, 32, 31, // nose base
    45, 44, 43, 42, 47, 46, 39, 38, 37, 36, 41, 40, // eyes
    54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55, // outer lips
    64, 63, 62, 61, 60, 67, 66, 65, // inner lips
];

/// The 10 points on the facial midline.
pub const MIDLINE: [usize; 10] = [8, 27, 28, 29, 30, 33, 51, 57, 62, 66];

/// The 29 points strictly on the image-left side.
pub const LEFT_SIDE: [usize; 29] = [
    0, 1, 2, 3, 4, 5, 6, 7, 17, 18, 19, 20, 21, 31, 32, 36, 37, 38, 39, 40, 41, 48, 49, 50,
    58, 59, 60, 61, 67,
];

/// Landmark indices retained by the left half-face sample: the 29 left-side
/// points plus the 10 midline points, in ascending index order.
pub const HALF_LEFT: [usize; HALF_LANDMARK_COUNT] = [
    0, 1, 2, 3, 4, 5, 6, 7, 8, 17, 18, 19, 20, 21, 27, 28, 29, 30, 31, 32, 33, 36, 37, 38,
    39, 40, 41, 48, 49, 50, 51, 57, 58, 59, 60, 61, 62, 66, 67,
];

/// Landmark indices retained by the right half-face sample, ordered as the
/// mirror images of [`HALF_LEFT`] so the two halves align semantically.
pub const HALF_RIGHT: [usize; HALF_LANDMARK_COUNT] = [
    16, 15, 14, 13, 12, 11, 10, 9, 8, 26, 25, 24, 23, 22, 27, 28, 29, 30, 35, 34, 33, 45,
    44, 43, 42, 47, 46, 54, 53, 52, 51, 57, 56, 55, 64, 63, 62, 66, 65,
];

/// Canonical neutral landmarks normalized to [0,1].
pub fn canonical_landmarks<R: Real>() -> Tensor<R> {
    Tensor::from_fn(&[LANDMARK_COUNT, 2], |i| {
        let (x, y) = CANONICAL_GRID[i / 2];
        let g = if i % 2 == 0 { x } else { y };
        R::of(g as f64 / 256.0)
    })
}

/// Scale pixel-space landmark coordinates into [0,1] by the image
/// dimensions, clamping anything that falls marginally outside.
pub fn normalize_landmarks<R: Real>(
    points: &Tensor<R>,
    width: usize,
    height: usize,
) -> Result<Tensor<R>> {
    if points.rank() != 2 || points.shape()[1] != 2 {
        return Err(Error::shape(
            "normalize_landmarks",
            "[l, 2]",
            format!("{:?}", points.shape()),
        ));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    let (w, h) = (R::of(width as f64), R::of(height as f64));
    Ok(Tensor::from_fn(points.shape(), |i| {
        let v = points.data()[i] / if i % 2 == 0 { w } else { h };
        v.max(R::zero()).min(R::one())
    }))
}
