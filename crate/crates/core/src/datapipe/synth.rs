//! Synthetic sketch-face generator: parametric line-drawn faces whose
//! landmark geometry and rendered strokes respond to a catalog of eight
//! synthetic action units, with per-subject geometry offsets as the
//! identity signal. Everything is deterministic per seed, so generated
//! datasets are reproducible byte-for-byte.

use rayon::prelude::*;

use super::halfface::UnilateralMap;
use super::landmarks::{canonical_landmarks, LANDMARK_COUNT};
use super::{Dataset, Sample, Side};
use crate::diffcomp::Tensor;
use crate::error::{Error, Result};
use crate::rngstream;
use crate::scalar::Real;

/// One synthetic action unit: the landmark displacements (in full-frame
/// normalized units) applied when it activates at unit intensity.
pub struct AuDef {
    pub name: &'static str,
    pub moves: &'static [(usize, f64, f64)],
}

/// The eight built-in synthetic AUs. "l"/"r" mean image-left/image-right;
/// unilateral AUs displace only same-side landmarks so a half-face sample
/// retains the full signal for its side's labels.
pub const AU_CATALOG: [AuDef; 8] = [
    AuDef {
        name: "brow_raise_l",
        moves: &[
            (17, 0.0, -0.032),
            (18, 0.0, -0.042),
            (19, 0.0, -0.046),
            (20, 0.0, -0.044),
            (21, 0.0, -0.038),
        ],
    },
    AuDef {
        name: "brow_raise_r",
        moves: &[
            (22, 0.0, -0.038),
            (23, 0.0, -0.044),
            (24, 0.0, -0.046),
            (25, 0.0, -0.042),
            (26, 0.0, -0.032),
        ],
    },
    AuDef {
        name: "brow_lower_l",
        moves: &[
            (17, 0.006, 0.018),
            (18, 0.008, 0.024),
            (19, 0.010, 0.030),
            (20, 0.012, 0.034),
            (21, 0.014, 0.036),
        ],
    },
    AuDef {
        name: "brow_lower_r",
        moves: &[
            (22, -0.014, 0.036),
            (23, -0.012, 0.034),
            (24, -0.010, 0.030),
            (25, -0.008, 0.024),
            (26, -0.006, 0.018),
        ],
    },
    AuDef {
        name: "mouth_open",
        moves: &[
            (5, 0.0, 0.010),
            (6, 0.0, 0.018),
            (7, 0.0, 0.026),
            (8, 0.0, 0.030),
            (9, 0.0, 0.026),
            (10, 0.0, 0.018),
            (11, 0.0, 0.010),
            (55, 0.0, 0.028),
            (56, 0.0, 0.036),
            (57, 0.0, 0.040),
            (58, 0.0, 0.036),
            (59, 0.0, 0.028),
            (65, 0.0, 0.034),
            (66, 0.0, 0.040),
            (67, 0.0, 0.034),
        ],
    },
    AuDef {
        name: "mouth_corner_l",
        moves: &[
            (48, -0.020, -0.028),
            (49, -0.010, -0.016),
            (59, -0.010, -0.012),
            (60, -0.014, -0.020),
        ],
    },
    AuDef {
        name: "mouth_corner_r",
        moves: &[
            (54, 0.020, -0.028),
            (53, 0.010, -0.016),
            (55, 0.010, -0.012),
            (64, 0.014, -0.020),
        ],
    },
    AuDef {
        name: "lid_tighten",
        moves: &[
            (37, 0.0, 0.013),
            (38, 0.0, 0.013),
            (43, 0.0, 0.013),
            (44, 0.0, 0.013),
            (40, 0.0, -0.013),
            (41, 0.0, -0.013),
            (46, 0.0, -0.013),
            (47, 0.0, -0.013),
        ],
    },
];

/// Built-in expression classes as fixed AU combinations (indices into
/// [`AU_CATALOG`]; combinations may reference deformations beyond a
/// dataset's labeled AU count — the label space only gates the columns).
pub const EXPR_CATALOG: [(&str, &[usize]); 4] = [
    ("neutral", &[]),
    ("happy", &[5, 6]),
    ("surprise", &[0, 1, 4]),
    ("angry", &[2, 3, 7]),
];

/// AU-index permutation realized by a horizontal mirror: lateral pairs
/// swap, bilateral AUs stay put. Valid for the full 8-AU catalog.
pub fn mirror_au_swap() -> Vec<usize> {
    vec![1, 0, 3, 2, 4, 6, 5, 7]
}

/// The label subsets each half-face keeps, positionally aligned so the
/// left and right half datasets share one semantic layout
/// (raise, lower, open, corner, tighten).
pub fn unilateral_map() -> UnilateralMap {
    UnilateralMap { left: vec![0, 2, 4, 5, 7], right: vec![1, 3, 4, 6, 7] }
}

/// Stroke polylines over landmark indices (start..=end, closed?).
const STROKES: [(usize, usize, bool); 9] = [
    (0, 16, false),  // jaw
    (17, 21, false), // left brow
    (22, 26, false), // right brow
    (27, 30, false), // nose bridge
    (31, 35, false), // nose base
    (36, 41, true),  // left eye
    (42, 47, true),  // right eye
    (48, 59, true),  // outer lips
    (60, 67, true),  // inner lips
];

const STROKE_HALF_WIDTH: f64 = 0.7;
const JITTER_SIGMA: f64 = 0.003;
const SUBJECT_OFFSET_SIGMA: f64 = 0.006;
const AU_ACTIVE_PROB: f64 = 0.4;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_subjects: usize,
    pub samples_per_subject: usize,
    /// Labeled AU columns; at most the 8 built-in deformations.
    pub au_count: usize,
    /// Expression classes; at most the 4 built-in combinations.
    pub expr_count: usize,
    /// Square output image side length (even, >= 16).
    pub image_size: usize,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.samples_per_subject == 0 {
            return Err(Error::invalid("need at least one subject and one sample each"));
        }
        if self.au_count == 0 || self.au_count > AU_CATALOG.len() {
            return Err(Error::invalid(format!(
                "au_count must be 1..={}, got {}",
                AU_CATALOG.len(),
                self.au_count
            )));
        }
        if self.expr_count == 0 || self.expr_count > EXPR_CATALOG.len() {
            return Err(Error::invalid(format!(
                "expr_count must be 1..={}, got {}",
                EXPR_CATALOG.len(),
                self.expr_count
            )));
        }
        if self.image_size < 16 || self.image_size % 2 != 0 {
            return Err(Error::invalid(format!(
                "image_size must be even and >= 16, got {}",
                self.image_size
            )));
        }
        Ok(())
    }
}

struct SubjectTraits {
    base: Vec<(f64, f64)>,
    gain: f64,
}

fn subject_traits(seed: u64, subject: &str) -> SubjectTraits {
    let mut rng = rngstream::stream(seed, &format!("subject/{subject}"));
    use rand::Rng;
    // Draw order is fixed: x scale, y scale, stroke gain, then per-landmark
    // offsets in index order.
    let scale_x = 1.0 + 0.06 * (2.0 * rng.gen::<f64>() - 1.0);
    let scale_y = 1.0 + 0.06 * (2.0 * rng.gen::<f64>() - 1.0);
    let gain = 0.75 + 0.25 * rng.gen::<f64>();
    let canon: Tensor<f64> = canonical_landmarks();
    let base = (0..LANDMARK_COUNT)
        .map(|i| {
            let cx = canon.data()[i * 2];
            let cy = canon.data()[i * 2 + 1];
            let ox = SUBJECT_OFFSET_SIGMA * rngstream::std_normal::<f64, _>(&mut rng);
            let oy = SUBJECT_OFFSET_SIGMA * rngstream::std_normal::<f64, _>(&mut rng);
            (0.5 + (cx - 0.5) * scale_x + ox, 0.5 + (cy - 0.5) * scale_y + oy)
        })
        .collect();
    SubjectTraits { base, gain }
}

/// Render an anti-aliased line sketch of the landmark geometry.
///
/// Residuals are computed as (p - a) - t*(b - a), never through an
/// intermediate projected point, and segment endpoints are ordered by
/// (y, x); together these make the rasterization of an exactly mirrored
/// geometry the exact mirror image, bit for bit. Pixel values are snapped
/// to the 8-bit grid so PNG round trips are lossless.
pub fn render_face<R: Real>(landmarks: &Tensor<R>, size: usize, gain: f64) -> Result<Tensor<R>> {
    if landmarks.shape() != [LANDMARK_COUNT, 2] {
        return Err(Error::shape(
            "render_face",
            format!("[{LANDMARK_COUNT}, 2]"),
            format!("{:?}", landmarks.shape()),
        ));
    }
    if !(0.0 < gain && gain <= 1.0) {
        return Err(Error::invalid(format!("stroke gain must be in (0,1], got {gain}")));
    }
    let (h, w) = (size, size);
    let px: Vec<(f64, f64)> = (0..LANDMARK_COUNT)
        .map(|i| {
            (
                landmarks.data()[i * 2].as_f64() * (w - 1) as f64,
                landmarks.data()[i * 2 + 1].as_f64() * (h - 1) as f64,
            )
        })
        .collect();
    let mut buf = vec![0.0f64; h * w];
    for &(start, end, closed) in &STROKES {
        for i in start..end {
            draw_segment(&mut buf, h, w, px[i], px[i + 1], gain);
        }
        if closed {
            draw_segment(&mut buf, h, w, px[end], px[start], gain);
        }
    }
    Ok(Tensor::from_fn(&[h, w], |i| {
        R::of((buf[i] * 255.0).round() / 255.0)
    }))
}

fn draw_segment(buf: &mut [f64], h: usize, w: usize, a: (f64, f64), b: (f64, f64), gain: f64) {
    // Canonical endpoint order, stable under horizontal mirroring as long
    // as no off-axis segment is exactly horizontal.
    let ((ax, ay), (bx, by)) = if (a.1, a.0) <= (b.1, b.0) { (a, b) } else { (b, a) };
    let (ux, uy) = (bx - ax, by - ay);
    let len2 = ux * ux + uy * uy;
    let reach = STROKE_HALF_WIDTH + 0.5;
    let x0 = (ax.min(bx) - reach).floor().max(0.0) as usize;
    let x1 = ((ax.max(bx) + reach).ceil() as usize).min(w.saturating_sub(1));
    let y0 = (ay.min(by) - reach).floor().max(0.0) as usize;
    let y1 = ((ay.max(by) + reach).ceil() as usize).min(h.saturating_sub(1));
    for iy in y0..=y1 {
        for ix in x0..=x1 {
            let dx = ix as f64 - ax;
            let dy = iy as f64 - ay;
            let t = if len2 > 0.0 {
                (dx * ux + dy * uy) / len2
            } else {
                0.0
            }
            .clamp(0.0, 1.0);
            let rx = dx - t * ux;
            let ry = dy - t * uy;
            let d = (rx * rx + ry * ry).sqrt();
            let cov = (reach - d).clamp(0.0, 1.0) * gain;
            let cell = &mut buf[iy * w + ix];
            if cov > *cell {
                *cell = cov;
            }
        }
    }
}

fn displace(points: &mut [(f64, f64)], au: usize, intensity: f64) {
    for &(idx, dx, dy) in AU_CATALOG[au].moves {
        points[idx].0 += intensity * dx;
        points[idx].1 += intensity * dy;
    }
}

fn finish_sample<R: Real>(
    points: Vec<(f64, f64)>,
    size: usize,
    gain: f64,
    au_labels: Option<Vec<u8>>,
    expr_label: Option<usize>,
    subject_id: String,
) -> Result<Sample<R>> {
    let landmarks = Tensor::from_fn(&[LANDMARK_COUNT, 2], |i| {
        let p = points[i / 2];
        let v = if i % 2 == 0 { p.0 } else { p.1 };
        R::of(v.clamp(0.0, 1.0))
    });
    let image = render_face(&landmarks, size, gain)?;
    Ok(Sample { image, landmarks, au_labels, expr_label, subject_id, side: Side::Full })
}

/// Generate the synthetic dataset: per subject, even-indexed samples carry
/// Bernoulli AU labels and odd-indexed samples carry a cycling expression
/// class. Rendering parallelizes per sample; per-sample random streams
/// keep the output independent of scheduling.
pub fn generate<R: Real>(cfg: &SynthConfig) -> Result<Dataset<R>> {
    cfg.validate()?;
    let subjects: Vec<String> = (0..cfg.n_subjects).map(|i| format!("s{i:02}")).collect();
    let traits: Vec<SubjectTraits> = subjects
        .iter()
        .map(|sid| subject_traits(cfg.seed, sid))
        .collect();

    let tasks: Vec<(usize, usize)> = (0..cfg.n_subjects)
        .flat_map(|si| (0..cfg.samples_per_subject).map(move |j| (si, j)))
        .collect();

    let samples: Vec<Sample<R>> = tasks
        .par_iter()
        .map(|&(si, j)| {
            let sid = &subjects[si];
            let t = &traits[si];
            let mut rng = rngstream::stream(cfg.seed, &format!("sample/{sid}/{j}"));
            use rand::Rng;
            let mut points = t.base.clone();
            let (au_labels, expr_label);
            if j % 2 == 0 {
                // AU-labeled sample. Fixed draw order: c activation flags,
                // then one intensity per active AU in index order.
                let active: Vec<bool> = (0..cfg.au_count)
                    .map(|_| rng.gen::<f64>() < AU_ACTIVE_PROB)
                    .collect();
                for (au, on) in active.iter().enumerate() {
                    if *on {
                        let intensity = 0.8 + 0.4 * rng.gen::<f64>();
                        displace(&mut points, au, intensity);
                    }
                }
                au_labels = Some(active.iter().map(|&b| b as u8).collect());
                expr_label = None;
            } else {
                // Expression-labeled sample; classes cycle so each subject
                // covers all of them.
                let class = (j / 2 + si) % cfg.expr_count;
                for &au in EXPR_CATALOG[class].1 {
                    let intensity = 0.8 + 0.4 * rng.gen::<f64>();
                    displace(&mut points, au, intensity);
                }
                au_labels = None;
                expr_label = Some(class);
            }
            for p in &mut points {
                p.0 += JITTER_SIGMA * rngstream::std_normal::<f64, _>(&mut rng);
                p.1 += JITTER_SIGMA * rngstream::std_normal::<f64, _>(&mut rng);
            }
            finish_sample(points, cfg.image_size, t.gain, au_labels, expr_label, sid.clone())
        })
        .collect::<Result<_>>()?;

    let dataset = Dataset {
        au_names: AU_CATALOG[..cfg.au_count]
            .iter()
            .map(|a| a.name.to_string())
            .collect(),
        expr_count: cfg.expr_count,
        side: Side::Full,
        samples,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// An exactly bilaterally symmetric neutral face: canonical geometry, no
/// subject offsets, no jitter, no active AUs. Its rendered image and
/// landmarks are bit-exact mirror images of themselves.
pub fn neutral_symmetric_sample<R: Real>(image_size: usize) -> Result<Sample<R>> {
    if image_size < 16 || image_size % 2 != 0 {
        return Err(Error::invalid(format!(
            "image_size must be even and >= 16, got {image_size}"
        )));
    }
    let landmarks: Tensor<R> = canonical_landmarks();
    let image = render_face(&landmarks, image_size, 0.875)?;
    Ok(Sample {
        image,
        landmarks,
        au_labels: Some(vec![0; AU_CATALOG.len()]),
        expr_label: None,
        subject_id: "canonical".into(),
        side: Side::Full,
    })
}
