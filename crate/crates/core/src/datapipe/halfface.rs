//! Deriving half-face samples from full faces: the left half is the left
//! image columns; the right half is mirrored so both halves share one
//! orientation and a single half-face model can serve either side.

use super::landmarks::{HALF_LEFT, HALF_RIGHT, LANDMARK_COUNT, MIRROR};
use super::{Sample, Side};
use crate::diffcomp::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which AU label indices each half keeps, positionally aligned: entry i of
/// `left` and entry i of `right` must be lateral counterparts (bilateral
/// AUs appear in both lists at the same position), so the two halves emit
/// semantically parallel label vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnilateralMap {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

impl UnilateralMap {
    pub fn validate(&self, au_count: usize) -> Result<()> {
        if self.left.len() != self.right.len() {
            return Err(Error::invalid(
                "unilateral label lists must have equal length",
            ));
        }
        if self
            .left
            .iter()
            .chain(self.right.iter())
            .any(|&i| i >= au_count)
        {
            return Err(Error::invalid(format!(
                "unilateral label index out of range for {au_count} AUs"
            )));
        }
        Ok(())
    }
}

/// Landmark coordinates are snapped to this dyadic grid before mirroring;
/// on it, x -> 1-x is exact in floating point and an exact involution, so
/// mirror/split compositions commute bit-for-bit. The step (~1.5e-8) is
/// far below any geometric signal.
const GRID: f64 = 67_108_864.0; // 2^26

fn snap<R: Real>(x: R) -> R {
    let g = R::of(GRID);
    (x * g).round() / g
}

fn reflect<R: Real>(x: R) -> R {
    R::one() - snap(x)
}

fn unit_clamp<R: Real>(x: R) -> R {
    x.max(R::zero()).min(R::one())
}

/// Split a full 68-landmark sample into (left, right) half samples.
///
/// Left: image columns [0, w/2), landmarks `HALF_LEFT` with x doubled.
/// Right: image columns [w/2, w) mirrored horizontally, landmarks
/// `HALF_RIGHT` with x -> 2(1-x). AU labels are restricted per `map`;
/// the expression label is carried to both halves.
pub fn split_half<R: Real>(
    sample: &Sample<R>,
    map: &UnilateralMap,
) -> Result<(Sample<R>, Sample<R>)> {
    if sample.side != Side::Full {
        return Err(Error::invalid("split_half requires a full-face sample"));
    }
    if sample.landmark_count() != LANDMARK_COUNT {
        return Err(Error::shape(
            "split_half landmarks",
            format!("[{LANDMARK_COUNT}, 2]"),
            format!("{:?}", sample.landmarks.shape()),
        ));
    }
    let (h, w) = (sample.image.shape()[0], sample.image.shape()[1]);
    if w % 2 != 0 {
        return Err(Error::invalid(format!("image width {w} is not even")));
    }
    if let Some(labels) = &sample.au_labels {
        map.validate(labels.len())?;
    }
    let half = w / 2;
    let img = sample.image.data();
    let left_image = Tensor::from_fn(&[h, half], |i| {
        let (r, c) = (i / half, i % half);
        img[r * w + c]
    });
    let right_image = Tensor::from_fn(&[h, half], |i| {
        let (r, c) = (i / half, i % half);
        img[r * w + (w - 1 - c)]
    });

    let lm = sample.landmarks.data();
    let two = R::of(2.0);
    let left_landmarks = Tensor::from_fn(&[HALF_LEFT.len(), 2], |i| {
        let idx = HALF_LEFT[i / 2];
        if i % 2 == 0 {
            unit_clamp(two * snap(lm[idx * 2]))
        } else {
            lm[idx * 2 + 1]
        }
    });
    let right_landmarks = Tensor::from_fn(&[HALF_RIGHT.len(), 2], |i| {
        let idx = HALF_RIGHT[i / 2];
        if i % 2 == 0 {
            unit_clamp(two * reflect(lm[idx * 2]))
        } else {
            lm[idx * 2 + 1]
        }
    });

    let pick = |keep: &[usize]| {
        sample
            .au_labels
            .as_ref()
            .map(|labels| keep.iter().map(|&i| labels[i]).collect::<Vec<u8>>())
    };
    let left = Sample {
        image: left_image,
        landmarks: left_landmarks,
        au_labels: pick(&map.left),
        expr_label: sample.expr_label,
        subject_id: sample.subject_id.clone(),
        side: Side::Left,
    };
    let right = Sample {
        image: right_image,
        landmarks: right_landmarks,
        au_labels: pick(&map.right),
        expr_label: sample.expr_label,
        subject_id: sample.subject_id.clone(),
        side: Side::Right,
    };
    Ok((left, right))
}

/// Mirror a full sample horizontally: image columns reversed, landmarks
/// re-indexed through the mirror permutation with x -> 1-x, and AU labels
/// permuted by `au_swap` (the lateral-counterpart permutation, e.g.
/// swapping left-brow-raise with right-brow-raise).
pub fn mirror_full<R: Real>(sample: &Sample<R>, au_swap: &[usize]) -> Result<Sample<R>> {
    if sample.side != Side::Full {
        return Err(Error::invalid("mirror_full requires a full-face sample"));
    }
    if sample.landmark_count() != LANDMARK_COUNT {
        return Err(Error::shape(
            "mirror_full landmarks",
            format!("[{LANDMARK_COUNT}, 2]"),
            format!("{:?}", sample.landmarks.shape()),
        ));
    }
    let (h, w) = (sample.image.shape()[0], sample.image.shape()[1]);
    let img = sample.image.data();
    let image = Tensor::from_fn(&[h, w], |i| {
        let (r, c) = (i / w, i % w);
        img[r * w + (w - 1 - c)]
    });
    let lm = sample.landmarks.data();
    let landmarks = Tensor::from_fn(&[LANDMARK_COUNT, 2], |i| {
        let src = MIRROR[i / 2];
        if i % 2 == 0 {
            reflect(lm[src * 2])
        } else {
            lm[src * 2 + 1]
        }
    });
    let au_labels = match &sample.au_labels {
        Some(labels) => {
            if au_swap.len() != labels.len() || au_swap.iter().any(|&i| i >= labels.len()) {
                return Err(Error::invalid(
                    "AU swap permutation does not match the label vector",
                ));
            }
            Some(au_swap.iter().map(|&i| labels[i]).collect())
        }
        None => None,
    };
    Ok(Sample {
        image,
        landmarks,
        au_labels,
        expr_label: sample.expr_label,
        subject_id: sample.subject_id.clone(),
        side: Side::Full,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::synth;

    fn samples_equal(a: &Sample<f64>, b: &Sample<f64>) -> bool {
        a.image.data() == b.image.data()
            && a.landmarks.data() == b.landmarks.data()
            && a.au_labels == b.au_labels
            && a.expr_label == b.expr_label
    }

    #[test]
    fn halves_have_39_landmarks_and_half_width() {
        let sample = synth::neutral_symmetric_sample::<f64>(64).unwrap();
        let (l, r) = split_half(&sample, &synth::unilateral_map()).unwrap();
        for s in [&l, &r] {
            assert_eq!(s.landmark_count(), 39);
            assert_eq!(s.image.shape(), [64, 32]);
            s.validate(synth::unilateral_map().left.len(), 4).unwrap();
        }
        assert_eq!(l.side, Side::Left);
        assert_eq!(r.side, Side::Right);
    }

    #[test]
    fn symmetric_face_splits_into_identical_halves() {
        let sample = synth::neutral_symmetric_sample::<f64>(64).unwrap();
        let (l, r) = split_half(&sample, &synth::unilateral_map()).unwrap();
        assert!(samples_equal(&l, &r), "halves of a symmetric face differ");
    }

    #[test]
    fn midline_x_becomes_full_scale_in_the_left_half() {
        let sample = synth::neutral_symmetric_sample::<f64>(64).unwrap();
        let (l, _) = split_half(&sample, &synth::unilateral_map()).unwrap();
        // Chin (original index 8) sits at position 8 in HALF_LEFT.
        let chin = HALF_LEFT.iter().position(|&i| i == 8).unwrap();
        assert_eq!(l.landmarks.data()[chin * 2], 1.0);
    }

    #[test]
    fn mirroring_before_splitting_swaps_the_outputs_exactly() {
        // An asymmetric sample: active unilateral AUs, subject geometry
        // offsets, jitter.
        let ds = synth::generate::<f64>(&synth::SynthConfig {
            seed: 31,
            n_subjects: 1,
            samples_per_subject: 4,
            au_count: 8,
            expr_count: 4,
            image_size: 64,
        })
        .unwrap();
        let map = synth::unilateral_map();
        for sample in &ds.samples {
            let mirrored = mirror_full(sample, &synth::mirror_au_swap()).unwrap();
            let (l0, r0) = split_half(sample, &map).unwrap();
            let (l1, r1) = split_half(&mirrored, &map).unwrap();
            assert!(samples_equal(&l1, &r0), "mirror+split left != original right");
            assert!(samples_equal(&r1, &l0), "mirror+split right != original left");
        }
    }

    #[test]
    fn wrong_side_or_landmark_count_is_rejected() {
        let sample = synth::neutral_symmetric_sample::<f64>(64).unwrap();
        let map = synth::unilateral_map();
        let (l, _) = split_half(&sample, &map).unwrap();
        assert!(split_half(&l, &map).is_err());
        assert!(mirror_full(&l, &synth::mirror_au_swap()).is_err());

        let mut truncated = sample.clone();
        truncated.landmarks = Tensor::zeros(&[10, 2]);
        assert!(split_half(&truncated, &map).is_err());
    }
}
