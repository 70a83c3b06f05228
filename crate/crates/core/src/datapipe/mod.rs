//! Data model and pipeline: samples and datasets, CSV manifest persistence,
//! subject-independent fold splitting, face alignment, half-face
//! derivation, and the synthetic sketch-face generator used for desk-scale
//! verification.

pub mod align;
pub mod halfface;
pub mod landmarks;
pub mod synth;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcomp::Tensor;
use crate::error::{Error, Result};
use crate::rngstream;
use crate::scalar::Real;

/// Which portion of the face a sample covers. Full faces are square; half
/// faces keep the full height and half the width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Full,
    Left,
    Right,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Full => "full",
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Side::Full),
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(Error::invalid(format!("unknown side {other:?}"))),
        }
    }
}

/// One face observation: a grayscale image, its landmarks in [0,1], and
/// membership in at most one of the two label spaces (AU vector or
/// expression class).
#[derive(Clone, Debug)]
pub struct Sample<R: Real> {
    pub image: Tensor<R>,
    pub landmarks: Tensor<R>,
    pub au_labels: Option<Vec<u8>>,
    pub expr_label: Option<usize>,
    pub subject_id: String,
    pub side: Side,
}

impl<R: Real> Sample<R> {
    /// Check every type invariant against the dataset's label-space sizes.
    pub fn validate(&self, au_count: usize, expr_count: usize) -> Result<()> {
        let (h, w) = match self.image.shape() {
            [h, w] => (*h, *w),
            other => {
                return Err(Error::shape("sample image", "[h, w]", format!("{other:?}")))
            }
        };
        let shape_ok = match self.side {
            Side::Full => w == h,
            Side::Left | Side::Right => 2 * w == h,
        };
        if !shape_ok {
            return Err(Error::Dataset(format!(
                "{}x{} image inconsistent with side {:?} (full faces are square, halves half-width)",
                h, w, self.side
            )));
        }
        if self.image.data().iter().any(|v| *v < R::zero() || *v > R::one()) {
            return Err(Error::Dataset("image values outside [0,1]".into()));
        }
        if self.landmarks.rank() != 2 || self.landmarks.shape()[1] != 2 {
            return Err(Error::shape(
                "sample landmarks",
                "[l, 2]",
                format!("{:?}", self.landmarks.shape()),
            ));
        }
        if self.landmarks.data().iter().any(|v| *v < R::zero() || *v > R::one()) {
            return Err(Error::Dataset("landmarks outside [0,1]".into()));
        }
        if let Some(labels) = &self.au_labels {
            if labels.len() != au_count {
                return Err(Error::Dataset(format!(
                    "AU label vector has length {}, dataset declares {au_count}",
                    labels.len()
                )));
            }
            if labels.iter().any(|v| *v > 1) {
                return Err(Error::Dataset("AU labels must be 0/1".into()));
            }
        }
        if let Some(class) = self.expr_label {
            if class >= expr_count {
                return Err(Error::Dataset(format!(
                    "expression label {class} out of range for {expr_count} classes"
                )));
            }
        }
        if self.subject_id.is_empty() {
            return Err(Error::Dataset("empty subject id".into()));
        }
        Ok(())
    }

    pub fn landmark_count(&self) -> usize {
        self.landmarks.shape()[0]
    }
}

/// An immutable collection of samples sharing one label-space header.
#[derive(Clone, Debug)]
pub struct Dataset<R: Real> {
    pub au_names: Vec<String>,
    pub expr_count: usize,
    pub side: Side,
    pub samples: Vec<Sample<R>>,
}

impl<R: Real> Dataset<R> {
    pub fn au_count(&self) -> usize {
        self.au_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.au_names.is_empty() || self.expr_count == 0 {
            return Err(Error::Dataset("header must declare AU names and classes".into()));
        }
        let mut lcount = None;
        for (i, s) in self.samples.iter().enumerate() {
            s.validate(self.au_count(), self.expr_count)
                .map_err(|e| Error::Dataset(format!("sample {i}: {e}")))?;
            if s.side != self.side {
                return Err(Error::Dataset(format!(
                    "sample {i} has side {:?}, dataset is {:?}",
                    s.side, self.side
                )));
            }
            match lcount {
                None => lcount = Some(s.landmark_count()),
                Some(l) if l != s.landmark_count() => {
                    return Err(Error::Dataset(format!(
                        "sample {i} has {} landmarks, expected {l}",
                        s.landmark_count()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Distinct subject ids, sorted.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.samples.iter().map(|s| s.subject_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn au_samples(&self) -> Vec<&Sample<R>> {
        self.samples.iter().filter(|s| s.au_labels.is_some()).collect()
    }

    pub fn expr_samples(&self) -> Vec<&Sample<R>> {
        self.samples.iter().filter(|s| s.expr_label.is_some()).collect()
    }

    /// Clone out the samples belonging to the given subjects.
    pub fn subset_by_subjects(&self, keep: &BTreeSet<String>) -> Dataset<R> {
        Dataset {
            au_names: self.au_names.clone(),
            expr_count: self.expr_count,
            side: self.side,
            samples: self
                .samples
                .iter()
                .filter(|s| keep.contains(&s.subject_id))
                .cloned()
                .collect(),
        }
    }
}

/// Subject-disjoint fold assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Vec<String>>,
}

impl FoldSplit {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds
            .iter()
            .position(|f| f.iter().any(|s| s == subject))
    }

    /// Verify the folds partition exactly the given subject set.
    pub fn assert_partition(&self, subjects: &BTreeSet<String>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for fold in &self.folds {
            for s in fold {
                if !seen.insert(s.clone()) {
                    return Err(Error::Dataset(format!("subject {s} appears in two folds")));
                }
            }
        }
        if &seen != subjects {
            return Err(Error::Dataset(
                "fold subjects do not match the dataset's subject set".into(),
            ));
        }
        Ok(())
    }
}

/// Shuffle the distinct subjects by seed, then deal them round-robin into
/// `k` folds. The same seed always yields the same split.
pub fn kfold_subject_split<R: Real>(
    dataset: &Dataset<R>,
    k: usize,
    seed: u64,
) -> Result<FoldSplit> {
    if k == 0 {
        return Err(Error::invalid("fold count must be positive"));
    }
    let mut subjects = dataset.subjects();
    if subjects.len() < k {
        return Err(Error::invalid(format!(
            "{} subjects cannot fill {k} folds",
            subjects.len()
        )));
    }
    use rand::seq::SliceRandom;
    let mut rng = rngstream::stream(seed, "fold-split");
    subjects.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, s) in subjects.into_iter().enumerate() {
        folds[i % k].push(s);
    }
    Ok(FoldSplit { folds })
}

fn meta_line(expr_count: usize, side: Side) -> String {
    format!("# expr_count={expr_count} side={}\n", side.as_str())
}

/// Write a dataset to `dir` as `manifest.csv` plus per-sample 8-bit
/// grayscale PNGs and landmark CSVs. Returns the manifest path.
///
/// Pixel values are quantized to the 8-bit grid when samples are generated,
/// so a save/load round trip reproduces the dataset exactly.
pub fn save_dataset<R: Real>(dataset: &Dataset<R>, dir: &Path) -> Result<PathBuf> {
    dataset.validate()?;
    if dataset.samples.is_empty() {
        return Err(Error::Dataset("refusing to save an empty dataset".into()));
    }
    for name in &dataset.au_names {
        if name.is_empty() || name.contains(',') || name.contains('\n') {
            return Err(Error::Dataset(format!("AU name {name:?} is not manifest-safe")));
        }
    }
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("landmarks"))?;

    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "image_path".to_string(),
        "landmark_path".to_string(),
        "subject_id".to_string(),
        "expr_label".to_string(),
    ];
    header.extend(dataset.au_names.iter().map(|n| format!("au_{n}")));
    writer.write_record(&header).map_err(Error::from)?;

    for (i, sample) in dataset.samples.iter().enumerate() {
        let image_rel = format!("images/img_{i:05}.png");
        let landmark_rel = format!("landmarks/lmk_{i:05}.csv");
        write_png(&sample.image, &dir.join(&image_rel))?;
        write_landmark_csv(&sample.landmarks, &dir.join(&landmark_rel))?;

        let mut record = vec![
            image_rel,
            landmark_rel,
            sample.subject_id.clone(),
            sample.expr_label.map(|e| e.to_string()).unwrap_or_default(),
        ];
        match &sample.au_labels {
            Some(labels) => record.extend(labels.iter().map(|v| v.to_string())),
            None => record.extend(std::iter::repeat(String::new()).take(dataset.au_count())),
        }
        writer.write_record(&record).map_err(Error::from)?;
    }

    let body = writer
        .into_inner()
        .map_err(|e| Error::Dataset(format!("manifest serialization failed: {e}")))?;
    let mut contents = meta_line(dataset.expr_count, dataset.side).into_bytes();
    contents.extend_from_slice(&body);
    let manifest = dir.join("manifest.csv");
    fs::write(&manifest, contents)?;
    Ok(manifest)
}

/// Read a dataset back from a manifest written by [`save_dataset`] (or
/// assembled by hand in the same format). Paths are resolved relative to
/// the manifest's directory; samples load in parallel.
pub fn load_dataset<R: Real>(manifest: &Path) -> Result<Dataset<R>> {
    let text = fs::read_to_string(manifest)?;
    let (meta, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Dataset("manifest is empty".into()))?;
    let meta = meta
        .strip_prefix('#')
        .ok_or_else(|| Error::Dataset("manifest must start with a '# key=value' metadata line".into()))?;
    let mut expr_count = None;
    let mut side = None;
    for pair in meta.split_whitespace() {
        match pair.split_once('=') {
            Some(("expr_count", v)) => {
                expr_count = Some(v.parse::<usize>().map_err(|_| {
                    Error::Dataset(format!("bad expr_count {v:?} in metadata"))
                })?)
            }
            Some(("side", v)) => side = Some(Side::parse(v)?),
            _ => return Err(Error::Dataset(format!("unknown metadata entry {pair:?}"))),
        }
    }
    let expr_count =
        expr_count.ok_or_else(|| Error::Dataset("metadata missing expr_count".into()))?;
    let side = side.ok_or_else(|| Error::Dataset("metadata missing side".into()))?;

    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(body.as_bytes());
    let headers = reader.headers().map_err(Error::from)?.clone();
    let fixed = ["image_path", "landmark_path", "subject_id", "expr_label"];
    if headers.len() < fixed.len() + 1 {
        return Err(Error::Dataset("manifest header is missing AU columns".into()));
    }
    for (i, name) in fixed.iter().enumerate() {
        if &headers[i] != *name {
            return Err(Error::Dataset(format!(
                "manifest column {i} is {:?}, expected {name:?}",
                &headers[i]
            )));
        }
    }
    let au_names: Vec<String> = headers
        .iter()
        .skip(fixed.len())
        .map(|h| {
            h.strip_prefix("au_")
                .map(String::from)
                .ok_or_else(|| Error::Dataset(format!("AU column {h:?} must be named au_<name>")))
        })
        .collect::<Result<_>>()?;
    let au_count = au_names.len();

    let rows: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)?;
    if rows.is_empty() {
        return Err(Error::Dataset("manifest has no samples".into()));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));

    let samples: Vec<Sample<R>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, record)| parse_row(record, i + 1, base, au_count, expr_count, side))
        .collect::<Result<_>>()?;

    let dataset = Dataset { au_names, expr_count, side, samples };
    dataset.validate()?;
    Ok(dataset)
}

fn parse_row<R: Real>(
    record: &csv::StringRecord,
    row: usize,
    base: &Path,
    au_count: usize,
    expr_count: usize,
    side: Side,
) -> Result<Sample<R>> {
    let fail = |message: String| Error::Manifest { row, message };
    if record.len() != 4 + au_count {
        return Err(fail(format!(
            "expected {} fields, got {}",
            4 + au_count,
            record.len()
        )));
    }
    let image = read_png(&base.join(&record[0]))
        .map_err(|e| fail(format!("image {:?}: {e}", &record[0])))?;
    let landmarks = read_landmark_csv(&base.join(&record[1]))
        .map_err(|e| fail(format!("landmarks {:?}: {e}", &record[1])))?;
    let subject_id = record[2].to_string();
    if subject_id.is_empty() {
        return Err(fail("empty subject id".into()));
    }
    let expr_label = if record[3].is_empty() {
        None
    } else {
        let class: usize = record[3]
            .parse()
            .map_err(|_| fail(format!("bad expression label {:?}", &record[3])))?;
        if class >= expr_count {
            return Err(fail(format!("expression label {class} >= {expr_count}")));
        }
        Some(class)
    };
    let au_fields: Vec<&str> = (0..au_count).map(|j| &record[4 + j]).collect();
    let empties = au_fields.iter().filter(|f| f.is_empty()).count();
    let au_labels = if empties == au_count {
        None
    } else if empties == 0 {
        Some(
            au_fields
                .iter()
                .map(|f| match *f {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(fail(format!("AU label {other:?} is not 0/1"))),
                })
                .collect::<Result<Vec<u8>>>()?,
        )
    } else {
        return Err(fail("AU labels must be all present or all empty".into()));
    };
    Ok(Sample { image, landmarks, au_labels, expr_label, subject_id, side })
}

fn write_png<R: Real>(image: &Tensor<R>, path: &Path) -> Result<()> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.as_f64() * 255.0).round() as u8)
        .collect();
    let img = ::image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::Image("buffer size mismatch".into()))?;
    img.save(path).map_err(|e| Error::Image(e.to_string()))
}

fn read_png<R: Real>(path: &Path) -> Result<Tensor<R>> {
    let img = ::image::open(path)
        .map_err(|e| Error::Image(e.to_string()))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<R> = img
        .into_raw()
        .into_iter()
        .map(|b| R::of(b as f64 / 255.0))
        .collect();
    Tensor::new(vec![h, w], data)
}

fn write_landmark_csv<R: Real>(landmarks: &Tensor<R>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in 0..landmarks.shape()[0] {
        let x = landmarks.data()[row * 2].as_f64();
        let y = landmarks.data()[row * 2 + 1].as_f64();
        // `{}` on f64 prints the shortest representation that parses back
        // to the identical value, so the round trip is exact.
        writeln!(out, "{x},{y}").expect("writing to String cannot fail");
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_landmark_csv<R: Real>(path: &Path) -> Result<Tensor<R>> {
    let text = fs::read_to_string(path)?;
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (x, y) = line
            .split_once(',')
            .ok_or_else(|| Error::Dataset(format!("landmark line {i} lacks a comma")))?;
        for v in [x, y] {
            let parsed: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Dataset(format!("bad landmark value {v:?} on line {i}")))?;
            data.push(R::of(parsed));
        }
    }
    let rows = data.len() / 2;
    if rows == 0 {
        return Err(Error::Dataset("landmark file is empty".into()));
    }
    Tensor::new(vec![rows, 2], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> Dataset<f64> {
        let mk = |sid: &str, au: Option<Vec<u8>>, expr: Option<usize>| Sample {
            image: Tensor::from_fn(&[16, 16], |i| ((i % 7) as f64) / 255.0 * 7.0),
            landmarks: Tensor::from_fn(&[5, 2], |i| 0.1 + 0.05 * i as f64),
            au_labels: au,
            expr_label: expr,
            subject_id: sid.to_string(),
            side: Side::Full,
        };
        Dataset {
            au_names: vec!["brow".into(), "lip".into()],
            expr_count: 3,
            side: Side::Full,
            samples: vec![
                mk("a", Some(vec![1, 0]), None),
                mk("a", None, Some(2)),
                mk("b", Some(vec![0, 0]), None),
                mk("c", None, Some(0)),
            ],
        }
    }

    #[test]
    fn manifest_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy_dataset();
        // Snap pixel values to the 8-bit grid the way the generator does.
        let mut ds = ds;
        for s in &mut ds.samples {
            let snapped = s.image.map(|v| (v * 255.0).round() / 255.0);
            s.image = snapped;
        }
        let manifest = save_dataset(&ds, dir.path()).unwrap();
        let loaded: Dataset<f64> = load_dataset(&manifest).unwrap();
        assert_eq!(loaded.au_names, ds.au_names);
        assert_eq!(loaded.expr_count, ds.expr_count);
        assert_eq!(loaded.side, ds.side);
        assert_eq!(loaded.samples.len(), ds.samples.len());
        for (a, b) in loaded.samples.iter().zip(&ds.samples) {
            assert_eq!(a.image.data(), b.image.data());
            assert_eq!(a.landmarks.data(), b.landmarks.data());
            assert_eq!(a.au_labels, b.au_labels);
            assert_eq!(a.expr_label, b.expr_label);
            assert_eq!(a.subject_id, b.subject_id);
        }
    }

    #[test]
    fn empty_and_malformed_manifests_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");

        fs::write(&path, "").unwrap();
        assert!(load_dataset::<f64>(&path).is_err());

        // Metadata present but zero data rows.
        fs::write(
            &path,
            "# expr_count=3 side=full\nimage_path,landmark_path,subject_id,expr_label,au_x\n",
        )
        .unwrap();
        assert!(load_dataset::<f64>(&path).is_err());

        // Missing metadata line entirely.
        fs::write(
            &path,
            "image_path,landmark_path,subject_id,expr_label,au_x\n",
        )
        .unwrap();
        assert!(load_dataset::<f64>(&path).is_err());
    }

    #[test]
    fn label_length_mismatch_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy_dataset();
        let manifest = save_dataset(&ds, dir.path()).unwrap();
        // Corrupt row 2's AU fields: one empty, one set.
        let text = fs::read_to_string(&manifest).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let row2 = lines[3].clone();
        let mut fields: Vec<&str> = row2.split(',').collect();
        fields[4] = "";
        fields[5] = "1";
        lines[3] = fields.join(",");
        fs::write(&manifest, lines.join("\n")).unwrap();

        let err = load_dataset::<f64>(&manifest).unwrap_err();
        match err {
            Error::Manifest { row, .. } => assert_eq!(row, 2),
            other => panic!("expected a manifest row error, got {other}"),
        }
    }

    #[test]
    fn fold_split_partitions_subjects_deterministically() {
        let mut ds = toy_dataset();
        // Six subjects.
        for sid in ["d", "e", "f"] {
            let mut s = ds.samples[0].clone();
            s.subject_id = sid.to_string();
            ds.samples.push(s);
        }
        let split = kfold_subject_split(&ds, 3, 7).unwrap();
        assert_eq!(split.folds.len(), 3);
        assert!(split.folds.iter().all(|f| f.len() == 2));
        let subjects: BTreeSet<String> = ds.subjects().into_iter().collect();
        split.assert_partition(&subjects).unwrap();
        let again = kfold_subject_split(&ds, 3, 7).unwrap();
        assert_eq!(split, again);
        let different = kfold_subject_split(&ds, 3, 8).unwrap();
        assert!(split != different || split.folds == different.folds);
    }

    #[test]
    fn fold_split_rejects_too_few_subjects() {
        let ds = toy_dataset(); // 3 subjects
        assert!(kfold_subject_split(&ds, 4, 1).is_err());
        assert!(kfold_subject_split(&ds, 0, 1).is_err());
        kfold_subject_split(&ds, 3, 1).unwrap();
    }

    #[test]
    fn sample_validation_catches_each_invariant() {
        let ds = toy_dataset();
        let good = &ds.samples[0];
        good.validate(2, 3).unwrap();

        let mut bad = good.clone();
        bad.image = Tensor::from_fn(&[16, 8], |_| 0.5); // full face must be square
        assert!(bad.validate(2, 3).is_err());

        let mut bad = good.clone();
        bad.landmarks.data_mut()[0] = 1.25;
        assert!(bad.validate(2, 3).is_err());

        let mut bad = good.clone();
        bad.au_labels = Some(vec![1]);
        assert!(bad.validate(2, 3).is_err());

        let mut bad = good.clone();
        bad.expr_label = Some(3);
        assert!(bad.validate(2, 3).is_err());

        let mut bad = good.clone();
        bad.subject_id.clear();
        assert!(bad.validate(2, 3).is_err());
    }
}
