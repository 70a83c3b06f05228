//! Construct-validity checks for detector-driven experiments: one-sample
//! t-tests over per-participant outcomes, gaze-based attention screening
//! against an area of interest, and report rendering.
//!
//! A test with zero sample variance has no defined t statistic; such rows
//! carry `None` and render as the `--*` marker rather than a fabricated
//! p-value of 0 or 1.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specialfn::student_t_sf;

/// Marker rendered for undefined statistics in reports.
pub const UNDEFINED_MARKER: &str = "--*";

/// Default null fraction of gaze time on the face region.
pub const DEFAULT_FACE_FRACTION: f64 = 0.15;

/// Default significance level.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Which tail(s) of the t distribution the p-value integrates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sidedness {
    /// P(T >= t): the alternative is "mean exceeds the null value".
    Greater,
    /// 2 * P(T >= |t|): the alternative is "mean differs from the null value".
    TwoSided,
}

impl fmt::Display for Sidedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sidedness::Greater => "greater",
            Sidedness::TwoSided => "two-sided",
        })
    }
}

/// One-sample t-test outcome. `t` and `p` are `None` exactly when the
/// sample variance is zero.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TTest {
    pub n: usize,
    pub df: usize,
    pub mean: f64,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub sidedness: Sidedness,
}

/// p-value for an already-computed t statistic.
pub fn p_from_t(t: f64, df: f64, sidedness: Sidedness) -> Result<f64> {
    let p = match sidedness {
        Sidedness::Greater => student_t_sf(t, df)?,
        Sidedness::TwoSided => (2.0 * student_t_sf(t.abs(), df)?).min(1.0),
    };
    Ok(p)
}

/// One-sample t-test of `values` against the null mean `mu0`, using the
/// sample (n-1) standard deviation. Needs at least two values; identical
/// values make the statistic undefined rather than infinite.
pub fn one_sample_t(values: &[f64], mu0: f64, sidedness: Sidedness) -> Result<TTest> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "a one-sample t-test needs at least 2 values, got {n}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) || !mu0.is_finite() {
        return Err(Error::NonFinite("t-test input"));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let degenerate = var == 0.0 || values.windows(2).all(|w| w[0] == w[1]);
    let df = n - 1;
    if degenerate {
        return Ok(TTest { n, df, mean, t: None, p: None, sidedness });
    }
    let t = (mean - mu0) / (var.sqrt() / nf.sqrt());
    let p = p_from_t(t, df as f64, sidedness)?;
    Ok(TTest { n, df, mean, t: Some(t), p: Some(p), sidedness })
}

/// One gaze observation in screen-normalized coordinates. Off-screen
/// samples keep their (meaningless) coordinates but are excluded from
/// attention fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub timestamp_ms: u64,
    pub x: f64,
    pub y: f64,
    pub on_screen: bool,
}

/// Axis-aligned area of interest inside the unit square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoiRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl AoiRect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let rect = Self { x0, y0, x1, y1 };
        rect.validate()?;
        Ok(rect)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if ![self.x0, self.y0, self.x1, self.y1].iter().all(|&v| in_unit(v)) {
            return Err(Error::invalid(format!(
                "AOI corners must lie in the unit square, got {self:?}"
            )));
        }
        if !(self.x0 < self.x1 && self.y0 < self.y1) {
            return Err(Error::invalid(format!("AOI must have positive area, got {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }
}

/// Fraction of on-screen gaze samples falling inside the area of interest.
/// Off-screen samples are excluded from the denominator; a recording whose
/// samples are all off-screen is a tracking loss and an error.
pub fn pct_face(samples: &[GazeSample], aoi: &AoiRect) -> Result<f64> {
    aoi.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("gaze recording is empty"));
    }
    if samples.iter().any(|s| !(s.x.is_finite() && s.y.is_finite())) {
        return Err(Error::NonFinite("gaze coordinates"));
    }
    let on_screen: Vec<&GazeSample> = samples.iter().filter(|s| s.on_screen).collect();
    if on_screen.is_empty() {
        return Err(Error::invalid(
            "tracking loss: every gaze sample is off-screen, attention fraction undefined",
        ));
    }
    let hits = on_screen.iter().filter(|s| aoi.contains(s.x, s.y)).count();
    Ok(hits as f64 / on_screen.len() as f64)
}

/// One construct's validity verdict. `valid` is true only when the p-value
/// is defined and below alpha.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidityResult {
    pub construct: String,
    pub n: usize,
    pub df: usize,
    pub mean: f64,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub sidedness: Sidedness,
    pub alpha: f64,
    pub valid: bool,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn verdict(construct: &str, test: TTest, alpha: f64) -> ValidityResult {
    ValidityResult {
        construct: construct.to_string(),
        n: test.n,
        df: test.df,
        mean: test.mean,
        t: test.t,
        p: test.p,
        sidedness: test.sidedness,
        alpha,
        valid: test.p.is_some_and(|p| p < alpha),
    }
}

/// Did participants attend to faces more than the incidental-looking null?
/// One-sided test of per-participant attention fractions against
/// `face_fraction`.
pub fn recognition_validity(
    attention_fractions: &[f64],
    face_fraction: f64,
    alpha: f64,
) -> Result<ValidityResult> {
    check_alpha(alpha)?;
    if !(0.0..=1.0).contains(&face_fraction) {
        return Err(Error::invalid(format!(
            "face_fraction must be in [0, 1], got {face_fraction}"
        )));
    }
    if attention_fractions.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("attention fractions must lie in [0, 1]"));
    }
    let test = one_sample_t(attention_fractions, face_fraction, Sidedness::Greater)?;
    Ok(verdict("recognition", test, alpha))
}

/// Is the detected-mimicry rate distinguishable from zero? Two-sided test
/// of per-participant binary detections against 0.
pub fn mimicry_validity(detections: &[u8], alpha: f64) -> Result<ValidityResult> {
    check_alpha(alpha)?;
    if detections.iter().any(|&d| d > 1) {
        return Err(Error::invalid("detections must be 0 or 1"));
    }
    let values: Vec<f64> = detections.iter().map(|&d| d as f64).collect();
    let test = one_sample_t(&values, 0.0, Sidedness::TwoSided)?;
    Ok(verdict("mimicry", test, alpha))
}

fn render_stat(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => UNDEFINED_MARKER.to_string(),
    }
}

/// CSV report, one row per construct. Undefined statistics render as the
/// `--*` marker. An empty result list yields just the header.
pub fn report_csv(results: &[ValidityResult]) -> String {
    let mut out = String::from("construct,n,df,mean,t,p,sidedness,alpha,valid\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.construct,
            r.n,
            r.df,
            r.mean,
            render_stat(r.t),
            render_stat(r.p),
            r.sidedness,
            r.alpha,
            r.valid
        ));
    }
    out
}

/// Markdown table mirroring [`report_csv`], with statistics shown to three
/// decimals.
pub fn report_markdown(results: &[ValidityResult]) -> String {
    let mut out = String::from(
        "| Construct | n | df | Mean | t | p | Sidedness | Alpha | Valid |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for r in results {
        let short = |v: Option<f64>| match v {
            Some(v) => format!("{v:.3}"),
            None => UNDEFINED_MARKER.to_string(),
        };
        out.push_str(&format!(
            "| {} | {} | {} | {:.3} | {} | {} | {} | {} | {} |\n",
            r.construct,
            r.n,
            r.df,
            r.mean,
            short(r.t),
            short(r.p),
            r.sidedness,
            r.alpha,
            if r.valid { "yes" } else { "no" }
        ));
    }
    out
}

/// One row of a detections file: whether the detector saw the construct for
/// this participant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionRow {
    pub participant_id: String,
    pub construct: String,
    pub detected: u8,
}

/// Read a gaze recording: `timestamp_ms,x,y,on_screen` with on_screen as
/// 0/1.
pub fn load_gaze_csv<P: AsRef<Path>>(path: P) -> Result<Vec<GazeSample>> {
    #[derive(Deserialize)]
    struct Row {
        timestamp_ms: u64,
        x: f64,
        y: f64,
        on_screen: u8,
    }
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Manifest {
            row: i + 1,
            message: format!("bad gaze row: {e}"),
        })?;
        if row.on_screen > 1 {
            return Err(Error::Manifest {
                row: i + 1,
                message: format!("on_screen must be 0 or 1, got {}", row.on_screen),
            });
        }
        out.push(GazeSample {
            timestamp_ms: row.timestamp_ms,
            x: row.x,
            y: row.y,
            on_screen: row.on_screen == 1,
        });
    }
    Ok(out)
}

/// Read a detections table: `participant_id,construct,detected` with
/// detected as 0/1.
pub fn load_detections_csv<P: AsRef<Path>>(path: P) -> Result<Vec<DetectionRow>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<DetectionRow>().enumerate() {
        let row = row.map_err(|e| Error::Manifest {
            row: i + 1,
            message: format!("bad detection row: {e}"),
        })?;
        if row.detected > 1 {
            return Err(Error::Manifest {
                row: i + 1,
                message: format!("detected must be 0 or 1, got {}", row.detected),
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// Group detection rows into per-construct binary vectors, participants
/// ordered by id within each construct.
pub fn detections_by_construct(
    rows: &[DetectionRow],
) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut sorted: Vec<&DetectionRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.construct, &a.participant_id).cmp(&(&b.construct, &b.participant_id))
    });
    let mut map: std::collections::BTreeMap<String, Vec<u8>> = Default::default();
    for row in sorted {
        map.entry(row.construct.clone()).or_default().push(row.detected);
    }
    map
}
