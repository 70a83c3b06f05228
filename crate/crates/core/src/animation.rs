//! Blendshape animation clips: map expressions to action-unit targets with
//! coded intensities and ramp them linearly from neutral to peak.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Action units exposed as animation channels, in channel order.
pub const AU_CHANNELS: [u8; 16] = [1, 2, 4, 5, 6, 7, 10, 11, 12, 15, 17, 20, 23, 25, 26, 27];

/// Frames per clip, including the neutral first frame.
pub const FRAME_COUNT: usize = 25;

/// Milliseconds between consecutive frames.
pub const FRAME_INTERVAL_MS: u64 = 50;

/// Five-step intensity code, lowest to highest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Intensity {
    A,
    B,
    C,
    D,
    E,
}

impl Intensity {
    /// Blendshape weight for the code: evenly spaced fifths up to full.
    pub fn weight(self) -> f64 {
        match self {
            Intensity::A => 0.2,
            Intensity::B => 0.4,
            Intensity::C => 0.6,
            Intensity::D => 0.8,
            Intensity::E => 1.0,
        }
    }

    pub fn from_code(code: char) -> Result<Self> {
        Ok(match code.to_ascii_uppercase() {
            'A' => Intensity::A,
            'B' => Intensity::B,
            'C' => Intensity::C,
            'D' => Intensity::D,
            'E' => Intensity::E,
            other => {
                return Err(Error::invalid(format!("intensity code must be A-E, got {other:?}")))
            }
        })
    }
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// An expression as a set of action-unit targets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpressionSpec {
    pub name: String,
    /// (action unit, coded intensity); each unit at most once.
    pub targets: Vec<(u8, Intensity)>,
}

impl ExpressionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid("expression name must be non-empty"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(au, _) in &self.targets {
            if !AU_CHANNELS.contains(&au) {
                return Err(Error::invalid(format!(
                    "AU{au} is not an animation channel (available: {AU_CHANNELS:?})"
                )));
            }
            if !seen.insert(au) {
                return Err(Error::invalid(format!("AU{au} listed twice in {}", self.name)));
            }
        }
        Ok(())
    }
}

/// The six prototypical expressions with their coded action-unit targets.
pub fn builtin_expressions() -> Vec<ExpressionSpec> {
    use Intensity::*;
    let spec = |name: &str, targets: &[(u8, Intensity)]| ExpressionSpec {
        name: name.to_string(),
        targets: targets.to_vec(),
    };
    vec![
        spec(
            "anger",
            &[(4, E), (5, E), (7, C), (10, D), (23, D), (25, B), (26, C)],
        ),
        spec("disgust", &[(10, E), (17, D)]),
        spec(
            "fear",
            &[(1, E), (2, C), (4, D), (5, E), (20, C), (25, C), (27, B)],
        ),
        spec("happy", &[(6, C), (12, E)]),
        spec("sad", &[(1, E), (4, D), (11, B), (15, E)]),
        spec("surprise", &[(1, D), (2, D), (5, B), (25, C), (27, C)]),
    ]
}

/// A rendered clip: per-frame blendshape weights for every channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnimationClip {
    pub name: String,
    pub frame_interval_ms: u64,
    /// Channel names, e.g. `AU12`, in frame column order.
    pub channels: Vec<String>,
    /// `frames[i][c]` is channel c's weight at frame i; frame 0 is neutral.
    pub frames: Vec<Vec<f64>>,
}

impl AnimationClip {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid("clip name must be non-empty"));
        }
        if self.frame_interval_ms == 0 {
            return Err(Error::invalid("frame interval must be positive"));
        }
        if self.channels.is_empty() || self.frames.is_empty() {
            return Err(Error::invalid("clip needs at least one channel and one frame"));
        }
        let unique: std::collections::BTreeSet<&String> = self.channels.iter().collect();
        if unique.len() != self.channels.len() {
            return Err(Error::invalid("channel names must be unique"));
        }
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.len() != self.channels.len() {
                return Err(Error::shape(
                    "animation frame width",
                    self.channels.len(),
                    format!("{} at frame {i}", frame.len()),
                ));
            }
            if frame.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!(
                    "frame {i} has weights outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Play time from first to last frame.
    pub fn duration_ms(&self) -> u64 {
        (self.frames.len() as u64 - 1) * self.frame_interval_ms
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let clip: Self = serde_json::from_str(text)?;
        clip.validate()?;
        Ok(clip)
    }

    /// Rename channels for a specific rig. Channels found in the map are
    /// renamed, others pass through; the result must still have unique
    /// names.
    pub fn remap(&self, map: &BTreeMap<String, String>) -> Result<AnimationClip> {
        let mut out = self.clone();
        out.channels = self
            .channels
            .iter()
            .map(|c| map.get(c).unwrap_or(c).clone())
            .collect();
        out.validate()?;
        Ok(out)
    }
}

/// Build the 25-frame clip for an expression: frame 0 is neutral and every
/// channel ramps linearly to its coded peak on the last frame.
pub fn make_clip(spec: &ExpressionSpec) -> Result<AnimationClip> {
    spec.validate()?;
    let peaks: Vec<f64> = AU_CHANNELS
        .iter()
        .map(|&au| {
            spec.targets
                .iter()
                .find(|(a, _)| *a == au)
                .map_or(0.0, |(_, i)| i.weight())
        })
        .collect();
    let frames: Vec<Vec<f64>> = (0..FRAME_COUNT)
        .map(|i| {
            let ramp = i as f64 / (FRAME_COUNT - 1) as f64;
            peaks.iter().map(|p| ramp * p).collect()
        })
        .collect();
    let clip = AnimationClip {
        name: spec.name.clone(),
        frame_interval_ms: FRAME_INTERVAL_MS,
        channels: AU_CHANNELS.iter().map(|au| format!("AU{au}")).collect(),
        frames,
    };
    clip.validate()?;
    Ok(clip)
}
