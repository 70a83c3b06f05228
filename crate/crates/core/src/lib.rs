//! BeCoME-Net: multi-task facial action-unit detection with a beta-guided
//! correlation loss, plus the surrounding tooling that makes the method
//! testable end to end — a small reverse-mode autodiff engine, special
//! functions for the beta and Student-t distributions, correlation-graph
//! screening, a synthetic face pipeline, cross-validated training, validity
//! statistics, and blendshape animation export.
//!
//! Everything numeric is generic over the scalar type through [`scalar::Real`]
//! (implemented for `f32` and `f64`). The `f64` aliases exported at the crate
//! root are the configuration used by the test suite and the CLI; `f32` is
//! supported but carries the usual precision caveats.

pub mod animation;
pub mod betagraph;
pub mod datapipe;
pub mod diffcomp;
pub mod error;
pub mod losses;
pub mod network;
pub mod rngstream;
pub mod scalar;
pub mod specialfn;
pub mod trainer;
pub mod validity;

pub use error::{Error, Result};

/// Dense tensor over `f64`.
pub type Tensor = diffcomp::Tensor<f64>;
/// Autodiff tape over `f64`.
pub type Tape = diffcomp::Tape<f64>;
