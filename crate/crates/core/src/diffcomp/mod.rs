//! Reverse-mode automatic differentiation on dense tensors.
//!
//! The engine is deliberately small: a [`Tape`] records each operation as it
//! executes, and [`Tape::backward`] replays the record in reverse to
//! accumulate gradients. Only the operations the networks in this crate
//! actually use are provided, each with a hand-derived, finite-difference
//! validated backward rule. Custom operations (the correlation losses) plug
//! in through [`CustomOp`].

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, Probes, WorstProbe};
pub use tape::{CustomOp, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::dot;
