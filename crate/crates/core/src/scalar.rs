use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating point scalar the numeric code is generic over.
///
/// Everything numeric in this crate is written against this trait; the crate
/// root exports f64 aliases, which is the precision the accuracy guarantees
/// (gradient checks, quantile inversion) are stated for. The f32
/// instantiation is available for memory-constrained inference but the
/// special-function tolerances do not hold there.
pub trait Real:
    Float
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an f64 constant.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant must be representable")
    }

    /// Widening (or identity) conversion to f64.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl<T> Real for T where
    T: Float
        + NumAssignOps
        + FromPrimitive
        + ToPrimitive
        + Sum<T>
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}
