//! Scalar abstraction for durations, costs and fractions.
//!
//! Everything measured on a continuous axis (seconds, memory units, time
//! units, padding fractions) is generic over [`Real`]. Token counts stay
//! integral (`u64`) regardless of the scalar.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating point scalar accepted by the library: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; used for literals and generator output.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: u64) -> Self {
        <Self as NumCast>::from(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Parses a decimal literal with the scalar's own parser.
    fn parse_decimal(s: &str) -> Option<Self> {
        <Self as num_traits::Num>::from_str_radix(s.trim(), 10).ok()
    }
}

impl Real for f32 {}
impl Real for f64 {}
