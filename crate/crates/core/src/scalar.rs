//! Scalar abstraction: the numeric core works for f32 and f64.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable everywhere in the crate.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + std::iter::Sum + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Convert from f64, panicking only for values outside the type's range
    /// (never the case for the constants used in this crate).
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 not representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
