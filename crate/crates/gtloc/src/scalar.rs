//! Scalar abstraction for the numeric core.
//!
//! All pose, voting, and detector math is generic over [`Scalar`], so the
//! pipeline can run in `f32` or `f64`. The crate root exposes `f64`-backed
//! aliases, which is what the CLI and bench harness use.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` constant into the active scalar type.
///
/// Every finite `f64` maps to a finite `f32` (with rounding), so this never
/// panics for the literals it is used with.
#[inline]
pub fn num<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("finite literal converts to scalar")
}
