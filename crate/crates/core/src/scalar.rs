//! Numeric types the workload recursions run over.
//!
//! The recursions only ever add, subtract, compare and clamp, so any ordered
//! additive type works. Floats are the usual choice; [`Fixed`] gives exact
//! arithmetic, which matters when pathwise inequalities between two coupled
//! systems are asserted with no tolerance at all.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Sub};

use num_traits::{FromPrimitive, ToPrimitive, Zero};

/// Workload arithmetic. Blanket-implemented for every type with the right
/// `num-traits` surface (`f32`, `f64`, [`Fixed`]).
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + Zero
    + Add<Output = Self>
    + Sub<Output = Self>
    + FromPrimitive
    + ToPrimitive
    + Send
    + Sync
    + 'static
{
    /// Converts a sampled real into this type. Panics only on NaN/inf.
    fn from_real(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(|| panic!("value {v} is not representable"))
    }

    fn real(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn is_negative(self) -> bool {
        self < Self::zero()
    }
}

impl<T> Scalar for T where
    T: Copy
        + PartialOrd
        + fmt::Debug
        + Zero
        + Add<Output = T>
        + Sub<Output = T>
        + FromPrimitive
        + ToPrimitive
        + Send
        + Sync
        + 'static
{
}

/// Binary fixed-point number with 32 fractional bits stored in an `i128`.
///
/// Addition, subtraction, `max` and `min` are exact, so every identity of the
/// workload recursion holds bit-for-bit. Inputs are rounded once, on entry,
/// to the nearest multiple of 2^-32.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed(i128);

impl Fixed {
    pub const FRAC_BITS: u32 = 32;
    const SCALE: f64 = (1u64 << Self::FRAC_BITS) as f64;

    pub const fn from_raw(raw: i128) -> Self {
        Fixed(raw)
    }

    pub const fn raw(self) -> i128 {
        self.0
    }

    /// Smallest positive value.
    pub const EPSILON: Fixed = Fixed(1);
}

impl fmt::Debug for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fixed({})", self.real())
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.real(), f)
    }
}

impl Add for Fixed {
    type Output = Fixed;
    fn add(self, rhs: Fixed) -> Fixed {
        Fixed(self.0 + rhs.0)
    }
}

impl Sub for Fixed {
    type Output = Fixed;
    fn sub(self, rhs: Fixed) -> Fixed {
        Fixed(self.0 - rhs.0)
    }
}

impl Sum for Fixed {
    fn sum<I: Iterator<Item = Fixed>>(iter: I) -> Fixed {
        iter.fold(Fixed(0), Add::add)
    }
}

impl Zero for Fixed {
    fn zero() -> Self {
        Fixed(0)
    }
    fn is_zero(&self) -> bool {
        self.0 == 0
    }
}

impl ToPrimitive for Fixed {
    fn to_i64(&self) -> Option<i64> {
        (self.0 >> Self::FRAC_BITS).to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        (self.0 >> Self::FRAC_BITS).to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.0 as f64 / Self::SCALE)
    }
}

impl FromPrimitive for Fixed {
    fn from_i64(n: i64) -> Option<Self> {
        Some(Fixed(i128::from(n) << Self::FRAC_BITS))
    }
    fn from_u64(n: u64) -> Option<Self> {
        Some(Fixed(i128::from(n) << Self::FRAC_BITS))
    }
    fn from_f64(v: f64) -> Option<Self> {
        let scaled = (v * Self::SCALE).round();
        // i128 holds about 1.7e38
        if scaled.is_finite() && scaled.abs() < 1e37 {
            Some(Fixed(scaled as i128))
        } else {
            None
        }
    }
}

/// Sum of a slice of scalars, left to right.
pub fn sum<S: Scalar>(values: &[S]) -> S {
    values.iter().fold(S::zero(), |acc, &v| acc + v)
}
