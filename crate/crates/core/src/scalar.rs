//! Scalar abstractions shared by the game, dynamics and controller layers.
//!
//! The game layer only needs field arithmetic and an ordering, so it runs on
//! exact rationals as well as floats. Anything that differentiates,
//! integrates or diagonalizes needs a real field and is limited to `f32`/`f64`.

use std::fmt::Debug;

use nalgebra::RealField;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Field arithmetic with an ordering: payoffs, shares and their products.
pub trait Scalar: Num + Clone + PartialOrd + FromPrimitive + Debug {
    /// Converts a small literal. Panics only for values the type cannot hold,
    /// which never happens for the literals used in this crate.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn from_count(n: u32) -> Self {
        Self::from_u32(n).expect("count representable in scalar type")
    }
}

impl<T: Num + Clone + PartialOrd + FromPrimitive + Debug> Scalar for T {}

/// Floating-point scalars usable by the numerical layers (`f32`, `f64`).
pub trait Real: Scalar + RealField + Copy + ToPrimitive {
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T: Scalar + RealField + Copy + ToPrimitive> Real for T {}

/// Absolute value through `PartialOrd`, usable for rationals and floats alike.
pub(crate) fn abs<T: Scalar>(v: T) -> T {
    if v < T::zero() {
        T::zero() - v
    } else {
        v
    }
}

/// Modulus of a complex number over any [`Real`].
pub fn modulus<T: Real>(c: &num_complex::Complex<T>) -> T {
    c.re.hypot(c.im)
}
