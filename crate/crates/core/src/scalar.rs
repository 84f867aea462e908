//! Floating point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar type the models are generic over.
///
/// Implemented for `f32` (training runs) and `f64` (oracle and gradient
/// checking). Each width carries its own comparison tolerances.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Short name used in checkpoints and logs.
    const NAME: &'static str;
    /// Loose tolerance for comparing results of different summation orders.
    const TOLERANCE: f64;
    /// Finite-difference step appropriate for the width.
    const FD_STEP: f64;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("usize is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    const TOLERANCE: f64 = 1e-4;
    const FD_STEP: f64 = 1e-3;
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    const TOLERANCE: f64 = 1e-10;
    const FD_STEP: f64 = 1e-6;
}

/// Logistic sigmoid, evaluated without overflow for large |x|.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)`, i.e. `-ln σ(-x)`.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
