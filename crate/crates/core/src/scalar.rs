//! Floating-point scalar abstraction shared by every estimator.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the geometry, models and filters are generic over.
///
/// Implemented for `f32` and `f64`. Random draws are always made in `f64`
/// and then cast, so a given seed produces the same stream of variates for
/// either precision.
pub trait Scalar:
    RealField + Copy + Default + FromPrimitive + ToPrimitive + Serialize + DeserializeOwned
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Scalar converts to f64")
    }

    /// Lossless-enough conversion of a count.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Draws `sigma * N(0, 1)`.
#[inline]
pub fn gaussian<T: Scalar, R: Rng + ?Sized>(rng: &mut R, sigma: T) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z) * sigma
}

/// Draws uniformly from `[lo, hi)`.
#[inline]
pub fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, lo: T, hi: T) -> T {
    let u: f64 = rng.random();
    lo + T::lit(u) * (hi - lo)
}

/// Wraps an angle into `[0, 2π)`.
#[inline]
pub fn wrap_angle<T: Scalar>(a: T) -> T {
    let two_pi = T::two_pi();
    let wrapped = a - two_pi * (a / two_pi).floor();
    if wrapped >= two_pi || wrapped < T::zero() {
        T::zero()
    } else {
        wrapped
    }
}

/// Shortest signed difference `a - b`, in `(-π, π]`.
#[inline]
pub fn angle_diff<T: Scalar>(a: T, b: T) -> T {
    let d = wrap_angle(a - b);
    if d > T::pi() {
        d - T::two_pi()
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        for a in [-7.0, -PI, -1e-18, 0.0, 1.0, 2.0 * PI, 13.0] {
            let w = wrap_angle(a);
            assert!((0.0..2.0 * PI).contains(&w), "{a} -> {w}");
            assert!((w.sin() - f64::sin(a)).abs() < 1e-12);
        }
        assert_eq!(wrap_angle(2.0 * PI), 0.0);
    }

    #[test]
    fn angle_diff_is_shortest() {
        assert!((angle_diff(0.1, 2.0 * PI - 0.1) - 0.2).abs() < 1e-12);
        assert!((angle_diff(2.0 * PI - 0.1, 0.1) + 0.2).abs() < 1e-12);
    }

    #[test]
    fn f32_and_f64_agree_on_literals() {
        assert_eq!(<f32 as Scalar>::lit(0.5), 0.5f32);
        assert_eq!(<f64 as Scalar>::lit(0.5).as_f64(), 0.5);
    }
}
