//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating point sample type: `f32` or `f64`.
///
/// Pixel intensities are stored in unit range `[0, 1]`; geometry is in
/// pixels or radians.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize fits a float")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    /// Euclidean remainder in `[0, m)`.
    #[inline]
    fn rem_euclid_real(self, m: Self) -> Self {
        let r = self % m;
        if r < Self::zero() {
            let wrapped = r + m;
            // `r + m` can round up to exactly `m` for tiny negative `r`.
            if wrapped >= m {
                Self::zero()
            } else {
                wrapped
            }
        } else {
            r
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Signed horizontal offset `a - b` reduced to `(-w/2, w/2]`.
#[inline]
pub fn wrap_delta<T: Real>(a: T, b: T, w: T) -> T {
    let half = w * T::lit(0.5);
    let d = (a - b).rem_euclid_real(w);
    if d > half {
        d - w
    } else {
        d
    }
}

/// Unsigned horizontal distance on a circle of circumference `w`.
#[inline]
pub fn wrap_distance<T: Real>(a: T, b: T, w: T) -> T {
    wrap_delta(a, b, w).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rem_euclid_stays_in_range() {
        assert_eq!((-1e-20f64).rem_euclid_real(10.0), 0.0);
        assert_eq!((-3.0f64).rem_euclid_real(10.0), 7.0);
        assert_eq!(23.0f32.rem_euclid_real(10.0), 3.0);
    }

    #[test]
    fn wrap_delta_picks_short_way() {
        assert_eq!(wrap_delta(1.0f64, 99.0, 100.0), 2.0);
        assert_eq!(wrap_delta(99.0f64, 1.0, 100.0), -2.0);
        assert_eq!(wrap_distance(10.0f64, 60.0, 100.0), 50.0);
    }
}
