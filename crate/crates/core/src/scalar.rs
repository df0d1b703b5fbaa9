//! Floating-point scalar abstraction: the whole library is generic over
//! `f32`/`f64` through this trait.

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;

/// Real scalar type the estimators operate on.
///
/// Bundles the linear-algebra, FFT and conversion bounds needed by the
/// numerics. Implemented for `f32` and `f64`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + rustfft::FftNum + core::iter::Sum<Self>
{
    /// Draw a standard-normal sample.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw a uniform sample in `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Positive infinity.
    fn infinity() -> Self;

    /// Quiet NaN.
    fn nan() -> Self;
}

macro_rules! impl_scalar {
    ($($t:ty),*) => {
        $(
            impl Scalar for $t {
                fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                    rng.sample::<$t, _>(rand_distr::StandardNormal)
                }
                fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
                    rng.random::<$t>()
                }
                fn infinity() -> Self {
                    <$t>::INFINITY
                }
                fn nan() -> Self {
                    <$t>::NAN
                }
            }
        )*
    };
}

impl_scalar!(f32, f64);

/// Convert an `f64` constant into the working scalar type.
#[inline]
pub fn cvt<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("constant not representable")
}

/// Build a complex number from `f64` parts in the working scalar type.
#[inline]
pub fn cplx<T: Scalar>(re: f64, im: f64) -> Complex<T> {
    Complex::new(cvt(re), cvt(im))
}
