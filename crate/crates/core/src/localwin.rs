//! Sliding local windows and polynomial regressor matrices.
//!
//! Each estimate is formed from the `2l+1` contiguous excited bins around a
//! center bin. Bins within `l` of the band edge get the nearest fully
//! in-band window and a nonzero evaluation offset, so the estimate is still
//! read at the requested bin.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{FrfError, Result};
use crate::scalar::{cvt, Scalar};
use crate::spectra::SpectraRecord;

/// The `2l+1` bins around a center bin.
#[derive(Clone, Debug)]
pub struct LocalWindow<T: Scalar> {
    /// Bin the window is centered on (after edge shifting).
    pub center: usize,
    /// Half-width `l`.
    pub half_width: usize,
    /// Offset (in bins) at which the estimate is evaluated; 0 for interior
    /// bins, nonzero near band edges.
    pub eval_offset: isize,
    /// Bin offsets `r = -l..=l` relative to the window center.
    pub offsets: Vec<isize>,
    /// Offset frequencies `omega_r` in rad/s relative to the window center.
    pub omega_rel: Vec<T>,
    /// Absolute frequencies of the window bins in rad/s.
    pub omega_abs: Vec<T>,
    /// Input spectrum over the window.
    pub input: DVector<Complex<T>>,
    /// Output spectrum over the window.
    pub output: DVector<Complex<T>>,
}

impl<T: Scalar> LocalWindow<T> {
    /// Window length `2l+1`.
    pub fn len(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the evaluation offset inside the window arrays.
    pub fn eval_index(&self) -> usize {
        (self.eval_offset + self.half_width as isize) as usize
    }

    /// Mean per-bin output power, used to scale noise-variance bounds.
    pub fn output_power(&self) -> T {
        self.output.iter().map(|c| c.norm_sqr()).sum::<T>() / cvt(self.len() as f64)
    }

    /// Mean output/input power ratio, a scale hint for FRF priors.
    pub fn gain_scale(&self) -> T {
        let pu = self.input.iter().map(|c| c.norm_sqr()).sum::<T>();
        let py = self.output.iter().map(|c| c.norm_sqr()).sum::<T>();
        if pu > T::zero() && py > T::zero() {
            py / pu
        } else {
            T::one()
        }
    }
}

/// Extract the window for bin `k` with half-width `half_width`.
///
/// Interior bins get symmetric windows with zero evaluation offset; bins
/// within `half_width` of the excited-band edge get the nearest fully
/// in-band window and an evaluation offset pointing back at bin `k`.
pub fn extract_window<T: Scalar>(
    record: &SpectraRecord<T>,
    k: usize,
    half_width: usize,
) -> Result<LocalWindow<T>> {
    let (lo, hi) = record.excited_band()?;
    if k < lo || k > hi {
        return Err(FrfError::invalid(format!(
            "bin {k} outside the excited band [{lo}, {hi}]"
        )));
    }
    let len = 2 * half_width + 1;
    if len > hi - lo + 1 {
        return Err(FrfError::invalid(format!(
            "window of {len} bins exceeds the excited band ({} bins)",
            hi - lo + 1
        )));
    }
    let center = k.clamp(lo + half_width, hi - half_width);
    let eval_offset = k as isize - center as isize;
    let d_omega = record.delta_omega();

    let mut offsets = Vec::with_capacity(len);
    let mut omega_rel = Vec::with_capacity(len);
    let mut omega_abs = Vec::with_capacity(len);
    let mut input = Vec::with_capacity(len);
    let mut output = Vec::with_capacity(len);
    for r in -(half_width as isize)..=(half_width as isize) {
        let bin = (center as isize + r) as usize;
        offsets.push(r);
        omega_rel.push(d_omega * cvt(r as f64));
        omega_abs.push(record.omega[bin]);
        input.push(record.input[bin]);
        output.push(record.output[bin]);
    }
    Ok(LocalWindow {
        center,
        half_width,
        eval_offset,
        offsets,
        omega_rel,
        omega_abs,
        input: DVector::from_vec(input),
        output: DVector::from_vec(output),
    })
}

/// Polynomial regressors over a window with the frequency scaling `alpha`.
#[derive(Clone, Debug)]
pub struct RegressorSet<T: Scalar> {
    /// Scaling constant applied to the offset frequencies.
    pub alpha: T,
    /// Scaled offsets `x_r = alpha * omega_r`; with the default scaling
    /// these are exactly the integer bin offsets.
    pub x: Vec<T>,
    /// Vandermonde block for the FRF polynomial, `(2l+1) x (n_b+1)`.
    pub phi_b: DMatrix<T>,
    /// Vandermonde block for the transient polynomial, `(2l+1) x (n_i+1)`.
    pub phi_i: DMatrix<T>,
    /// Full regressor matrix `[diag(U) phi_b  phi_i]`.
    pub psi: DMatrix<Complex<T>>,
}

/// Default scaling `alpha = N Ts / (2 pi)`, which turns the polynomial
/// argument into the bin offset and decouples conditioning from `Ts`.
pub fn default_alpha<T: Scalar>(sample_count: usize, sampling_interval: T) -> T {
    cvt::<T>(sample_count as f64) * sampling_interval / T::two_pi()
}

/// Scaled offsets for a window: exact integers under the default scaling.
pub fn scaled_offsets<T: Scalar>(window: &LocalWindow<T>, alpha: Option<T>) -> Vec<T> {
    match alpha {
        None => window.offsets.iter().map(|&r| cvt(r as f64)).collect(),
        Some(a) => window.omega_rel.iter().map(|&w| a * w).collect(),
    }
}

/// Vandermonde matrix `[x^0 .. x^n]` over the given abscissas.
pub fn vandermonde<T: Scalar>(x: &[T], order: usize) -> DMatrix<T> {
    let mut m = DMatrix::zeros(x.len(), order + 1);
    for (r, &xi) in x.iter().enumerate() {
        let mut p = T::one();
        for c in 0..=order {
            m[(r, c)] = p;
            p *= xi;
        }
    }
    m
}

/// Assemble the regressor matrix for orders `(n_b, n_i)`.
///
/// `alpha = None` selects the default scaling and produces bit-exact integer
/// abscissas.
pub fn regressors<T: Scalar>(
    window: &LocalWindow<T>,
    n_b: usize,
    n_i: usize,
    alpha: Option<T>,
) -> Result<RegressorSet<T>> {
    if let Some(a) = alpha {
        if a <= T::zero() {
            return Err(FrfError::invalid("alpha must be > 0"));
        }
    }
    let x = scaled_offsets(window, alpha);
    let phi_b = vandermonde(&x, n_b);
    let phi_i = vandermonde(&x, n_i);
    let rows = window.len();
    let cols = n_b + n_i + 2;
    let mut psi = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        let u = window.input[r];
        for c in 0..=n_b {
            psi[(r, c)] = u * phi_b[(r, c)];
        }
        for c in 0..=n_i {
            psi[(r, n_b + 1 + c)] = Complex::new(phi_i[(r, c)], T::zero());
        }
    }
    let alpha_val = alpha.unwrap_or_else(|| {
        // reconstruct the default for reporting: alpha * d_omega == 1
        let d_omega = if window.omega_rel.len() > 1 {
            window.omega_rel[window.half_width + 1]
        } else {
            T::one()
        };
        if d_omega > T::zero() {
            T::one() / d_omega
        } else {
            T::one()
        }
    });
    Ok(RegressorSet {
        alpha: alpha_val,
        x,
        phi_b,
        phi_i,
        psi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{simulate, ExperimentConfig, TestSystem};

    fn small_record() -> SpectraRecord<f64> {
        let cfg = ExperimentConfig {
            sample_count: 512,
            sampling_interval: 0.1,
            period: 640,
            excited_fraction: 0.4,
            snr_db: 40.0,
            warmup_periods: 1,
            rng_seed: 99,
        };
        let sys = TestSystem::lightly_damped_default(0.1);
        simulate(&sys, &cfg).unwrap()
    }

    #[test]
    fn interior_window_symmetric() {
        let rec = small_record();
        let w = extract_window(&rec, 50, 5).unwrap();
        assert_eq!(w.center, 50);
        assert_eq!(w.eval_offset, 0);
        assert_eq!(w.offsets, (-5..=5).collect::<Vec<_>>());
        assert_eq!(w.len(), 11);
    }

    #[test]
    fn left_edge_window_shifts() {
        let rec = small_record();
        // band starts at bin 1
        let w = extract_window(&rec, 1, 5).unwrap();
        assert_eq!(w.center, 6);
        assert_eq!(w.eval_offset, -5);
        assert_eq!(w.eval_index(), 0);
    }

    #[test]
    fn right_edge_window_shifts() {
        let rec = small_record();
        let (_, hi) = rec.excited_band().unwrap();
        let w = extract_window(&rec, hi, 5).unwrap();
        assert_eq!(w.center, hi - 5);
        assert_eq!(w.eval_offset, 5);
        assert_eq!(w.eval_index(), 10);
    }

    #[test]
    fn out_of_band_rejected() {
        let rec = small_record();
        assert!(extract_window(&rec, 0, 5).is_err());
        let (_, hi) = rec.excited_band().unwrap();
        assert!(extract_window(&rec, hi + 1, 5).is_err());
    }

    #[test]
    fn estimate_location_identity() {
        // the estimate location equals window-center frequency + omega_eval
        let rec = small_record();
        let (lo, hi) = rec.excited_band().unwrap();
        for k in [lo, lo + 2, 50, 80, hi - 1, hi] {
            let w = extract_window(&rec, k, 5).unwrap();
            let loc = rec.omega[w.center] + w.omega_rel[w.eval_index()];
            assert!((loc - rec.omega[k]).abs() <= 1e-12 * rec.omega[k].max(1.0));
        }
    }

    #[test]
    fn default_scaling_gives_integer_offsets() {
        let rec = small_record();
        let w = extract_window(&rec, 40, 2).unwrap();
        let rs = regressors(&w, 1, 1, None).unwrap();
        assert_eq!(rs.x, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        // Corollary premise: |alpha * omega_l| = l > 1 for l >= 2
        assert!(rs.x[4] > 1.0);
    }

    #[test]
    fn zeroth_column_all_ones() {
        let rec = small_record();
        let w = extract_window(&rec, 40, 3).unwrap();
        let rs = regressors(&w, 2, 2, None).unwrap();
        for r in 0..w.len() {
            assert_eq!(rs.phi_b[(r, 0)], 1.0);
            assert_eq!(rs.phi_i[(r, 0)], 1.0);
        }
    }

    #[test]
    fn psi_shape_matches_orders() {
        let rec = small_record();
        let w = extract_window(&rec, 60, 5).unwrap();
        let rs = regressors(&w, 2, 2, None).unwrap();
        assert_eq!(rs.psi.shape(), (11, 6));
    }

    #[test]
    fn custom_alpha_scales_frequencies() {
        let rec = small_record();
        let w = extract_window(&rec, 60, 2).unwrap();
        let alpha = 2.0 * default_alpha(rec.sample_count, rec.sampling_interval);
        let rs = regressors(&w, 1, 1, Some(alpha)).unwrap();
        for (i, &r) in w.offsets.iter().enumerate() {
            assert!((rs.x[i] - 2.0 * r as f64).abs() < 1e-12);
        }
    }
}
