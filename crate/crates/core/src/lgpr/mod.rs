//! Regularized local estimators with per-window empirical-Bayes tuning.
//!
//! LRPM places the DI prior on local polynomial coefficients and solves the
//! MAP problem in coefficient space; LGPR places an FRF-space prior (DP, DC
//! or a resonance composite) directly on the windowed FRF samples. Both tune
//! hyperparameters and the noise variance per window by minimizing the
//! negative log marginal likelihood over log-scaled, bound-constrained
//! parameters with a multistart quasi-Newton search.

mod optim;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::cgauss::{map_gt, map_theta, GaussScratch};
use crate::classic::eval_poly;
use crate::error::{FrfError, Result};
use crate::kernels::{
    default_bounds, di_kernel, fill_frf_gamma, frf_kernel_pair, BoundHints, KernelFamily,
    KernelSpec, WindowGrid,
};
use crate::localwin::{extract_window, RegressorSet};
use crate::scalar::{cvt, Scalar};
use crate::seeds::derive_seed;
use crate::spectra::SpectraRecord;

use optim::{halton_point, minimize_box, BfgsOptions};

/// Relative noise-variance search range, scaled by the window output power.
const SIGMA2_REL_BOUNDS: (f64, f64) = (1e-12, 1e4);

/// One multistart trace entry: log-space start point, final objective and
/// convergence flag.
#[derive(Clone, Debug)]
pub struct StartRecord<T: Scalar> {
    pub start: Vec<T>,
    pub value: T,
    pub converged: bool,
}

/// Tuned window: hyperparameters, noise variance, objective value and the
/// multistart trace. The central estimates are filled by the estimator that
/// ran the MAP step.
#[derive(Clone, Debug)]
pub struct TunedWindow<T: Scalar> {
    /// Tuned kernel entries in canonical order (`c_T` last when present).
    pub eta: Vec<(String, T)>,
    pub sigma2: T,
    pub nll: T,
    pub trace: Vec<StartRecord<T>>,
    pub g_hat: Option<Complex<T>>,
    pub t_hat: Option<Complex<T>>,
}

impl<T: Scalar> TunedWindow<T> {
    /// Tuned values in canonical order (kernel entries, then `sigma2` last
    /// is excluded — it lives in `sigma2`).
    pub fn eta_values(&self) -> Vec<T> {
        self.eta.iter().map(|(_, v)| *v).collect()
    }

    pub fn converged_starts(&self) -> usize {
        self.trace.iter().filter(|r| r.converged).count()
    }
}

/// The data a window hands to the marginal-likelihood objective: the
/// regressor matrix for coefficient-space priors, or the frequency grid for
/// FRF-space priors.
pub enum WindowModel<'a, T: Scalar> {
    Coefficient {
        regressors: &'a RegressorSet<T>,
        output: &'a DVector<Complex<T>>,
    },
    FrfSpace {
        input: &'a DVector<Complex<T>>,
        output: &'a DVector<Complex<T>>,
        grid: &'a WindowGrid<T>,
    },
}

impl<T: Scalar> WindowModel<'_, T> {
    fn data_len(&self) -> usize {
        match self {
            WindowModel::Coefficient { output, .. } => output.len(),
            WindowModel::FrfSpace { output, .. } => output.len(),
        }
    }

    fn output(&self) -> &DVector<Complex<T>> {
        match self {
            WindowModel::Coefficient { output, .. } => output,
            WindowModel::FrfSpace { output, .. } => output,
        }
    }

    fn bound_hints(&self) -> BoundHints<T> {
        match self {
            WindowModel::Coefficient { regressors, output } => {
                // the first regressor column is the raw input spectrum
                let pu = regressors
                    .psi
                    .column(0)
                    .iter()
                    .map(|c| c.norm_sqr())
                    .sum::<T>();
                let py = output.iter().map(|c| c.norm_sqr()).sum::<T>();
                let gain = if pu > T::zero() && py > T::zero() {
                    py / pu
                } else {
                    T::one()
                };
                let x_max = regressors
                    .x
                    .iter()
                    .map(|v| v.abs())
                    .fold(T::zero(), |a, b| a.max(b));
                BoundHints {
                    gain_scale: gain,
                    x_max,
                    omega_range: (T::zero(), T::one()),
                }
            }
            WindowModel::FrfSpace { input, output, grid } => {
                let pu = input.iter().map(|c| c.norm_sqr()).sum::<T>();
                let py = output.iter().map(|c| c.norm_sqr()).sum::<T>();
                let gain = if pu > T::zero() && py > T::zero() {
                    py / pu
                } else {
                    T::one()
                };
                let x_max = grid
                    .x
                    .iter()
                    .map(|v| v.abs())
                    .fold(T::zero(), |a, b| a.max(b));
                let lo = grid
                    .omega_abs
                    .iter()
                    .copied()
                    .fold(T::max_value().unwrap(), |a, b| a.min(b));
                let hi = grid
                    .omega_abs
                    .iter()
                    .copied()
                    .fold(T::zero(), |a, b| a.max(b));
                BoundHints {
                    gain_scale: gain,
                    x_max,
                    omega_range: (lo, hi),
                }
            }
        }
    }
}

/// Default multistart count: five per hyperparameter plus the center start.
pub fn default_starts(eta_dim: usize) -> usize {
    5 * eta_dim + 1
}

/// Reusable buffers for the tuning objective.
struct EbWorkspace<T: Scalar> {
    scratch: GaussScratch<T>,
    gamma_diag: Vec<T>,
    c_diag: Vec<T>,
    values: Vec<T>,
}

impl<T: Scalar> EbWorkspace<T> {
    fn new(m: usize) -> Self {
        EbWorkspace {
            scratch: GaussScratch::new(m),
            gamma_diag: Vec::new(),
            c_diag: Vec::new(),
            values: Vec::new(),
        }
    }
}

/// NLL of the FRF-space model `O = U~ M_G U~^H + c_T M_G + s2 I`, writing
/// the real composite covariance directly from the kernel evaluator.
fn nll_fused_frf<T: Scalar>(
    scratch: &mut GaussScratch<T>,
    u: &DVector<Complex<T>>,
    y: &DVector<Complex<T>>,
    eval: &crate::kernels::KernelEval<'_, T>,
    c_t: T,
    sigma2: T,
) -> Result<T> {
    let m = u.len();
    let n2 = 2 * m;
    let half = cvt::<T>(0.5);
    {
        let ks = scratch.k.as_mut_slice();
        for s_col in 0..m {
            let u_s = u[s_col];
            let u_s_conj = u_s.conj();
            for r in 0..m {
                let (g, c) = eval.entry(r, s_col);
                let mut a = u[r] * g * u_s_conj + g.scale(c_t);
                let b = u[r] * c * u_s + c.scale(c_t);
                if r == s_col {
                    a.re += sigma2;
                }
                ks[r + s_col * n2] = (a.re + b.re) * half;
                ks[(m + r) + (m + s_col) * n2] = (a.re - b.re) * half;
                ks[(m + r) + s_col * n2] = (a.im + b.im) * half;
                ks[r + (m + s_col) * n2] = (b.im - a.im) * half;
            }
        }
    }
    scratch.finish_nll(y)
}

/// NLL of the coefficient-space model `O = Psi M_theta Psi~^H + s2 I` with
/// a diagonal prior, fused into the real composite fill.
fn nll_fused_theta<T: Scalar>(
    scratch: &mut GaussScratch<T>,
    psi: &DMatrix<Complex<T>>,
    y: &DVector<Complex<T>>,
    gamma_diag: &[T],
    c_diag: &[T],
    sigma2: T,
) -> Result<T> {
    let (m, n) = psi.shape();
    let n2 = 2 * m;
    let half = cvt::<T>(0.5);
    {
        let ps = psi.as_slice(); // column-major
        let ks = scratch.k.as_mut_slice();
        for s_col in 0..m {
            for r in 0..m {
                let mut a = Complex::new(T::zero(), T::zero());
                let mut b = Complex::new(T::zero(), T::zero());
                for c in 0..n {
                    let pr = ps[r + c * m];
                    let pc = ps[s_col + c * m];
                    a += pr * pc.conj() * gamma_diag[c];
                    b += pr * pc * c_diag[c];
                }
                if r == s_col {
                    a.re += sigma2;
                }
                ks[r + s_col * n2] = (a.re + b.re) * half;
                ks[(m + r) + (m + s_col) * n2] = (a.re - b.re) * half;
                ks[(m + r) + s_col * n2] = (a.im + b.im) * half;
                ks[r + (m + s_col) * n2] = (b.im - a.im) * half;
            }
        }
    }
    scratch.finish_nll(y)
}

/// Effective log-space bounds for the tunable vector (kernel entries plus
/// the noise variance last). Spec-provided bounds override the defaults,
/// including an optional `sigma2` entry.
fn tuning_bounds<T: Scalar>(
    spec: &KernelSpec<T>,
    model: &WindowModel<'_, T>,
) -> Result<(Vec<&'static str>, Vec<T>, Vec<T>)> {
    let hints = model.bound_hints();
    let defaults = default_bounds(spec.family, &hints);
    let mut names: Vec<&'static str> = Vec::with_capacity(defaults.len() + 1);
    let mut lo = Vec::with_capacity(defaults.len() + 1);
    let mut hi = Vec::with_capacity(defaults.len() + 1);
    let floor = cvt::<T>(1e-300);
    for &(name, dlo, dhi) in &defaults {
        let (l, h) = match spec.bounds.as_ref().and_then(|b| b.get(name)) {
            Some(&(l, h)) => (l, h),
            None => (dlo, dhi),
        };
        if !(l <= h) || h <= T::zero() {
            return Err(FrfError::KernelBounds(format!(
                "invalid bounds for {name}"
            )));
        }
        names.push(name);
        lo.push(l.max(floor).ln());
        hi.push(h.max(floor).ln());
    }
    let power = model
        .output()
        .iter()
        .map(|c| c.norm_sqr())
        .sum::<T>()
        / cvt(model.data_len() as f64);
    let power = power.max(cvt(1e-20));
    let (mut s_lo, mut s_hi) = (
        power * cvt(SIGMA2_REL_BOUNDS.0),
        power * cvt(SIGMA2_REL_BOUNDS.1),
    );
    if let Some(&(l, h)) = spec.bounds.as_ref().and_then(|b| b.get("sigma2")) {
        s_lo = l;
        s_hi = h;
    }
    names.push("sigma2");
    lo.push(s_lo.max(floor).ln());
    hi.push(s_hi.max(floor).ln());
    Ok((names, lo, hi))
}

/// Summary of a cheap pilot rational fit over the window, used to seed the
/// multistart search.
struct PilotFit<T: Scalar> {
    /// Resonance location and half-width from the denominator root, when one
    /// lies near the window.
    pole: Option<(T, T)>,
    /// Largest fitted `|B/A|` over the window span.
    peak_gain: T,
    /// Median fitted `|B/A|^2` (smooth prior variance scale).
    smooth_var: T,
    /// Transient-to-FRF power ratio of the fit.
    transient_ratio: T,
    /// Residual noise variance of the fit.
    sigma2: T,
}

/// Levy-weighted rational pilot fit with orders (2, 2, 2); the transient is
/// what makes the raw ratio `Y/U` unreliable near lightly damped modes, so
/// the pole comes from a joint fit instead.
fn pilot_rational_fit<T: Scalar>(
    u: &DVector<Complex<T>>,
    y: &DVector<Complex<T>>,
    x: &[T],
    omega_abs: &[T],
) -> Option<PilotFit<T>> {
    let m = u.len();
    if m < 10 {
        return None;
    }
    let mut design = DMatrix::zeros(m, 8);
    for r in 0..m {
        let xr = x[r];
        design[(r, 0)] = -y[r] * xr;
        design[(r, 1)] = -y[r] * (xr * xr);
        design[(r, 2)] = u[r];
        design[(r, 3)] = u[r] * xr;
        design[(r, 4)] = u[r] * (xr * xr);
        design[(r, 5)] = Complex::new(T::one(), T::zero());
        design[(r, 6)] = Complex::new(xr, T::zero());
        design[(r, 7)] = Complex::new(xr * xr, T::zero());
    }
    let (theta, _, _) = crate::classic::tsvd_solve(&design, y).ok()?;
    let a = [Complex::new(T::one(), T::zero()), theta[0], theta[1]];
    let b = [theta[2], theta[3], theta[4]];
    let i_poly = [theta[5], theta[6], theta[7]];

    // output-error residual of the pilot fit
    let mut resid = T::zero();
    let mut g_pow = T::zero();
    let mut t_pow = T::zero();
    let mut grid_gains: Vec<T> = Vec::with_capacity(m);
    for r in 0..m {
        let a_r = eval_poly(&a, x[r]);
        let g_r = eval_poly(&b, x[r]) / a_r;
        let t_r = eval_poly(&i_poly, x[r]) / a_r;
        let e = y[r] - (u[r] * g_r + t_r);
        if !e.re.is_finite() || !e.im.is_finite() {
            return None;
        }
        resid += e.norm_sqr();
        g_pow += g_r.norm_sqr();
        t_pow += t_r.norm_sqr();
        grid_gains.push(g_r.norm_sqr().sqrt());
    }
    let dof = cvt::<T>((m - 8) as f64);
    let sigma2 = (resid / dof).max(cvt(1e-30));
    grid_gains.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let median_gain = grid_gains[grid_gains.len() / 2];

    // fine sweep of |B/A| across the window span for the peak gain
    let x_lo = x[0];
    let x_hi = x[m - 1];
    let mut peak_gain = T::zero();
    for s in 0..=200 {
        let xv = x_lo + (x_hi - x_lo) * cvt(s as f64 / 200.0);
        let gain = (eval_poly(&b, xv) / eval_poly(&a, xv)).norm_sqr().sqrt();
        if gain.is_finite() && gain > peak_gain {
            peak_gain = gain;
        }
    }

    // denominator roots: a0 + a1 x + a2 x^2 = 0 in the scaled offset plane
    let spacing = (omega_abs[m - 1] - omega_abs[0]) / cvt((m - 1) as f64);
    let omega_center = omega_abs[m / 2];
    let mut pole = None;
    if a[2].norm_sqr() > cvt::<T>(1e-24) {
        let disc = (a[1] * a[1] - a[2].scale(cvt(4.0))).sqrt();
        let two_a2 = a[2].scale(cvt(2.0));
        for root in [(-a[1] + disc) / two_a2, (-a[1] - disc) / two_a2] {
            let loc = omega_center + root.re * spacing;
            let width = (root.im * spacing).abs();
            // keep a root that is lightly damped and near the window
            let span = omega_abs[m - 1] - omega_abs[0];
            if width < span && root.re.abs() < cvt::<T>(2.0) * cvt((m / 2) as f64) {
                match pole {
                    Some((_, w)) if width >= w => {}
                    _ => pole = Some((loc, width.max(spacing * cvt(1e-3)))),
                }
            }
        }
    }
    Some(PilotFit {
        pole,
        peak_gain,
        smooth_var: (median_gain * median_gain).max(cvt(1e-30)),
        transient_ratio: if g_pow > T::zero() {
            (t_pow / g_pow).max(cvt(1e-6)).min(cvt(1e6))
        } else {
            T::one()
        },
        sigma2,
    })
}

/// Data-informed start points (log space, pre-clip).
///
/// A cheap Levy-weighted rational pilot fit supplies a resonance location,
/// half-width and gain scale plus a noise floor; the marginal likelihood
/// still arbitrates between these and the generic starts, but without them
/// the razor-thin resonance basin is unreachable at practical multistart
/// counts.
fn structured_starts<T: Scalar>(
    model: &WindowModel<'_, T>,
    family: KernelFamily,
    names: &[&'static str],
    lo: &[T],
    hi: &[T],
) -> Vec<Vec<T>> {
    let (u, y, grid) = match model {
        WindowModel::FrfSpace { input, output, grid } => (input, output, grid),
        WindowModel::Coefficient { .. } => {
            return structured_coefficient_start(model, names, lo, hi)
                .into_iter()
                .collect();
        }
    };
    let power = y.iter().map(|c| c.norm_sqr()).sum::<T>() / cvt(y.len() as f64);
    let geo_center = |name: &str| -> T {
        let i = names.iter().position(|n| *n == name).unwrap();
        (lo[i] + hi[i]) * cvt(0.5)
    };
    let build = |entries: &[(&str, T)]| -> Vec<T> {
        names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                for (n, v) in entries {
                    if n == name {
                        return v.max(cvt(1e-300)).ln().max(lo[i]).min(hi[i]);
                    }
                }
                geo_center(name)
            })
            .collect()
    };

    let Some(pilot) = pilot_rational_fit(u, y, &grid.x, &grid.omega_abs) else {
        return Vec::new();
    };
    let mut points = Vec::new();
    // smooth start: amplitudes at the pilot's gain scale, pilot noise floor
    let smooth: Vec<(&str, T)> = vec![
        ("alpha_G", pilot.smooth_var),
        ("beta_G", pilot.smooth_var),
        ("lambda", pilot.smooth_var), // DC amplitude shares the name
        ("gamma1", pilot.smooth_var.sqrt() * cvt(1e-3)),
        ("gamma2", pilot.smooth_var.sqrt() * cvt(1e-3)),
        ("c_T", pilot.transient_ratio),
        ("sigma2", pilot.sigma2),
    ];
    points.push(build(&smooth));

    if matches!(family, KernelFamily::DcPlusR1 | KernelFamily::DpPlusR1) {
        if let Some((loc, width)) = pilot.pole {
            for width_scale in [1.0, 0.25, 4.0] {
                let beta1 = width * cvt(width_scale);
                // prior standard deviation at the resonance matches the
                // pilot peak gain
                let gamma = beta1 * pilot.peak_gain * cvt::<T>(2.0).sqrt();
                let entries: Vec<(&str, T)> = vec![
                    ("alpha_G", pilot.smooth_var),
                    ("beta_G", pilot.smooth_var),
                    ("lambda", pilot.smooth_var),
                    ("beta1", beta1),
                    ("beta2", loc),
                    ("gamma1", gamma),
                    ("gamma2", gamma),
                    ("c_T", pilot.transient_ratio),
                    ("sigma2", pilot.sigma2),
                ];
                points.push(build(&entries));
            }
        }
        // raw-ratio fallback in case the pilot fit found no usable pole
        let u_max = u.iter().map(|c| c.norm_sqr()).fold(T::zero(), |a, b| a.max(b));
        if u_max > T::zero() {
            let mut peak = T::zero();
            let mut peak_idx = 0usize;
            for r in 0..u.len() {
                if u[r].norm_sqr() > u_max * cvt(1e-12) {
                    let gain = (y[r].norm_sqr() / u[r].norm_sqr()).sqrt();
                    if gain > peak {
                        peak = gain;
                        peak_idx = r;
                    }
                }
            }
            let spacing = (grid.omega_abs[u.len() - 1] - grid.omega_abs[0])
                / cvt((u.len() - 1) as f64);
            let beta1 = spacing * cvt(0.5);
            let gamma = beta1 * peak * cvt::<T>(2.0).sqrt();
            let entries: Vec<(&str, T)> = vec![
                ("alpha_G", pilot.smooth_var),
                ("beta_G", pilot.smooth_var),
                ("lambda", pilot.smooth_var),
                ("beta1", beta1),
                ("beta2", grid.omega_abs[peak_idx]),
                ("gamma1", gamma),
                ("gamma2", gamma),
                ("c_T", pilot.transient_ratio),
                ("sigma2", (power * cvt(1e-6)).max(cvt(1e-30))),
            ];
            points.push(build(&entries));
        }
    }
    points
}

/// Smooth-scale start for the coefficient-space (DI) model.
fn structured_coefficient_start<T: Scalar>(
    model: &WindowModel<'_, T>,
    names: &[&'static str],
    lo: &[T],
    hi: &[T],
) -> Option<Vec<T>> {
    let WindowModel::Coefficient { regressors, output } = model else {
        return None;
    };
    let pu = regressors
        .psi
        .column(0)
        .iter()
        .map(|c| c.norm_sqr())
        .sum::<T>();
    let py = output.iter().map(|c| c.norm_sqr()).sum::<T>();
    if pu <= T::zero() || py <= T::zero() {
        return None;
    }
    let gain_var = py / pu;
    let power = py / cvt(output.len() as f64);
    let entries: Vec<(&str, T)> = vec![
        ("alpha_G", gain_var),
        ("alpha_T", gain_var),
        ("beta_G", gain_var),
        ("sigma2", (power * cvt(1e-6)).max(cvt(1e-30))),
    ];
    Some(
        names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                for (n, v) in &entries {
                    if n == name {
                        return v.max(cvt(1e-300)).ln().max(lo[i]).min(hi[i]);
                    }
                }
                (lo[i] + hi[i]) * cvt(0.5)
            })
            .collect(),
    )
}

fn eb_tune_with<T: Scalar>(
    ws: &mut EbWorkspace<T>,
    model: &WindowModel<'_, T>,
    spec: &KernelSpec<T>,
    starts: usize,
    seed: u64,
    warm: Option<&[T]>,
) -> Result<TunedWindow<T>> {
    if starts == 0 {
        return Err(FrfError::invalid("starts must be >= 1"));
    }
    if spec.family.is_frf_space() != matches!(model, WindowModel::FrfSpace { .. }) {
        return Err(FrfError::invalid(
            "kernel family does not match the window model space",
        ));
    }
    let (names, lo, hi) = tuning_bounds(spec, model)?;
    let dim = names.len();
    let kernel_dim = dim - 1;
    let family = spec.family;

    // objective over log-scaled parameters
    let mut objective = |logp: &[T]| -> T {
        ws.values.clear();
        ws.values.extend(logp.iter().map(|v| v.exp()));
        let sigma2 = ws.values[kernel_dim];
        let result = match model {
            WindowModel::Coefficient { regressors, output } => {
                let n_b = regressors.phi_b.ncols() - 1;
                let n_i = regressors.phi_i.ncols() - 1;
                let (gamma_diag, c_diag, values) =
                    (&mut ws.gamma_diag, &mut ws.c_diag, &ws.values);
                crate::kernels::di_diagonals(
                    &values[..kernel_dim],
                    n_b,
                    n_i,
                    gamma_diag,
                    c_diag,
                )
                .and_then(|_| {
                    nll_fused_theta(
                        &mut ws.scratch,
                        &regressors.psi,
                        output,
                        gamma_diag,
                        c_diag,
                        sigma2,
                    )
                })
            }
            WindowModel::FrfSpace { input, output, grid } => {
                // kernel entries exclude c_T (last kernel slot)
                let c_t = ws.values[kernel_dim - 1];
                crate::kernels::KernelEval::build(
                    family,
                    &ws.values[..kernel_dim - 1],
                    grid,
                )
                .and_then(|eval| {
                    nll_fused_frf(&mut ws.scratch, input, output, &eval, c_t, sigma2)
                })
            }
        };
        result.unwrap_or_else(|_| T::infinity())
    };

    // start points: box center, optional warm start, data-informed points,
    // then scrambled Halton
    let mut start_points: Vec<Vec<T>> = Vec::with_capacity(starts);
    let center: Vec<T> = (0..dim)
        .map(|i| (lo[i] + hi[i]) * cvt(0.5))
        .collect();
    start_points.push(center);
    if let Some(w) = warm {
        if w.len() == dim && start_points.len() < starts {
            let clipped: Vec<T> = (0..dim)
                .map(|i| w[i].max(lo[i]).min(hi[i]))
                .collect();
            start_points.push(clipped);
        }
    }
    for sp in structured_starts(model, family, &names, &lo, &hi) {
        if start_points.len() < starts {
            start_points.push(sp);
        }
    }
    let shift: Vec<T> = (0..dim)
        .map(|i| {
            let bits = derive_seed(seed, i as u64);
            cvt::<T>((bits >> 11) as f64 / (1u64 << 53) as f64)
        })
        .collect();
    let mut halton_index = 0usize;
    while start_points.len() < starts {
        let unit = halton_point(dim, halton_index, &shift);
        halton_index += 1;
        start_points.push(
            (0..dim)
                .map(|i| lo[i] + unit[i] * (hi[i] - lo[i]))
                .collect(),
        );
    }

    let mut trace = Vec::with_capacity(starts);
    let mut best: Option<(Vec<T>, T, bool)> = None;
    for sp in &start_points {
        // stop starts that stay far above the incumbent: the winning basin
        // is reached within a few dozen iterations
        let cutoff = best
            .as_ref()
            .map(|(_, bv, _)| (30usize, *bv + cvt::<T>(30.0)));
        let opts = BfgsOptions {
            cutoff,
            ..Default::default()
        };
        let out = minimize_box(&mut objective, sp, &lo, &hi, &opts);
        trace.push(StartRecord {
            start: sp.clone(),
            value: out.value,
            converged: out.converged,
        });
        // strict min over finite outcomes keeps "more starts never worse"
        if out.value.is_finite() && best.as_ref().map_or(true, |(_, bv, _)| out.value < *bv) {
            best = Some((out.x, out.value, out.converged));
        }
    }
    let (x_best, nll, _) = best.ok_or_else(|| {
        FrfError::TuningFailed(format!(
            "no start produced a finite marginal likelihood ({} starts)",
            starts
        ))
    })?;

    let mut eta = Vec::with_capacity(kernel_dim);
    for i in 0..kernel_dim {
        eta.push((names[i].to_string(), x_best[i].exp()));
    }
    Ok(TunedWindow {
        eta,
        sigma2: x_best[kernel_dim].exp(),
        nll,
        trace,
        g_hat: None,
        t_hat: None,
    })
}

/// Tune kernel hyperparameters and the noise variance for one window by
/// multistart bound-constrained minimization of the negative log marginal
/// likelihood. Deterministic for a fixed `(model, spec, starts, seed)`.
pub fn eb_tune<T: Scalar>(
    model: &WindowModel<'_, T>,
    spec: &KernelSpec<T>,
    starts: usize,
    seed: u64,
    warm: Option<&[T]>,
) -> Result<TunedWindow<T>> {
    let mut ws = EbWorkspace::new(model.data_len());
    eb_tune_with(&mut ws, model, spec, starts, seed, warm)
}

/// Options shared by the regularized estimators.
#[derive(Clone, Debug)]
pub struct EstimateOptions<T: Scalar> {
    /// Frequency scaling; `None` selects the default bin-offset scaling.
    pub alpha: Option<T>,
    /// Multistart count; `None` uses `5 * dim(eta) + 1`.
    pub starts: Option<usize>,
    /// Base seed for the start-point scrambling.
    pub seed: u64,
    /// Chain the previous window's optimum in as one start point.
    pub warm_start: bool,
    /// Bins to estimate; `None` covers the whole excited band.
    pub band: Option<Vec<usize>>,
    /// Keep the per-window tuning results (and traces) in the output.
    pub embed_trace: bool,
}

impl<T: Scalar> Default for EstimateOptions<T> {
    fn default() -> Self {
        EstimateOptions {
            alpha: None,
            starts: None,
            seed: 0,
            warm_start: true,
            band: None,
            embed_trace: false,
        }
    }
}

/// Per-bin FRF estimate produced by any method in this crate.
#[derive(Clone, Debug)]
pub struct FrfEstimate<T: Scalar> {
    pub method: String,
    pub bins: Vec<usize>,
    pub omega: Vec<T>,
    pub g_hat: Vec<Complex<T>>,
    pub t_hat: Vec<Complex<T>>,
    pub sigma2_hat: Vec<T>,
    /// Short per-bin diagnostic (selected orders, converged starts, flags).
    pub detail: Vec<String>,
    /// Bins whose estimation failed, with the reason; estimation continues
    /// past failures.
    pub failures: Vec<(usize, String)>,
    /// Largest MAP identity residual seen across the windows (FRF-space
    /// estimators only).
    pub max_identity_residual: Option<T>,
    /// Per-window tuning results when requested.
    pub tuning: Option<Vec<TunedWindow<T>>>,
}

impl<T: Scalar> FrfEstimate<T> {
    pub fn empty(method: impl Into<String>) -> Self {
        FrfEstimate {
            method: method.into(),
            bins: Vec::new(),
            omega: Vec::new(),
            g_hat: Vec::new(),
            t_hat: Vec::new(),
            sigma2_hat: Vec::new(),
            detail: Vec::new(),
            failures: Vec::new(),
            max_identity_residual: None,
            tuning: None,
        }
    }

    /// Index of `bin` in the estimate arrays.
    pub fn position(&self, bin: usize) -> Option<usize> {
        self.bins.iter().position(|&k| k == bin)
    }
}

fn band_bins<T: Scalar>(
    record: &SpectraRecord<T>,
    opts_band: &Option<Vec<usize>>,
) -> Result<Vec<usize>> {
    match opts_band {
        Some(b) => Ok(b.clone()),
        None => {
            let (lo, hi) = record.excited_band()?;
            Ok((lo..=hi).collect())
        }
    }
}

/// Local regularized polynomial method: DI prior on the coefficients of a
/// fixed-order local polynomial model, empirical-Bayes tuning per window,
/// MAP solve in coefficient space.
pub fn lrpm_estimate<T: Scalar>(
    record: &SpectraRecord<T>,
    half_width: usize,
    orders: (usize, usize),
    spec: Option<&KernelSpec<T>>,
    opts: &EstimateOptions<T>,
) -> Result<FrfEstimate<T>> {
    let (n_b, n_i) = orders;
    let base_spec = match spec {
        Some(s) => {
            if s.family != KernelFamily::Di {
                return Err(FrfError::invalid("LRPM expects the DI kernel family"));
            }
            s.clone()
        }
        None => KernelSpec::new(KernelFamily::Di, BTreeMap::new()),
    };
    let bins = band_bins(record, &opts.band)?;
    let starts = opts
        .starts
        .unwrap_or_else(|| default_starts(base_spec.family.tunable_names().len()));

    let mut est = FrfEstimate::empty("LRPM(DI)");
    let mut tuning = opts.embed_trace.then(Vec::new);
    let mut ws = EbWorkspace::new(2 * half_width + 1);
    let mut warm: Option<Vec<T>> = None;
    for &k in &bins {
        let step = (|| -> Result<(TunedWindow<T>, Complex<T>, Complex<T>)> {
            let window = extract_window(record, k, half_width)?;
            let rs = crate::localwin::regressors(&window, n_b, n_i, opts.alpha)?;
            let model = WindowModel::Coefficient {
                regressors: &rs,
                output: &window.output,
            };
            let tuned = eb_tune_with(
                &mut ws,
                &model,
                &base_spec,
                starts,
                derive_seed(opts.seed, k as u64),
                if opts.warm_start {
                    warm.as_deref()
                } else {
                    None
                },
            )?;
            // MAP at the tuned hyperparameters
            let mut eta_map = BTreeMap::new();
            for (name, v) in &tuned.eta {
                eta_map.insert(name.clone(), *v);
            }
            let tuned_spec = KernelSpec::new(KernelFamily::Di, eta_map);
            let m_theta = di_kernel(&tuned_spec, n_b, n_i)?;
            let theta = map_theta(&rs.psi, &window.output, &m_theta, tuned.sigma2)?;
            let x_e = rs.x[window.eval_index()];
            let b: Vec<Complex<T>> = (0..=n_b).map(|i| theta[i]).collect();
            let i_poly: Vec<Complex<T>> = (0..=n_i).map(|i| theta[n_b + 1 + i]).collect();
            Ok((tuned, eval_poly(&b, x_e), eval_poly(&i_poly, x_e)))
        })();
        est.bins.push(k);
        est.omega.push(record.omega[k]);
        match step {
            Ok((mut tuned, g, t)) => {
                warm = Some(
                    tuned
                        .eta
                        .iter()
                        .map(|(_, v)| v.ln())
                        .chain(std::iter::once(tuned.sigma2.ln()))
                        .collect(),
                );
                est.g_hat.push(g);
                est.t_hat.push(t);
                est.sigma2_hat.push(tuned.sigma2);
                est.detail
                    .push(format!("starts={}/{}", tuned.converged_starts(), starts));
                if let Some(tv) = tuning.as_mut() {
                    tuned.g_hat = Some(g);
                    tuned.t_hat = Some(t);
                    tv.push(tuned);
                }
            }
            Err(e) => {
                est.g_hat.push(Complex::new(T::zero(), T::zero()));
                est.t_hat.push(Complex::new(T::zero(), T::zero()));
                est.sigma2_hat.push(T::nan());
                est.detail.push("failed".into());
                est.failures.push((k, e.to_string()));
            }
        }
    }
    est.tuning = tuning;
    Ok(est)
}

/// Local Gaussian process regression: FRF-space prior (DP, DC, DCpR1 or
/// DPpR1) on the windowed FRF samples, empirical-Bayes tuning per window,
/// MAP estimates of the FRF and transient at the evaluation offset.
pub fn lgpr_estimate<T: Scalar>(
    record: &SpectraRecord<T>,
    half_width: usize,
    spec: &KernelSpec<T>,
    opts: &EstimateOptions<T>,
) -> Result<FrfEstimate<T>> {
    if !matches!(
        spec.family,
        KernelFamily::Dp | KernelFamily::Dc | KernelFamily::DcPlusR1 | KernelFamily::DpPlusR1
    ) {
        return Err(FrfError::invalid(
            "LGPR expects an FRF-space kernel family (DP, DC, DCpR1, DPpR1)",
        ));
    }
    let bins = band_bins(record, &opts.band)?;
    let starts = opts
        .starts
        .unwrap_or_else(|| default_starts(spec.family.tunable_names().len()));

    let mut est = FrfEstimate::empty(format!("LGPR({})", spec.family));
    let mut tuning = opts.embed_trace.then(Vec::new);
    let mut ws = EbWorkspace::new(2 * half_width + 1);
    let mut warm: Option<Vec<T>> = None;
    let mut max_resid = T::zero();
    for &k in &bins {
        let step = (|| -> Result<(TunedWindow<T>, Complex<T>, Complex<T>, T)> {
            let window = extract_window(record, k, half_width)?;
            let grid = WindowGrid::from_window(&window, opts.alpha);
            let model = WindowModel::FrfSpace {
                input: &window.input,
                output: &window.output,
                grid: &grid,
            };
            let tuned = eb_tune_with(
                &mut ws,
                &model,
                spec,
                starts,
                derive_seed(opts.seed, k as u64),
                if opts.warm_start {
                    warm.as_deref()
                } else {
                    None
                },
            )?;
            let tuned_spec = spec.with_eta_vec(&tuned.eta_values())?;
            let (m_g, m_t) = frf_kernel_pair(&tuned_spec, &grid)?;
            let gt = map_gt(&window.input, &window.output, &m_g, &m_t, tuned.sigma2)?;
            let idx = window.eval_index();
            Ok((tuned, gt.g[idx], gt.t[idx], gt.identity_residual))
        })();
        est.bins.push(k);
        est.omega.push(record.omega[k]);
        match step {
            Ok((mut tuned, g, t, resid)) => {
                warm = Some(
                    tuned
                        .eta
                        .iter()
                        .map(|(_, v)| v.ln())
                        .chain(std::iter::once(tuned.sigma2.ln()))
                        .collect(),
                );
                max_resid = max_resid.max(resid);
                est.g_hat.push(g);
                est.t_hat.push(t);
                est.sigma2_hat.push(tuned.sigma2);
                est.detail
                    .push(format!("starts={}/{}", tuned.converged_starts(), starts));
                if let Some(tv) = tuning.as_mut() {
                    tuned.g_hat = Some(g);
                    tuned.t_hat = Some(t);
                    tv.push(tuned);
                }
            }
            Err(e) => {
                est.g_hat.push(Complex::new(T::zero(), T::zero()));
                est.t_hat.push(Complex::new(T::zero(), T::zero()));
                est.sigma2_hat.push(T::nan());
                est.detail.push("failed".into());
                est.failures.push((k, e.to_string()));
            }
        }
    }
    est.max_identity_residual = Some(max_resid);
    est.tuning = tuning;
    Ok(est)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

const ESTIMATE_HEADER: [&str; 9] = [
    "k",
    "omega",
    "re_Ghat",
    "im_Ghat",
    "re_That",
    "im_That",
    "sigma2_hat",
    "method",
    "detail",
];

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

impl<T: Scalar> FrfEstimate<T> {
    /// Write the per-bin estimates as CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(ESTIMATE_HEADER)?;
        for i in 0..self.bins.len() {
            w.write_record([
                self.bins[i].to_string(),
                fmt_f64(self.omega[i].to_f64().unwrap()),
                fmt_f64(self.g_hat[i].re.to_f64().unwrap()),
                fmt_f64(self.g_hat[i].im.to_f64().unwrap()),
                fmt_f64(self.t_hat[i].re.to_f64().unwrap()),
                fmt_f64(self.t_hat[i].im.to_f64().unwrap()),
                fmt_f64(self.sigma2_hat[i].to_f64().unwrap()),
                self.method.clone(),
                self.detail[i].clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read per-bin estimates back from CSV.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let headers = r.headers()?.clone();
        let need = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| FrfError::invalid(format!("missing CSV column {name}")))
        };
        let ik = need("k")?;
        let iw = need("omega")?;
        let (igr, igi) = (need("re_Ghat")?, need("im_Ghat")?);
        let (itr, iti) = (need("re_That")?, need("im_That")?);
        let is2 = need("sigma2_hat")?;
        let im = need("method")?;
        let id = need("detail")?;
        let mut est = FrfEstimate::empty("");
        let parse = |s: &str| -> Result<T> {
            s.parse::<f64>()
                .map(cvt)
                .map_err(|e| FrfError::invalid(format!("bad float {s:?}: {e}")))
        };
        for rec in r.records() {
            let rec = rec?;
            est.bins.push(
                rec.get(ik)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| FrfError::invalid("bad bin index"))?,
            );
            est.omega.push(parse(rec.get(iw).unwrap_or(""))?);
            est.g_hat.push(Complex::new(
                parse(rec.get(igr).unwrap_or(""))?,
                parse(rec.get(igi).unwrap_or(""))?,
            ));
            est.t_hat.push(Complex::new(
                parse(rec.get(itr).unwrap_or(""))?,
                parse(rec.get(iti).unwrap_or(""))?,
            ));
            est.sigma2_hat.push(parse(rec.get(is2).unwrap_or(""))?);
            if est.method.is_empty() {
                est.method = rec.get(im).unwrap_or("").to_string();
            }
            est.detail.push(rec.get(id).unwrap_or("").to_string());
        }
        Ok(est)
    }

    /// Write the estimate as JSON, embedding the tuning trace when present.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let dto = EstimateDto::from_estimate(self);
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut file, &dto)?;
        file.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TuneDto {
    eta: BTreeMap<String, f64>,
    sigma2: f64,
    nll: f64,
    starts: usize,
    converged: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trace: Option<Vec<(Vec<f64>, f64, bool)>>,
}

#[derive(Serialize, Deserialize)]
struct EstimateDto {
    method: String,
    k: Vec<usize>,
    omega: Vec<f64>,
    re_ghat: Vec<f64>,
    im_ghat: Vec<f64>,
    re_that: Vec<f64>,
    im_that: Vec<f64>,
    sigma2_hat: Vec<f64>,
    detail: Vec<String>,
    failures: Vec<(usize, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_identity_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tuning: Option<Vec<TuneDto>>,
}

impl EstimateDto {
    fn from_estimate<T: Scalar>(e: &FrfEstimate<T>) -> Self {
        EstimateDto {
            method: e.method.clone(),
            k: e.bins.clone(),
            omega: e.omega.iter().map(|v| v.to_f64().unwrap()).collect(),
            re_ghat: e.g_hat.iter().map(|c| c.re.to_f64().unwrap()).collect(),
            im_ghat: e.g_hat.iter().map(|c| c.im.to_f64().unwrap()).collect(),
            re_that: e.t_hat.iter().map(|c| c.re.to_f64().unwrap()).collect(),
            im_that: e.t_hat.iter().map(|c| c.im.to_f64().unwrap()).collect(),
            sigma2_hat: e.sigma2_hat.iter().map(|v| v.to_f64().unwrap()).collect(),
            detail: e.detail.clone(),
            failures: e.failures.clone(),
            max_identity_residual: e.max_identity_residual.map(|v| v.to_f64().unwrap()),
            tuning: e.tuning.as_ref().map(|ts| {
                ts.iter()
                    .map(|t| TuneDto {
                        eta: t
                            .eta
                            .iter()
                            .map(|(n, v)| (n.clone(), v.to_f64().unwrap()))
                            .collect(),
                        sigma2: t.sigma2.to_f64().unwrap(),
                        nll: t.nll.to_f64().unwrap(),
                        starts: t.trace.len(),
                        converged: t.converged_starts(),
                        trace: Some(
                            t.trace
                                .iter()
                                .map(|r| {
                                    (
                                        r.start
                                            .iter()
                                            .map(|v| v.to_f64().unwrap())
                                            .collect(),
                                        r.value.to_f64().unwrap(),
                                        r.converged,
                                    )
                                })
                                .collect(),
                        ),
                    })
                    .collect()
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgauss::{decompose, AugmentedKernel};
    use crate::kernels::{di_kernel_blocks, pushforward};
    use crate::localwin::regressors;
    use crate::scalar::cplx;
    use crate::spectra::{simulate, ExperimentConfig, TestSystem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_record(seed: u64, snr_db: f64) -> SpectraRecord<f64> {
        let cfg = ExperimentConfig {
            sample_count: 512,
            sampling_interval: 0.1,
            period: 640,
            excited_fraction: 0.4,
            snr_db,
            warmup_periods: 2,
            rng_seed: seed,
        };
        let sys = TestSystem::smooth_default(0.1);
        simulate(&sys, &cfg).unwrap()
    }

    fn dp_spec() -> KernelSpec<f64> {
        let mut eta = BTreeMap::new();
        for (n, v) in [
            ("alpha_G", 1.0),
            ("lambda", 0.01),
            ("beta_G", 1.0),
            ("kappa", 0.01),
        ] {
            eta.insert(n.to_string(), v);
        }
        let mut s = KernelSpec::new(KernelFamily::Dp, eta);
        s.transient_scale = Some(1.0);
        s
    }

    #[test]
    fn frozen_bounds_pin_eta() {
        let rec = smooth_record(1, 40.0);
        let w = extract_window(&rec, 30, 5).unwrap();
        let grid = WindowGrid::from_window(&w, None);
        let model = WindowModel::FrfSpace {
            input: &w.input,
            output: &w.output,
            grid: &grid,
        };
        let mut spec = dp_spec();
        let frozen: Vec<(&str, f64)> = vec![
            ("alpha_G", 0.5),
            ("lambda", 0.003),
            ("beta_G", 0.4),
            ("kappa", 0.002),
            ("c_T", 0.1),
        ];
        let mut bounds = BTreeMap::new();
        for (n, v) in &frozen {
            bounds.insert(n.to_string(), (*v, *v));
        }
        spec.bounds = Some(bounds);
        let tuned = eb_tune(&model, &spec, 4, 7, None).unwrap();
        for ((name, value), (fname, fvalue)) in tuned.eta.iter().zip(&frozen) {
            assert_eq!(name, fname);
            let rel = (value - fvalue).abs() / fvalue;
            assert!(rel < 1e-12, "{name} moved: {value} vs {fvalue}");
        }
        assert!(tuned.sigma2 > 0.0);
    }

    #[test]
    fn doubling_starts_never_increases_nll() {
        let rec = smooth_record(2, 30.0);
        let w = extract_window(&rec, 40, 5).unwrap();
        let grid = WindowGrid::from_window(&w, None);
        let model = WindowModel::FrfSpace {
            input: &w.input,
            output: &w.output,
            grid: &grid,
        };
        let spec = dp_spec();
        let a = eb_tune(&model, &spec, 6, 11, None).unwrap();
        let b = eb_tune(&model, &spec, 12, 11, None).unwrap();
        assert!(
            b.nll <= a.nll + 1e-9,
            "doubling starts worsened NLL: {} -> {}",
            a.nll,
            b.nll
        );
    }

    /// Draw a complex vector from an augmented kernel.
    fn sample_from_kernel(
        kernel: &AugmentedKernel<f64>,
        rng: &mut ChaCha8Rng,
    ) -> DVector<Complex<f64>> {
        let m = kernel.dim();
        let k_real = decompose(kernel).matrix;
        let eig = nalgebra::SymmetricEigen::new(k_real);
        let mut z = DVector::zeros(2 * m);
        for i in 0..2 * m {
            let lam = eig.eigenvalues[i].max(0.0).sqrt();
            z += eig.eigenvectors.column(i) * (lam * f64::standard_normal(rng));
        }
        DVector::from_fn(m, |r, _| Complex::new(z[r], z[m + r]))
    }

    #[test]
    fn eb_recovers_generating_noise_scale() {
        // data drawn from the DP prior with sigma2 = 1: the tuned noise
        // variance should track the generating scale in the median
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 11;
        let x: Vec<f64> = (-5..=5).map(|r| r as f64).collect();
        let omega_abs: Vec<f64> = x.iter().map(|v| 3.0 + 0.05 * v).collect();
        let grid = WindowGrid {
            x,
            omega_abs,
        };
        let gen_spec = {
            let mut eta = BTreeMap::new();
            for (n, v) in [
                ("alpha_G", 4.0),
                ("lambda", 0.02),
                ("beta_G", 3.0),
                ("kappa", 0.015),
            ] {
                eta.insert(n.to_string(), v);
            }
            let mut s = KernelSpec::new(KernelFamily::Dp, eta);
            s.transient_scale = Some(0.5);
            s
        };
        let (m_g, m_t) = frf_kernel_pair(&gen_spec, &grid).unwrap();
        let mut ratios = Vec::new();
        for _ in 0..60 {
            let g = sample_from_kernel(&m_g, &mut rng);
            let t = sample_from_kernel(&m_t, &mut rng);
            let u = DVector::from_fn(m, |_, _| {
                Complex::new(f64::standard_normal(&mut rng), f64::standard_normal(&mut rng))
            });
            let noise_scale = (0.5_f64).sqrt();
            let y = DVector::from_fn(m, |r, _| {
                u[r] * g[r]
                    + t[r]
                    + Complex::new(
                        noise_scale * f64::standard_normal(&mut rng),
                        noise_scale * f64::standard_normal(&mut rng),
                    )
            });
            let model = WindowModel::FrfSpace {
                input: &u,
                output: &y,
                grid: &grid,
            };
            let tuned = eb_tune(&model, &gen_spec, 5, 99, None).unwrap();
            ratios.push(tuned.sigma2);
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ratios[ratios.len() / 2];
        assert!(
            (0.5..2.0).contains(&median),
            "median tuned sigma2 {median} far from 1"
        );
    }

    #[test]
    fn lrpm_tracks_smooth_truth() {
        let rec = smooth_record(3, f64::INFINITY);
        let band: Vec<usize> = (20..35).collect();
        let opts = EstimateOptions {
            starts: Some(6),
            band: Some(band.clone()),
            ..Default::default()
        };
        let est = lrpm_estimate(&rec, 5, (4, 4), None, &opts).unwrap();
        assert!(est.failures.is_empty(), "failures: {:?}", est.failures);
        let g_true = rec.g_true.as_ref().unwrap();
        for (i, &k) in band.iter().enumerate() {
            let err = (est.g_hat[i] - g_true[k]).norm();
            assert!(err < 1e-4, "bin {k} error {err}");
        }
    }

    #[test]
    fn lgpr_dp_tracks_smooth_truth() {
        let rec = smooth_record(4, f64::INFINITY);
        let band: Vec<usize> = (20..30).collect();
        let opts = EstimateOptions {
            starts: Some(6),
            band: Some(band.clone()),
            ..Default::default()
        };
        let est = lgpr_estimate(&rec, 5, &dp_spec(), &opts).unwrap();
        assert!(est.failures.is_empty());
        let g_true = rec.g_true.as_ref().unwrap();
        for (i, &k) in band.iter().enumerate() {
            let err = (est.g_hat[i] - g_true[k]).norm();
            assert!(err < 1e-4, "bin {k} error {err}");
        }
    }

    #[test]
    fn lrpm_equals_pushforward_lgpr() {
        // extension equivalence: the coefficient-space MAP pushed through the
        // basis equals the FRF-space MAP with the pushforward kernel
        let rec = smooth_record(6, 40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let k = 15 + (trial * 3) % 60;
            let w = extract_window(&rec, k, 5).unwrap();
            let rs = regressors(&w, 4, 4, None).unwrap();
            // random in-bounds DI hyperparameters
            let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
                let t: f64 = rng.random();
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            };
            let mut eta = BTreeMap::new();
            eta.insert("alpha_G".into(), draw(&mut rng, 1e-2, 1e2));
            eta.insert("alpha_T".into(), draw(&mut rng, 1e-2, 1e2));
            eta.insert("lambda".into(), draw(&mut rng, 1e-4, 0.19));
            eta.insert("beta_G".into(), draw(&mut rng, 1e-2, 1e2));
            eta.insert("kappa".into(), draw(&mut rng, 1e-4, 0.19));
            let spec = KernelSpec::new(KernelFamily::Di, eta);
            let sigma2 = draw(&mut rng, 1e-4, 1.0);

            // coefficient-space route
            let m_theta = di_kernel(&spec, 4, 4).unwrap();
            let theta = map_theta(&rs.psi, &w.output, &m_theta, sigma2).unwrap();
            let x_e = rs.x[w.eval_index()];
            let b: Vec<Complex<f64>> = (0..=4).map(|i| theta[i]).collect();
            let g_coeff = eval_poly(&b, x_e);

            // FRF-space route through the basis pushforward
            let (g_block, t_block) = di_kernel_blocks(&spec, 4, 4).unwrap();
            let m_g = pushforward(&g_block, &rs.phi_b).unwrap();
            let m_t = pushforward(&t_block, &rs.phi_i).unwrap();
            let gt = map_gt(&w.input, &w.output, &m_g, &m_t, sigma2).unwrap();
            let g_frf = gt.g[w.eval_index()];

            let denom = g_coeff.norm().max(1e-12);
            let rel = (g_coeff - g_frf).norm() / denom;
            assert!(rel < 1e-8, "trial {trial}: routes differ by {rel}");
        }
    }

    #[test]
    fn zero_signal_shrinks_to_zero() {
        let m_bins = 64;
        let rec = SpectraRecord::<f64> {
            sample_count: 126,
            sampling_interval: 0.1,
            omega: (0..m_bins).map(|k| k as f64 * 0.05).collect(),
            input: vec![cplx(0.0, 0.0); m_bins],
            output: vec![cplx(0.0, 0.0); m_bins],
            g_true: None,
            sigma2_true: None,
            excited: (0..m_bins).map(|k| k >= 1).collect(),
        };
        let opts = EstimateOptions {
            starts: Some(3),
            band: Some(vec![20, 21]),
            ..Default::default()
        };
        let est = lgpr_estimate(&rec, 5, &dp_spec(), &opts).unwrap();
        assert!(est.failures.is_empty(), "failures: {:?}", est.failures);
        for g in &est.g_hat {
            assert_eq!(g.norm_sqr(), 0.0);
        }
    }

    #[test]
    fn shrinkage_monotone_in_sigma() {
        let rec = smooth_record(7, 20.0);
        let w = extract_window(&rec, 25, 5).unwrap();
        let grid = WindowGrid::from_window(&w, None);
        let spec = dp_spec();
        let (m_g, m_t) = frf_kernel_pair(&spec, &grid).unwrap();
        let mut last_norm = f64::INFINITY;
        for exp in 0..6 {
            let sigma2 = 10f64.powi(exp - 2);
            let gt = map_gt(&w.input, &w.output, &m_g, &m_t, sigma2).unwrap();
            let n = gt.g.norm();
            assert!(n < last_norm, "norm not decreasing at sigma2 = {sigma2}");
            last_norm = n;
        }
    }

    #[test]
    fn estimates_deterministic_given_seed() {
        let rec = smooth_record(9, 30.0);
        let opts = EstimateOptions {
            starts: Some(4),
            band: Some((20..25).collect()),
            seed: 42,
            ..Default::default()
        };
        let a = lgpr_estimate(&rec, 5, &dp_spec(), &opts).unwrap();
        let b = lgpr_estimate(&rec, 5, &dp_spec(), &opts).unwrap();
        assert_eq!(a.g_hat, b.g_hat);
        assert_eq!(a.sigma2_hat, b.sigma2_hat);

        let c = lrpm_estimate(&rec, 5, (4, 4), None, &opts).unwrap();
        let d = lrpm_estimate(&rec, 5, (4, 4), None, &opts).unwrap();
        assert_eq!(c.g_hat, d.g_hat);
    }

    #[test]
    fn estimate_csv_round_trip() {
        let rec = smooth_record(10, 30.0);
        let opts = EstimateOptions {
            starts: Some(3),
            band: Some((20..23).collect()),
            ..Default::default()
        };
        let est = lgpr_estimate(&rec, 5, &dp_spec(), &opts).unwrap();
        let dir = std::env::temp_dir().join("frf_lab_lgpr_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("est.csv");
        est.write_csv(&path).unwrap();
        let back = FrfEstimate::<f64>::read_csv(&path).unwrap();
        assert_eq!(back.bins, est.bins);
        assert_eq!(back.method, est.method);
        for i in 0..est.bins.len() {
            assert_eq!(back.g_hat[i], est.g_hat[i]);
            assert_eq!(back.sigma2_hat[i], est.sigma2_hat[i]);
        }
        let jpath = dir.join("est.json");
        est.write_json(&jpath).unwrap();
        let text = std::fs::read_to_string(&jpath).unwrap();
        assert!(text.contains("\"method\": \"LGPR(DP)\""));
    }
}
