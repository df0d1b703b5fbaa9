//! Kernel priors for the regularized local estimators.
//!
//! Coefficient space gets the diagonal (DI) kernel; FRF space gets the
//! dot-product (DP), diagonal-correlated (DC) and resonance (R1) kernels
//! plus the additive composites DCpR1 and DPpR1. The transient prior is
//! coupled to the FRF prior through a single scale `c_T` (`M_T = c_T M_G`).
//!
//! DP operates on scaled offset frequencies `x_r = alpha * omega_r`; DC and
//! R1 operate on the absolute window frequencies.

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::cgauss::AugmentedKernel;
use crate::error::{FrfError, Result};
use crate::localwin::{scaled_offsets, LocalWindow};
use crate::scalar::{cvt, Scalar};

/// Margin inside the DP convergence bound.
const DP_MARGIN: f64 = 1e-6;

/// Kernel family identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    #[serde(rename = "DI")]
    Di,
    #[serde(rename = "DP")]
    Dp,
    #[serde(rename = "DC")]
    Dc,
    #[serde(rename = "R1")]
    R1,
    #[serde(rename = "DCpR1")]
    DcPlusR1,
    #[serde(rename = "DPpR1")]
    DpPlusR1,
}

impl KernelFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelFamily::Di => "DI",
            KernelFamily::Dp => "DP",
            KernelFamily::Dc => "DC",
            KernelFamily::R1 => "R1",
            KernelFamily::DcPlusR1 => "DCpR1",
            KernelFamily::DpPlusR1 => "DPpR1",
        }
    }

    /// Canonical hyperparameter names, excluding the transient scale.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            KernelFamily::Di => &["alpha_G", "alpha_T", "lambda", "beta_G", "kappa"],
            KernelFamily::Dp => &["alpha_G", "lambda", "beta_G", "kappa"],
            KernelFamily::Dc => &["lambda", "alpha", "beta"],
            KernelFamily::R1 => &["beta1", "beta2", "gamma1", "gamma2"],
            KernelFamily::DcPlusR1 => &[
                "lambda", "alpha", "beta", "beta1", "beta2", "gamma1", "gamma2",
            ],
            KernelFamily::DpPlusR1 => &[
                "alpha_G", "lambda", "beta_G", "kappa", "beta1", "beta2", "gamma1", "gamma2",
            ],
        }
    }

    /// Names of all tunable entries: kernel parameters plus `c_T` for the
    /// FRF-space families.
    pub fn tunable_names(&self) -> Vec<&'static str> {
        let mut names = self.param_names().to_vec();
        if self.is_frf_space() {
            names.push("c_T");
        }
        names
    }

    /// True for kernels that live on the window FRF samples.
    pub fn is_frf_space(&self) -> bool {
        !matches!(self, KernelFamily::Di)
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = FrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DI" => Ok(KernelFamily::Di),
            "DP" => Ok(KernelFamily::Dp),
            "DC" => Ok(KernelFamily::Dc),
            "R1" => Ok(KernelFamily::R1),
            "DCpR1" => Ok(KernelFamily::DcPlusR1),
            "DPpR1" => Ok(KernelFamily::DpPlusR1),
            other => Err(FrfError::invalid(format!("unknown kernel family {other}"))),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Frequency grids a kernel is evaluated on.
#[derive(Clone, Debug)]
pub struct WindowGrid<T: Scalar> {
    /// Scaled offset frequencies `x_r = alpha * omega_r` (DP argument).
    pub x: Vec<T>,
    /// Absolute window frequencies in rad/s (DC and R1 argument).
    pub omega_abs: Vec<T>,
}

impl<T: Scalar> WindowGrid<T> {
    pub fn from_window(window: &LocalWindow<T>, alpha: Option<T>) -> Self {
        WindowGrid {
            x: scaled_offsets(window, alpha),
            omega_abs: window.omega_abs.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn x_max_abs(&self) -> T {
        self.x
            .iter()
            .map(|v| v.abs())
            .fold(T::zero(), |a, b| a.max(b))
    }
}

/// Kernel family, named hyperparameters and transient coupling scale.
///
/// Serializes as `{family, eta: {name: value}, c_T}`; tuning bounds are a
/// runtime concern and are only serialized when explicitly overridden.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Serialize",
    deserialize = "T: serde::de::DeserializeOwned"
))]
pub struct KernelSpec<T: Scalar> {
    pub family: KernelFamily,
    pub eta: BTreeMap<String, T>,
    #[serde(rename = "c_T", default, skip_serializing_if = "Option::is_none")]
    pub transient_scale: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BTreeMap<String, (T, T)>>,
}

impl<T: Scalar> KernelSpec<T> {
    /// Spec with the given eta entries; missing entries fail at build time.
    pub fn new(family: KernelFamily, eta: BTreeMap<String, T>) -> Self {
        KernelSpec {
            family,
            eta,
            transient_scale: None,
            bounds: None,
        }
    }

    /// Spec positioned at the geometric center of the default bounds.
    pub fn default_for(family: KernelFamily, hints: &BoundHints<T>) -> Self {
        let bounds = default_bounds(family, hints);
        let mut eta = BTreeMap::new();
        let mut c_t = None;
        for (name, lo, hi) in &bounds {
            let mid = (lo.ln() + hi.ln()) * cvt::<T>(0.5);
            let v = mid.exp();
            if *name == "c_T" {
                c_t = Some(v);
            } else {
                eta.insert(name.to_string(), v);
            }
        }
        KernelSpec {
            family,
            eta,
            transient_scale: c_t,
            bounds: None,
        }
    }

    pub fn get(&self, name: &str) -> Result<T> {
        if name == "c_T" {
            return self
                .transient_scale
                .ok_or_else(|| FrfError::invalid("c_T not set"));
        }
        self.eta
            .get(name)
            .copied()
            .ok_or_else(|| FrfError::invalid(format!("missing hyperparameter {name}")))
    }

    /// Hyperparameters in canonical order (with `c_T` last when tunable).
    pub fn eta_vec(&self) -> Result<Vec<T>> {
        self.family
            .tunable_names()
            .iter()
            .map(|n| self.get(n))
            .collect()
    }

    /// Rebuild a spec from a canonical-order parameter vector.
    pub fn with_eta_vec(&self, values: &[T]) -> Result<Self> {
        let names = self.family.tunable_names();
        if names.len() != values.len() {
            return Err(FrfError::invalid("eta vector length mismatch"));
        }
        let mut spec = self.clone();
        for (name, &v) in names.iter().zip(values) {
            if *name == "c_T" {
                spec.transient_scale = Some(v);
            } else {
                spec.eta.insert(name.to_string(), v);
            }
        }
        Ok(spec)
    }

    fn check_bounds(&self) -> Result<()> {
        if let Some(bounds) = &self.bounds {
            for (name, (lo, hi)) in bounds {
                let v = self.get(name)?;
                if v < *lo || v > *hi {
                    return Err(FrfError::KernelBounds(format!(
                        "{name} = {:?} outside [{:?}, {:?}]",
                        v.to_f64(),
                        lo.to_f64(),
                        hi.to_f64()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Data-driven context for default tuning bounds.
#[derive(Clone, Debug)]
pub struct BoundHints<T: Scalar> {
    /// Mean output/input power ratio of the window (squared gain scale).
    pub gain_scale: T,
    /// Largest `|x_r|` on the DP grid.
    pub x_max: T,
    /// Absolute frequency range `(min, max)` of the window.
    pub omega_range: (T, T),
}

impl<T: Scalar> BoundHints<T> {
    pub fn from_window(window: &LocalWindow<T>, alpha: Option<T>) -> Self {
        let grid = WindowGrid::from_window(window, alpha);
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
            gain_scale: window.gain_scale(),
            x_max: grid.x_max_abs(),
            omega_range: (lo, hi),
        }
    }
}

/// Default per-entry log-space bounds for empirical-Bayes tuning.
///
/// Decay parameters obey the stability/convergence bounds: `lambda, kappa`
/// stay below `1/x_max` for DI and below `(1 - 1e-6)/x_max^2` for the DP
/// families. Amplitude entries scale with the window gain; the resonance
/// location `beta2` is confined to the window's frequency neighborhood.
pub fn default_bounds<T: Scalar>(
    family: KernelFamily,
    hints: &BoundHints<T>,
) -> Vec<(&'static str, T, T)> {
    let s_g = hints.gain_scale.max(cvt(1e-30));
    let amp_lo = s_g * cvt(1e-8);
    let amp_hi = s_g * cvt(1e6);
    let x_max = hints.x_max.max(T::one());
    let di_decay_hi = (T::one() - cvt(DP_MARGIN)) / x_max;
    let dp_decay_hi = (T::one() - cvt(DP_MARGIN)) / (x_max * x_max);
    let decay_lo_factor = cvt::<T>(1e-6);
    let (w_lo, w_hi) = hints.omega_range;
    let span = (w_hi - w_lo).max(cvt(1e-3));
    let gamma_scale = (s_g.sqrt() * (w_hi * w_hi + T::one())).max(cvt(1e-30));

    let mut out: Vec<(&'static str, T, T)> = Vec::new();
    for name in family.tunable_names() {
        let (lo, hi) = match name {
            "alpha_G" | "beta_G" | "alpha_T" => (amp_lo, amp_hi),
            "lambda" if family == KernelFamily::Di => {
                (di_decay_hi * decay_lo_factor, di_decay_hi)
            }
            "kappa" if family == KernelFamily::Di => {
                (di_decay_hi * decay_lo_factor, di_decay_hi)
            }
            "lambda"
                if matches!(family, KernelFamily::Dp | KernelFamily::DpPlusR1) =>
            {
                (dp_decay_hi * decay_lo_factor, dp_decay_hi)
            }
            "kappa" => (dp_decay_hi * decay_lo_factor, dp_decay_hi),
            // DC amplitude
            "lambda" => (amp_lo, amp_hi),
            "alpha" => (cvt(1e-3), cvt(1e2)),
            "beta" => (cvt(1e-3), cvt(1e2)),
            "beta1" => (cvt(1e-4), cvt(2e1)),
            // the resonance kernel models the window's own resonance or a
            // pole just beyond its edge shaping the in-window tail
            "beta2" => {
                let margin = span * cvt(0.6);
                ((w_lo - margin).max(cvt(1e-3)), w_hi + margin + cvt(1e-3))
            }
            "gamma1" | "gamma2" => (gamma_scale * cvt(1e-8), gamma_scale * cvt(1e5)),
            "c_T" => (cvt(1e-6), cvt(1e6)),
            other => unreachable!("unknown hyperparameter {other}"),
        };
        out.push((name, lo, hi));
    }
    out
}

fn nonneg<T: Scalar>(spec: &KernelSpec<T>, name: &str) -> Result<T> {
    let v = spec.get(name)?;
    if v < T::zero() || !v.is_finite() {
        return Err(FrfError::KernelBounds(format!(
            "{name} must be nonnegative, got {:?}",
            v.to_f64()
        )));
    }
    Ok(v)
}

fn positive<T: Scalar>(spec: &KernelSpec<T>, name: &str) -> Result<T> {
    let v = spec.get(name)?;
    if v <= T::zero() || !v.is_finite() {
        return Err(FrfError::KernelBounds(format!(
            "{name} must be positive, got {:?}",
            v.to_f64()
        )));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// DI kernel (coefficient space)
// ---------------------------------------------------------------------------

/// Diagonal entries of the DI kernel: `(Gamma, C)` pairs for the FRF block
/// followed by the transient block. `beta_T = alpha_T * beta_G / alpha_G`.
pub(crate) fn di_diagonals<T: Scalar>(
    params: &[T],
    n_b: usize,
    n_i: usize,
    gamma: &mut Vec<T>,
    relation: &mut Vec<T>,
) -> Result<()> {
    let [alpha_g, alpha_t, lambda, beta_g, kappa]: [T; 5] = params
        .try_into()
        .map_err(|_| FrfError::invalid("DI expects 5 parameters"))?;
    for (name, v) in [
        ("alpha_G", alpha_g),
        ("alpha_T", alpha_t),
        ("beta_G", beta_g),
    ] {
        if v < T::zero() || !v.is_finite() {
            return Err(FrfError::KernelBounds(format!("{name} must be >= 0")));
        }
    }
    for (name, v) in [("lambda", lambda), ("kappa", kappa)] {
        if v < T::zero() || v >= T::one() || !v.is_finite() {
            return Err(FrfError::KernelBounds(format!(
                "{name} must be in [0, 1) for a summable coefficient prior"
            )));
        }
    }
    let beta_t = if alpha_g > T::zero() {
        alpha_t * beta_g / alpha_g
    } else {
        T::zero()
    };
    gamma.clear();
    relation.clear();
    let mut lam_pow = T::one();
    let mut kap_pow = T::one();
    for _ in 0..=n_b {
        gamma.push(alpha_g * lam_pow + beta_g * kap_pow);
        relation.push(alpha_g * lam_pow - beta_g * kap_pow);
        lam_pow *= lambda;
        kap_pow *= kappa;
    }
    lam_pow = T::one();
    kap_pow = T::one();
    for _ in 0..=n_i {
        gamma.push(alpha_t * lam_pow + beta_t * kap_pow);
        relation.push(alpha_t * lam_pow - beta_t * kap_pow);
        lam_pow *= lambda;
        kap_pow *= kappa;
    }
    Ok(())
}

/// DI kernel blocks over coefficient space: `(FRF block, transient block)`.
pub fn di_kernel_blocks<T: Scalar>(
    spec: &KernelSpec<T>,
    n_b: usize,
    n_i: usize,
) -> Result<(AugmentedKernel<T>, AugmentedKernel<T>)> {
    if spec.family != KernelFamily::Di {
        return Err(FrfError::invalid("spec is not a DI kernel"));
    }
    spec.check_bounds()?;
    let params = [
        spec.get("alpha_G")?,
        spec.get("alpha_T")?,
        spec.get("lambda")?,
        spec.get("beta_G")?,
        spec.get("kappa")?,
    ];
    let mut gamma = Vec::new();
    let mut relation = Vec::new();
    di_diagonals(&params, n_b, n_i, &mut gamma, &mut relation)?;
    let make = |g: &[T], c: &[T]| {
        let n = g.len();
        let mut gm = DMatrix::zeros(n, n);
        let mut cm = DMatrix::zeros(n, n);
        for i in 0..n {
            gm[(i, i)] = Complex::new(g[i], T::zero());
            cm[(i, i)] = Complex::new(c[i], T::zero());
        }
        AugmentedKernel::new(gm, cm)
    };
    let g_block = make(&gamma[..=n_b], &relation[..=n_b])?;
    let t_block = make(&gamma[n_b + 1..], &relation[n_b + 1..])?;
    Ok((g_block, t_block))
}

/// Full DI kernel over the stacked coefficient vector `[b; i]`.
pub fn di_kernel<T: Scalar>(
    spec: &KernelSpec<T>,
    n_b: usize,
    n_i: usize,
) -> Result<AugmentedKernel<T>> {
    let (g_block, t_block) = di_kernel_blocks(spec, n_b, n_i)?;
    let n = n_b + n_i + 2;
    let mut gamma = DMatrix::zeros(n, n);
    let mut relation = DMatrix::zeros(n, n);
    for i in 0..=n_b {
        gamma[(i, i)] = g_block.gamma[(i, i)];
        relation[(i, i)] = g_block.relation[(i, i)];
    }
    for i in 0..=n_i {
        gamma[(n_b + 1 + i, n_b + 1 + i)] = t_block.gamma[(i, i)];
        relation[(n_b + 1 + i, n_b + 1 + i)] = t_block.relation[(i, i)];
    }
    AugmentedKernel::new(gamma, relation)
}

/// Push a coefficient-space kernel block through the polynomial basis:
/// `Gamma_G = Phi Gamma Phi^H`, `C_G = Phi C Phi^T`.
pub fn pushforward<T: Scalar>(
    block: &AugmentedKernel<T>,
    phi: &DMatrix<T>,
) -> Result<AugmentedKernel<T>> {
    if phi.ncols() != block.dim() {
        return Err(FrfError::invalid("pushforward basis dimension mismatch"));
    }
    let phi_c = phi.map(|v| Complex::new(v, T::zero()));
    let gamma = &phi_c * &block.gamma * phi_c.adjoint();
    let relation = &phi_c * &block.relation * phi_c.transpose();
    AugmentedKernel::new(gamma, relation)
}

// ---------------------------------------------------------------------------
// FRF-space kernels
// ---------------------------------------------------------------------------

/// Precomputed entrywise evaluator for the FRF-space kernels; one build per
/// hyperparameter vector, then `entry(r, s)` yields `(Gamma, C)` pairs.
pub(crate) struct KernelEval<'a, T: Scalar> {
    dp: Option<(T, T, T, T)>,
    /// `(scale, beta, lead)` with `lead(w) = 1/(alpha + beta/2 + jw)`.
    dc: Option<(T, T, Vec<Complex<T>>)>,
    /// `(gamma1^2, gamma2^2, shape1, shape2)`.
    r1: Option<(T, T, Vec<Complex<T>>, Vec<Complex<T>>)>,
    x: &'a [T],
    omega: &'a [T],
}

impl<'a, T: Scalar> KernelEval<'a, T> {
    pub fn build(
        family: KernelFamily,
        params: &[T],
        grid: &'a WindowGrid<T>,
    ) -> Result<Self> {
        let mut eval = KernelEval {
            dp: None,
            dc: None,
            r1: None,
            x: &grid.x,
            omega: &grid.omega_abs,
        };
        let set_dp = |eval: &mut Self, p: &[T]| -> Result<()> {
            let [a, l, b, k] = [p[0], p[1], p[2], p[3]];
            let x_max = grid.x_max_abs();
            let bound =
                (T::one() - cvt(DP_MARGIN)) / (x_max * x_max).max(T::default_epsilon());
            for (name, v) in [("lambda", l), ("kappa", k)] {
                if v < T::zero() || v > bound || !v.is_finite() {
                    return Err(FrfError::KernelBounds(format!(
                        "DP {name} violates the convergence bound {:?}",
                        bound.to_f64()
                    )));
                }
            }
            if a < T::zero() || b < T::zero() {
                return Err(FrfError::KernelBounds(
                    "DP amplitudes must be nonnegative".into(),
                ));
            }
            eval.dp = Some((a, l, b, k));
            Ok(())
        };
        let set_dc = |eval: &mut Self, p: &[T]| -> Result<()> {
            let [l, a, b] = [p[0], p[1], p[2]];
            if l < T::zero() || a <= T::zero() || b <= T::zero() {
                return Err(FrfError::KernelBounds(
                    "DC needs lambda >= 0, alpha > 0, beta > 0".into(),
                ));
            }
            let scale = l / T::two_pi().sqrt();
            let pole = a + b / cvt(2.0);
            let one = Complex::new(T::one(), T::zero());
            let lead: Vec<Complex<T>> = grid
                .omega_abs
                .iter()
                .map(|&w| one / Complex::new(pole, w))
                .collect();
            eval.dc = Some((scale, b, lead));
            Ok(())
        };
        let set_r1 = |eval: &mut Self, p: &[T]| -> Result<()> {
            let [b1, b2, g1, g2] = [p[0], p[1], p[2], p[3]];
            if b1 <= T::zero() {
                return Err(FrfError::KernelBounds("R1 needs beta1 > 0".into()));
            }
            if b2 < T::zero() || g1 < T::zero() || g2 < T::zero() {
                return Err(FrfError::KernelBounds(
                    "R1 needs beta2, gamma1, gamma2 >= 0".into(),
                ));
            }
            let b2sq = b2 * b2;
            let mut shape1 = Vec::with_capacity(grid.omega_abs.len());
            let mut shape2 = Vec::with_capacity(grid.omega_abs.len());
            for &w in &grid.omega_abs {
                let num = Complex::new(b1, w);
                let den = num * num + Complex::new(b2sq, T::zero());
                shape1.push(num / den);
                shape2.push(Complex::new(b2, T::zero()) / den);
            }
            eval.r1 = Some((g1 * g1, g2 * g2, shape1, shape2));
            Ok(())
        };
        match family {
            KernelFamily::Dp => {
                if params.len() != 4 {
                    return Err(FrfError::invalid("DP expects 4 parameters"));
                }
                set_dp(&mut eval, params)?;
            }
            KernelFamily::Dc => {
                if params.len() != 3 {
                    return Err(FrfError::invalid("DC expects 3 parameters"));
                }
                set_dc(&mut eval, params)?;
            }
            KernelFamily::R1 => {
                if params.len() != 4 {
                    return Err(FrfError::invalid("R1 expects 4 parameters"));
                }
                set_r1(&mut eval, params)?;
            }
            KernelFamily::DcPlusR1 => {
                if params.len() != 7 {
                    return Err(FrfError::invalid("DCpR1 expects 7 parameters"));
                }
                set_dc(&mut eval, &params[..3])?;
                set_r1(&mut eval, &params[3..])?;
            }
            KernelFamily::DpPlusR1 => {
                if params.len() != 8 {
                    return Err(FrfError::invalid("DPpR1 expects 8 parameters"));
                }
                set_dp(&mut eval, &params[..4])?;
                set_r1(&mut eval, &params[4..])?;
            }
            KernelFamily::Di => {
                return Err(FrfError::invalid("DI is a coefficient-space kernel"))
            }
        }
        Ok(eval)
    }

    /// `(Gamma(r,s), C(r,s))`.
    #[inline]
    pub fn entry(&self, r: usize, s: usize) -> (Complex<T>, Complex<T>) {
        let mut g = Complex::new(T::zero(), T::zero());
        let mut c = Complex::new(T::zero(), T::zero());
        if let Some((alpha_g, lambda, beta_g, kappa)) = self.dp {
            let prod = self.x[r] * self.x[s];
            let a = alpha_g / (T::one() - lambda * prod);
            let b = beta_g / (T::one() - kappa * prod);
            g.re += a + b;
            c.re += a - b;
        }
        if let Some((scale, beta, lead)) = &self.dc {
            let one = Complex::new(T::one(), T::zero());
            let w_r = self.omega[r];
            let w_s = self.omega[s];
            let base_g = one / Complex::new(*beta, w_r - w_s);
            let base_c = one / Complex::new(*beta, w_r + w_s);
            g += (base_g * (lead[r] + lead[s].conj())).scale(*scale);
            c += (base_c * (lead[r] + lead[s])).scale(*scale);
        }
        if let Some((g1sq, g2sq, shape1, shape2)) = &self.r1 {
            let (a1, a2) = (shape1[r], shape2[r]);
            let (b1, b2) = (shape1[s], shape2[s]);
            g += a1 * b1.conj() * *g1sq + a2 * b2.conj() * *g2sq;
            c += a1 * b1 * *g1sq + a2 * b2 * *g2sq;
        }
        (g, c)
    }
}

/// Fill the `(Gamma_G, C_G)` blocks for an FRF-space family from a
/// canonical-order parameter slice (without `c_T`).
pub(crate) fn fill_frf_gamma<T: Scalar>(
    family: KernelFamily,
    params: &[T],
    grid: &WindowGrid<T>,
    gamma: &mut DMatrix<Complex<T>>,
    relation: &mut DMatrix<Complex<T>>,
) -> Result<()> {
    let eval = KernelEval::build(family, params, grid)?;
    let m = grid.len();
    for r in 0..m {
        for s in 0..m {
            let (g, c) = eval.entry(r, s);
            gamma[(r, s)] = g;
            relation[(r, s)] = c;
        }
    }
    Ok(())
}

/// Dot-product kernel over the scaled offsets (closed form of the infinite
/// power series).
pub fn dp_kernel<T: Scalar>(spec: &KernelSpec<T>, grid: &WindowGrid<T>) -> Result<AugmentedKernel<T>> {
    if spec.family != KernelFamily::Dp {
        return Err(FrfError::invalid("spec is not a DP kernel"));
    }
    spec.check_bounds()?;
    let m = grid.len();
    let mut gamma = DMatrix::zeros(m, m);
    let mut relation = DMatrix::zeros(m, m);
    let params = [
        nonneg(spec, "alpha_G")?,
        nonneg(spec, "lambda")?,
        nonneg(spec, "beta_G")?,
        nonneg(spec, "kappa")?,
    ];
    fill_frf_gamma(KernelFamily::Dp, &params, grid, &mut gamma, &mut relation)?;
    AugmentedKernel::new(gamma, relation)
}

/// Diagonal-correlated kernel on the absolute window frequencies, with the
/// relation matrix convention `C(jw, jw') = Gamma(jw, -jw')`.
pub fn dc_kernel<T: Scalar>(spec: &KernelSpec<T>, grid: &WindowGrid<T>) -> Result<AugmentedKernel<T>> {
    if spec.family != KernelFamily::Dc {
        return Err(FrfError::invalid("spec is not a DC kernel"));
    }
    spec.check_bounds()?;
    let m = grid.len();
    let mut gamma = DMatrix::zeros(m, m);
    let mut relation = DMatrix::zeros(m, m);
    let params = [
        nonneg(spec, "lambda")?,
        positive(spec, "alpha")?,
        positive(spec, "beta")?,
    ];
    fill_frf_gamma(KernelFamily::Dc, &params, grid, &mut gamma, &mut relation)?;
    AugmentedKernel::new(gamma, relation)
}

/// Resonance kernel induced by a second-order resonant system.
pub fn r1_kernel<T: Scalar>(spec: &KernelSpec<T>, grid: &WindowGrid<T>) -> Result<AugmentedKernel<T>> {
    if spec.family != KernelFamily::R1 {
        return Err(FrfError::invalid("spec is not an R1 kernel"));
    }
    spec.check_bounds()?;
    let m = grid.len();
    let mut gamma = DMatrix::zeros(m, m);
    let mut relation = DMatrix::zeros(m, m);
    let params = [
        positive(spec, "beta1")?,
        nonneg(spec, "beta2")?,
        nonneg(spec, "gamma1")?,
        nonneg(spec, "gamma2")?,
    ];
    fill_frf_gamma(KernelFamily::R1, &params, grid, &mut gamma, &mut relation)?;
    AugmentedKernel::new(gamma, relation)
}

/// `(M_G, M_T)` pair for any FRF-space family, with `M_T = c_T M_G`.
pub fn frf_kernel_pair<T: Scalar>(
    spec: &KernelSpec<T>,
    grid: &WindowGrid<T>,
) -> Result<(AugmentedKernel<T>, AugmentedKernel<T>)> {
    if !spec.family.is_frf_space() {
        return Err(FrfError::invalid(
            "transient coupling applies to FRF-space kernels only",
        ));
    }
    spec.check_bounds()?;
    let names = spec.family.param_names();
    let params: Vec<T> = names
        .iter()
        .map(|n| spec.get(n))
        .collect::<Result<Vec<_>>>()?;
    let m = grid.len();
    let mut gamma = DMatrix::zeros(m, m);
    let mut relation = DMatrix::zeros(m, m);
    fill_frf_gamma(spec.family, &params, grid, &mut gamma, &mut relation)?;
    let m_g = AugmentedKernel::new(gamma, relation)?;
    let c_t = spec.transient_scale.unwrap_or(T::zero());
    if c_t < T::zero() {
        return Err(FrfError::KernelBounds("c_T must be nonnegative".into()));
    }
    let m_t = m_g.scale(c_t);
    Ok((m_g, m_t))
}

/// Additive composite kernels (DCpR1, DPpR1): component sum for `M_G` and
/// transient coupling `M_T = c_T M_G`.
pub fn composite<T: Scalar>(
    spec: &KernelSpec<T>,
    grid: &WindowGrid<T>,
) -> Result<(AugmentedKernel<T>, AugmentedKernel<T>)> {
    match spec.family {
        KernelFamily::DcPlusR1 | KernelFamily::DpPlusR1 => frf_kernel_pair(spec, grid),
        _ => Err(FrfError::invalid(
            "composite() expects the DCpR1 or DPpR1 family",
        )),
    }
}
