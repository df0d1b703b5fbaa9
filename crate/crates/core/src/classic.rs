//! Classical local estimators: LPM, LRM, ILRM and MDL order selection.
//!
//! LPM fits local polynomials to the output error by truncated-SVD least
//! squares. LRM fits local rational models with the Levy weighting, which
//! keeps the problem linear. ILRM refines the rational fit on the true
//! output-error criterion with a damped Gauss-Newton iteration started from
//! the LRM solution.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{FrfError, Result};
use crate::localwin::{regressors, scaled_offsets, vandermonde, LocalWindow};
use crate::scalar::{cvt, Scalar};

/// Model orders of a local fit; `n_a = 0` means a polynomial model and
/// `n_i = None` drops the transient polynomial entirely.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FitOrders {
    pub n_a: usize,
    pub n_b: usize,
    pub n_i: Option<usize>,
}

impl FitOrders {
    pub fn polynomial(n_b: usize, n_i: usize) -> Self {
        FitOrders {
            n_a: 0,
            n_b,
            n_i: Some(n_i),
        }
    }

    pub fn rational(n_a: usize, n_b: usize, n_i: usize) -> Self {
        FitOrders {
            n_a,
            n_b,
            n_i: Some(n_i),
        }
    }

    /// Number of estimated complex parameters.
    pub fn param_count(&self) -> usize {
        self.n_a + self.n_b + 1 + self.n_i.map_or(0, |n| n + 1)
    }
}

/// Solver diagnostics attached to each local fit.
#[derive(Clone, Copy, Debug, Default)]
pub struct FitDiagnostics {
    /// Numerical rank used by the truncated-SVD solve.
    pub rank: usize,
    /// Number of singular values discarded by the truncation threshold.
    pub truncated: usize,
    /// Iterations spent by the iterative refinement (0 for linear fits).
    pub iterations: usize,
    /// Denominator nearly vanished at the evaluation offset.
    pub pole_in_window: bool,
    /// Iterative refinement could not improve on its starting point.
    pub not_improved: bool,
}

/// One local fit: parameters, central estimates and noise variance.
#[derive(Clone, Debug)]
pub struct LocalFit<T: Scalar> {
    pub orders: FitOrders,
    /// Stacked parameters `[a_1..a_na, b_0..b_nb, i_0..i_ni]` (`a_0 = 1`).
    pub theta: DVector<Complex<T>>,
    /// FRF estimate at the evaluation offset.
    pub g_hat: Complex<T>,
    /// Transient estimate at the evaluation offset.
    pub t_hat: Complex<T>,
    /// Noise-variance estimate from unweighted residuals.
    pub sigma2: T,
    /// Value of the method's own criterion at the solution.
    pub criterion: T,
    /// Unweighted squared output error at the solution.
    pub loe: T,
    pub diagnostics: FitDiagnostics,
}

impl<T: Scalar> LocalFit<T> {
    pub fn a_coeffs(&self) -> Vec<Complex<T>> {
        // denominator with the fixed leading one
        let mut a = Vec::with_capacity(self.orders.n_a + 1);
        a.push(Complex::new(T::one(), T::zero()));
        for j in 0..self.orders.n_a {
            a.push(self.theta[j]);
        }
        a
    }

    pub fn b_coeffs(&self) -> Vec<Complex<T>> {
        let start = self.orders.n_a;
        (0..=self.orders.n_b).map(|i| self.theta[start + i]).collect()
    }

    pub fn i_coeffs(&self) -> Vec<Complex<T>> {
        match self.orders.n_i {
            None => Vec::new(),
            Some(n_i) => {
                let start = self.orders.n_a + self.orders.n_b + 1;
                (0..=n_i).map(|i| self.theta[start + i]).collect()
            }
        }
    }
}

/// Horner evaluation of a polynomial with complex coefficients at real `x`.
pub(crate) fn eval_poly<T: Scalar>(coeffs: &[Complex<T>], x: T) -> Complex<T> {
    let mut acc = Complex::new(T::zero(), T::zero());
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

/// Truncated-SVD least squares: discard singular values below
/// `eps * max(rows, cols) * s_max`.
pub(crate) fn tsvd_solve<T: Scalar>(
    a: &DMatrix<Complex<T>>,
    rhs: &DVector<Complex<T>>,
) -> Result<(DVector<Complex<T>>, usize, usize)> {
    let (rows, cols) = a.shape();
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| {
        FrfError::Factorization("svd did not produce singular vectors".into())
    })?;
    let v_t = svd.v_t.as_ref().ok_or_else(|| {
        FrfError::Factorization("svd did not produce singular vectors".into())
    })?;
    let s_max = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |m, v| m.max(v));
    let threshold = T::default_epsilon() * cvt::<T>(rows.max(cols) as f64) * s_max;
    let mut x = DVector::zeros(cols);
    let mut rank = 0usize;
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        if s > threshold {
            rank += 1;
            let coeff = u.column(i).dotc(rhs) / Complex::new(s, T::zero());
            x += v_t.row(i).adjoint() * coeff;
        }
    }
    Ok((x, rank, svd.singular_values.len() - rank))
}

fn check_overdetermined<T: Scalar>(window: &LocalWindow<T>, orders: &FitOrders) -> Result<()> {
    let n_k = orders.param_count();
    if window.len() <= n_k {
        return Err(FrfError::OrderTooLarge(format!(
            "window of {} bins cannot fit {} parameters",
            window.len(),
            n_k
        )));
    }
    Ok(())
}

/// Local polynomial fit of orders `(n_b, n_i)` on the output-error
/// criterion; `sigma2` uses the degrees-of-freedom divisor `2l+1 - n_k`.
pub fn lpm_fit<T: Scalar>(
    window: &LocalWindow<T>,
    n_b: usize,
    n_i: usize,
    alpha: Option<T>,
) -> Result<LocalFit<T>> {
    let orders = FitOrders::polynomial(n_b, n_i);
    check_overdetermined(window, &orders)?;
    let rs = regressors(window, n_b, n_i, alpha)?;
    let (theta, rank, truncated) = tsvd_solve(&rs.psi, &window.output)?;

    let resid = &window.output - &rs.psi * &theta;
    let loe = resid.iter().map(|c| c.norm_sqr()).sum::<T>();
    let dof = window.len() - orders.param_count();
    let sigma2 = loe / cvt(dof as f64);

    let x_e = rs.x[window.eval_index()];
    let b: Vec<Complex<T>> = (0..=n_b).map(|i| theta[i]).collect();
    let i_poly: Vec<Complex<T>> = (0..=n_i).map(|i| theta[n_b + 1 + i]).collect();
    Ok(LocalFit {
        orders,
        g_hat: eval_poly(&b, x_e),
        t_hat: eval_poly(&i_poly, x_e),
        theta,
        sigma2,
        criterion: loe,
        loe,
        diagnostics: FitDiagnostics {
            rank,
            truncated,
            ..Default::default()
        },
    })
}

/// Build the Levy-weighted linear system for a rational fit: with `a_0 = 1`,
/// `A Y = B U + I + e` becomes `Y = -sum_j a_j x^j Y + B U + I + e`.
fn rational_design<T: Scalar>(
    window: &LocalWindow<T>,
    orders: &FitOrders,
    alpha: Option<T>,
) -> Result<DMatrix<Complex<T>>> {
    let m = window.len();
    let x = scaled_offsets(window, alpha);
    let mut design = DMatrix::zeros(m, orders.param_count());
    // denominator columns -x^j Y
    for r in 0..m {
        let mut p = x[r];
        for j in 0..orders.n_a {
            design[(r, j)] = -window.output[r] * p;
            p *= x[r];
        }
    }
    // numerator and transient columns share the Vandermonde products
    let phi_b = vandermonde(&x, orders.n_b);
    for r in 0..m {
        for c in 0..=orders.n_b {
            design[(r, orders.n_a + c)] = window.input[r] * phi_b[(r, c)];
        }
    }
    if let Some(n_i) = orders.n_i {
        let phi_i = vandermonde(&x, n_i);
        let base = orders.n_a + orders.n_b + 1;
        for r in 0..m {
            for c in 0..=n_i {
                design[(r, base + c)] = Complex::new(phi_i[(r, c)], T::zero());
            }
        }
    }
    Ok(design)
}

/// Threshold under which the denominator counts as vanished at the
/// evaluation offset.
fn pole_threshold<T: Scalar>(a: &[Complex<T>], x_e: T) -> T {
    let mut scale = T::one();
    let mut p = T::one();
    for c in a {
        scale += c.norm_sqr().sqrt() * p.abs();
        p *= x_e;
    }
    cvt::<T>(1e-10) * scale
}

/// Assemble a rational `LocalFit` from a parameter vector.
fn rational_fit_from_theta<T: Scalar>(
    window: &LocalWindow<T>,
    orders: FitOrders,
    theta: DVector<Complex<T>>,
    alpha: Option<T>,
    criterion: T,
    diagnostics: FitDiagnostics,
) -> LocalFit<T> {
    let x = scaled_offsets(window, alpha);
    let mut fit = LocalFit {
        orders,
        theta,
        g_hat: Complex::new(T::zero(), T::zero()),
        t_hat: Complex::new(T::zero(), T::zero()),
        sigma2: T::zero(),
        criterion,
        loe: T::zero(),
        diagnostics,
    };
    let a = fit.a_coeffs();
    let b = fit.b_coeffs();
    let i_poly = fit.i_coeffs();

    let mut loe = T::zero();
    for r in 0..window.len() {
        let a_r = eval_poly(&a, x[r]);
        let num = eval_poly(&b, x[r]) * window.input[r]
            + if i_poly.is_empty() {
                Complex::new(T::zero(), T::zero())
            } else {
                eval_poly(&i_poly, x[r])
            };
        let y_hat = num / a_r;
        loe += (window.output[r] - y_hat).norm_sqr();
    }
    let dof = window.len() - orders.param_count();
    fit.loe = loe;
    fit.sigma2 = loe / cvt(dof as f64);

    let x_e = x[window.eval_index()];
    let a_e = eval_poly(&a, x_e);
    if a_e.norm_sqr().sqrt() < pole_threshold(&a[1..], x_e) {
        fit.diagnostics.pole_in_window = true;
    }
    fit.g_hat = eval_poly(&b, x_e) / a_e;
    fit.t_hat = if i_poly.is_empty() {
        Complex::new(T::zero(), T::zero())
    } else {
        eval_poly(&i_poly, x_e) / a_e
    };
    fit
}

/// Local rational fit on the Levy-weighted criterion, which is linear least
/// squares after multiplying through by the denominator. The noise variance
/// still comes from the unweighted output residuals.
pub fn lrm_fit<T: Scalar>(
    window: &LocalWindow<T>,
    orders: FitOrders,
    alpha: Option<T>,
) -> Result<LocalFit<T>> {
    check_overdetermined(window, &orders)?;
    let design = rational_design(window, &orders, alpha)?;
    let (theta, rank, truncated) = tsvd_solve(&design, &window.output)?;
    let levy = (&window.output - &design * &theta)
        .iter()
        .map(|c| c.norm_sqr())
        .sum::<T>();
    Ok(rational_fit_from_theta(
        window,
        orders,
        theta,
        alpha,
        levy,
        FitDiagnostics {
            rank,
            truncated,
            ..Default::default()
        },
    ))
}

/// Options for the iterative refinement.
#[derive(Clone, Copy, Debug)]
pub struct IlrmOptions<T: Scalar> {
    pub max_iter: usize,
    /// Gradient infinity-norm tolerance.
    pub tol: T,
}

impl<T: Scalar> Default for IlrmOptions<T> {
    fn default() -> Self {
        IlrmOptions {
            max_iter: 200,
            tol: cvt(1e-10),
        }
    }
}

struct RationalModel<'a, T: Scalar> {
    window: &'a LocalWindow<T>,
    orders: FitOrders,
    x: Vec<T>,
}

impl<T: Scalar> RationalModel<'_, T> {
    fn unpack(&self, p: &DVector<T>) -> DVector<Complex<T>> {
        DVector::from_fn(self.orders.param_count(), |i, _| {
            Complex::new(p[2 * i], p[2 * i + 1])
        })
    }

    fn pack(&self, theta: &DVector<Complex<T>>) -> DVector<T> {
        let n = self.orders.param_count();
        let mut p = DVector::zeros(2 * n);
        for i in 0..n {
            p[2 * i] = theta[i].re;
            p[2 * i + 1] = theta[i].im;
        }
        p
    }

    /// Output-error residuals stacked `[Re e; Im e]`; `None` on a non-finite
    /// model response (pole hit).
    fn residuals(&self, p: &DVector<T>) -> Option<DVector<T>> {
        let theta = self.unpack(p);
        let m = self.window.len();
        let fit = LocalFit {
            orders: self.orders,
            theta,
            g_hat: Complex::new(T::zero(), T::zero()),
            t_hat: Complex::new(T::zero(), T::zero()),
            sigma2: T::zero(),
            criterion: T::zero(),
            loe: T::zero(),
            diagnostics: FitDiagnostics::default(),
        };
        let a = fit.a_coeffs();
        let b = fit.b_coeffs();
        let i_poly = fit.i_coeffs();
        let mut out = DVector::zeros(2 * m);
        for r in 0..m {
            let a_r = eval_poly(&a, self.x[r]);
            let num = eval_poly(&b, self.x[r]) * self.window.input[r]
                + if i_poly.is_empty() {
                    Complex::new(T::zero(), T::zero())
                } else {
                    eval_poly(&i_poly, self.x[r])
                };
            let e = self.window.output[r] - num / a_r;
            if !e.re.is_finite() || !e.im.is_finite() {
                return None;
            }
            out[r] = e.re;
            out[m + r] = e.im;
        }
        Some(out)
    }

    /// Analytic Jacobian of the stacked residuals.
    fn jacobian(&self, p: &DVector<T>) -> Option<DMatrix<T>> {
        let theta = self.unpack(p);
        let m = self.window.len();
        let n = self.orders.param_count();
        let fit = LocalFit {
            orders: self.orders,
            theta,
            g_hat: Complex::new(T::zero(), T::zero()),
            t_hat: Complex::new(T::zero(), T::zero()),
            sigma2: T::zero(),
            criterion: T::zero(),
            loe: T::zero(),
            diagnostics: FitDiagnostics::default(),
        };
        let a = fit.a_coeffs();
        let b = fit.b_coeffs();
        let i_poly = fit.i_coeffs();
        let mut jac = DMatrix::zeros(2 * m, 2 * n);
        for r in 0..m {
            let x_r = self.x[r];
            let a_r = eval_poly(&a, x_r);
            let num = eval_poly(&b, x_r) * self.window.input[r]
                + if i_poly.is_empty() {
                    Complex::new(T::zero(), T::zero())
                } else {
                    eval_poly(&i_poly, x_r)
                };
            let y_hat = num / a_r;
            if !y_hat.re.is_finite() || !y_hat.im.is_finite() {
                return None;
            }
            let mut col = 0usize;
            let mut x_pow = x_r;
            // d yhat / d a_j = -x^j yhat / A
            for _ in 0..self.orders.n_a {
                let d = -y_hat * x_pow / a_r;
                jac[(r, 2 * col)] = -d.re;
                jac[(m + r, 2 * col)] = -d.im;
                jac[(r, 2 * col + 1)] = d.im;
                jac[(m + r, 2 * col + 1)] = -d.re;
                col += 1;
                x_pow *= x_r;
            }
            // d yhat / d b_n = x^n U / A
            let mut x_pow = T::one();
            for _ in 0..=self.orders.n_b {
                let d = self.window.input[r] * x_pow / a_r;
                jac[(r, 2 * col)] = -d.re;
                jac[(m + r, 2 * col)] = -d.im;
                jac[(r, 2 * col + 1)] = d.im;
                jac[(m + r, 2 * col + 1)] = -d.re;
                col += 1;
                x_pow *= x_r;
            }
            // d yhat / d i_n = x^n / A
            if let Some(n_i) = self.orders.n_i {
                let mut x_pow = T::one();
                for _ in 0..=n_i {
                    let d = Complex::new(x_pow, T::zero()) / a_r;
                    jac[(r, 2 * col)] = -d.re;
                    jac[(m + r, 2 * col)] = -d.im;
                    jac[(r, 2 * col + 1)] = d.im;
                    jac[(m + r, 2 * col + 1)] = -d.re;
                    col += 1;
                    x_pow *= x_r;
                }
            }
        }
        Some(jac)
    }
}

/// Iterative local rational fit: Levenberg-Marquardt on the output-error
/// criterion, initialized at `start`. The result never has a larger
/// output error than the start; if damping exceeds its cap without any
/// accepted step the start is returned with `not_improved` set.
pub fn ilrm_fit<T: Scalar>(
    window: &LocalWindow<T>,
    start: &LocalFit<T>,
    alpha: Option<T>,
    opts: IlrmOptions<T>,
) -> Result<LocalFit<T>> {
    check_overdetermined(window, &start.orders)?;
    if start.theta.len() != start.orders.param_count() {
        return Err(FrfError::invalid("start fit is inconsistent"));
    }
    let model = RationalModel {
        window,
        orders: start.orders,
        x: scaled_offsets(window, alpha),
    };
    let p0 = model.pack(&start.theta);
    let r0 = model
        .residuals(&p0)
        .ok_or_else(|| FrfError::invalid("start point has non-finite residuals"))?;
    let mut best_p = p0.clone();
    let mut best_cost = r0.norm_squared();
    let mut p = p0;
    let mut cost = best_cost;
    let mut damping = cvt::<T>(1e-3);
    let damping_cap = cvt::<T>(1e12);
    let mut iterations = 0usize;
    let mut improved = false;

    for _ in 0..opts.max_iter {
        iterations += 1;
        let Some(resid) = model.residuals(&p) else {
            break;
        };
        let Some(jac) = model.jacobian(&p) else {
            break;
        };
        let grad = jac.transpose() * &resid;
        if grad.amax() < opts.tol {
            break;
        }
        let jtj = jac.transpose() * &jac;
        let mut accepted = false;
        while damping <= damping_cap {
            let mut lhs = jtj.clone();
            for i in 0..lhs.nrows() {
                lhs[(i, i)] += damping;
            }
            let step = match lhs.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    damping *= cvt(10.0);
                    continue;
                }
            };
            let cand = &p + &step;
            let cand_cost = model.residuals(&cand).map(|r| r.norm_squared());
            match cand_cost {
                Some(c) if c.is_finite() && c < cost => {
                    p = cand;
                    cost = c;
                    damping = (damping / cvt(10.0)).max(cvt(1e-14));
                    accepted = true;
                    improved = true;
                    if c < best_cost {
                        best_cost = c;
                        best_p.copy_from(&p);
                    }
                    break;
                }
                _ => {
                    damping *= cvt(10.0);
                }
            }
        }
        if !accepted {
            break;
        }
    }

    let theta = model.unpack(&best_p);
    let mut fit = rational_fit_from_theta(
        window,
        start.orders,
        theta,
        alpha,
        best_cost,
        FitDiagnostics {
            iterations,
            not_improved: !improved,
            ..Default::default()
        },
    );
    // the criterion of the iterative method is the output error itself
    fit.criterion = fit.loe;
    Ok(fit)
}

/// Order-selection criterion: LPM uses equal `(n_b, n_i)`, LRM equal
/// `(n_a, n_b, n_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MdlMethod {
    Lpm,
    Lrm,
}

/// Selection result with the per-order criterion values.
#[derive(Clone, Debug)]
pub struct MdlSelection<T: Scalar> {
    pub order: usize,
    pub criteria: Vec<(usize, T)>,
}

/// Default order grid for MDL selection.
pub const MDL_DEFAULT_GRID: [usize; 5] = [0, 1, 2, 3, 4];

/// Modified MDL order selection over an equal-order grid: minimizes
/// `sigma2 * exp(log(4l+2) * n_k / (2l+1 - n_k - 2))`, ties toward the
/// smaller order. Grid entries violating the dof precondition are skipped.
pub fn mdl_select<T: Scalar>(
    window: &LocalWindow<T>,
    grid: &[usize],
    method: MdlMethod,
    alpha: Option<T>,
) -> Result<MdlSelection<T>> {
    if grid.is_empty() {
        return Err(FrfError::invalid("order grid is empty"));
    }
    let m = window.len();
    let mut criteria = Vec::new();
    let mut best: Option<(usize, T)> = None;
    let mut sorted: Vec<usize> = grid.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &n in &sorted {
        let n_k = match method {
            MdlMethod::Lpm => 2 * n + 2,
            MdlMethod::Lrm => 3 * n + 2,
        };
        if m <= n_k + 2 {
            continue;
        }
        let sigma2 = match method {
            MdlMethod::Lpm => lpm_fit(window, n, n, alpha)?.sigma2,
            MdlMethod::Lrm => lrm_fit(window, FitOrders::rational(n, n, n), alpha)?.sigma2,
        };
        let penalty = (cvt::<T>((4 * window.half_width + 2) as f64).ln()
            * cvt::<T>(n_k as f64)
            / cvt::<T>((m - n_k - 2) as f64))
        .exp();
        let value = sigma2 * penalty;
        criteria.push((n, value));
        if best.map_or(true, |(_, v)| value < v) {
            best = Some((n, value));
        }
    }
    match best {
        Some((order, _)) => Ok(MdlSelection { order, criteria }),
        None => Err(FrfError::invalid(
            "no grid order satisfies the dof precondition",
        )),
    }
}
