//! Complex-Gaussian linear algebra.
//!
//! A zero-mean complex Gaussian vector is described either by the augmented
//! pair `(Gamma, C)` — covariance and relation matrix — or by the real
//! composite covariance of `[Re z; Im z]`. The two are related by the
//! sandwich `M = J K J^H` with `J = [I jI; I -jI]`, so `K = J^H M J / 4`.
//!
//! All solvers here work in real composite coordinates: the factorizations
//! are real symmetric positive definite and the conjugate pairing of the
//! augmented solution holds exactly by construction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{FrfError, Result};
use crate::scalar::{cvt, Scalar};

/// Augmented description `(Gamma, C)` of a complex Gaussian vector.
///
/// `Gamma` is Hermitian PSD, `C` symmetric; the composite matrix
/// `M = [[Gamma, C], [conj(C), conj(Gamma)]]` must be Hermitian PSD.
#[derive(Clone, Debug)]
pub struct AugmentedKernel<T: Scalar> {
    pub gamma: DMatrix<Complex<T>>,
    pub relation: DMatrix<Complex<T>>,
}

impl<T: Scalar> AugmentedKernel<T> {
    pub fn new(gamma: DMatrix<Complex<T>>, relation: DMatrix<Complex<T>>) -> Result<Self> {
        if !gamma.is_square() || gamma.shape() != relation.shape() {
            return Err(FrfError::invalid(
                "kernel blocks must be square and share a dimension",
            ));
        }
        Ok(AugmentedKernel { gamma, relation })
    }

    /// Zero prior of dimension `n`.
    pub fn zero(n: usize) -> Self {
        AugmentedKernel {
            gamma: DMatrix::zeros(n, n),
            relation: DMatrix::zeros(n, n),
        }
    }

    /// Circular prior `Gamma = gamma I`, `C = 0`.
    pub fn circular(n: usize, gamma: T) -> Self {
        AugmentedKernel {
            gamma: DMatrix::from_diagonal_element(n, n, Complex::new(gamma, T::zero())),
            relation: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    /// Assemble the full `2n x 2n` composite matrix `M`.
    pub fn composite(&self) -> DMatrix<Complex<T>> {
        let n = self.dim();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for r in 0..n {
            for s in 0..n {
                m[(r, s)] = self.gamma[(r, s)];
                m[(r, n + s)] = self.relation[(r, s)];
                m[(n + r, s)] = self.relation[(r, s)].conj();
                m[(n + r, n + s)] = self.gamma[(r, s)].conj();
            }
        }
        m
    }

    /// Entrywise sum of two kernels (additive composites).
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(FrfError::invalid("kernel dimension mismatch"));
        }
        Ok(AugmentedKernel {
            gamma: &self.gamma + &other.gamma,
            relation: &self.relation + &other.relation,
        })
    }

    /// Scale both blocks by a nonnegative factor.
    pub fn scale(&self, factor: T) -> Self {
        let f = Complex::new(factor, T::zero());
        AugmentedKernel {
            gamma: self.gamma.map(|v| v * f),
            relation: self.relation.map(|v| v * f),
        }
    }

    /// Smallest and largest eigenvalue of the composite matrix.
    pub fn eigen_range(&self) -> (T, T) {
        let k = decompose(self).matrix;
        let eig = nalgebra::SymmetricEigen::new(k).eigenvalues;
        let mut lo = T::max_value().unwrap();
        let mut hi = -lo;
        for &v in eig.iter() {
            // eig(M) = 2 eig(K); the factor cancels in ratios but keep it exact
            let v = v * cvt::<T>(2.0);
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    /// PSD check: `min eig >= -tol * max eig` on the composite matrix.
    pub fn is_psd(&self, tol: T) -> bool {
        let (lo, hi) = self.eigen_range();
        lo >= -tol * hi.max(T::default_epsilon())
    }
}

/// Real composite covariance of `[Re z; Im z]`, a `2n x 2n` symmetric PSD
/// matrix stored whole.
#[derive(Clone, Debug)]
pub struct RealCompositeKernel<T: Scalar> {
    pub matrix: DMatrix<T>,
}

impl<T: Scalar> RealCompositeKernel<T> {
    pub fn new(matrix: DMatrix<T>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() % 2 != 0 {
            return Err(FrfError::invalid(
                "real composite kernel must be square with even dimension",
            ));
        }
        Ok(RealCompositeKernel { matrix })
    }

    pub fn from_blocks(
        k_rr: DMatrix<T>,
        k_ri: DMatrix<T>,
        k_ir: DMatrix<T>,
        k_ii: DMatrix<T>,
    ) -> Result<Self> {
        let n = k_rr.nrows();
        if [&k_rr, &k_ri, &k_ir, &k_ii]
            .iter()
            .any(|b| b.shape() != (n, n))
        {
            return Err(FrfError::invalid("block shapes must agree"));
        }
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for r in 0..n {
            for s in 0..n {
                m[(r, s)] = k_rr[(r, s)];
                m[(r, n + s)] = k_ri[(r, s)];
                m[(n + r, s)] = k_ir[(r, s)];
                m[(n + r, n + s)] = k_ii[(r, s)];
            }
        }
        RealCompositeKernel::new(m)
    }

    pub fn half_dim(&self) -> usize {
        self.matrix.nrows() / 2
    }

    fn block(&self, row: usize, col: usize) -> DMatrix<T> {
        let n = self.half_dim();
        self.matrix.view((row * n, col * n), (n, n)).into_owned()
    }

    pub fn k_rr(&self) -> DMatrix<T> {
        self.block(0, 0)
    }
    pub fn k_ri(&self) -> DMatrix<T> {
        self.block(0, 1)
    }
    pub fn k_ir(&self) -> DMatrix<T> {
        self.block(1, 0)
    }
    pub fn k_ii(&self) -> DMatrix<T> {
        self.block(1, 1)
    }
}

/// PSD tolerance used by composition checks.
fn psd_tol<T: Scalar>() -> T {
    cvt(1e-10)
}

/// Map a real composite kernel to the augmented pair via `M = J K J^H`.
///
/// `Gamma = (K_rr + K_ii) + j (K_ir - K_ri)`,
/// `C = (K_rr - K_ii) + j (K_ir + K_ri)`. Rejects asymmetric or indefinite
/// input; `decompose(compose(K)) == K`.
pub fn compose<T: Scalar>(k: &RealCompositeKernel<T>) -> Result<AugmentedKernel<T>> {
    let m = &k.matrix;
    let dim = m.nrows();
    let mut scale = T::default_epsilon();
    for r in 0..dim {
        for s in 0..dim {
            scale = scale.max(m[(r, s)].abs());
        }
    }
    let sym_tol = cvt::<T>(1e-12) * scale;
    for r in 0..dim {
        for s in (r + 1)..dim {
            if (m[(r, s)] - m[(s, r)]).abs() > sym_tol {
                return Err(FrfError::invalid("real composite kernel not symmetric"));
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone()).eigenvalues;
    let max_eig = eig.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let min_eig = eig.iter().copied().fold(T::zero(), |a, b| a.min(b));
    if min_eig < -psd_tol::<T>() * max_eig.max(T::default_epsilon()) {
        return Err(FrfError::invalid(format!(
            "real composite kernel not PSD (min eig {:e})",
            min_eig.to_f64().unwrap_or(f64::NAN)
        )));
    }

    let n = k.half_dim();
    let mut gamma = DMatrix::zeros(n, n);
    let mut relation = DMatrix::zeros(n, n);
    for r in 0..n {
        for s in 0..n {
            let (rr, ri, ir, ii) = (
                m[(r, s)],
                m[(r, n + s)],
                m[(n + r, s)],
                m[(n + r, n + s)],
            );
            gamma[(r, s)] = Complex::new(rr + ii, ir - ri);
            relation[(r, s)] = Complex::new(rr - ii, ir + ri);
        }
    }
    AugmentedKernel::new(gamma, relation)
}

/// Inverse of [`compose`]: `K = J^H M J / 4`.
pub fn decompose<T: Scalar>(m: &AugmentedKernel<T>) -> RealCompositeKernel<T> {
    let n = m.dim();
    let half = cvt::<T>(0.5);
    let mut k = DMatrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for s in 0..n {
            let g = m.gamma[(r, s)];
            let c = m.relation[(r, s)];
            k[(r, s)] = (g.re + c.re) * half;
            k[(n + r, n + s)] = (g.re - c.re) * half;
            k[(n + r, s)] = (g.im + c.im) * half;
            k[(r, n + s)] = (c.im - g.im) * half;
        }
    }
    RealCompositeKernel { matrix: k }
}

// ---------------------------------------------------------------------------
// In-place symmetric positive definite factorization
// ---------------------------------------------------------------------------

/// In-place lower Cholesky (right-looking, column-contiguous); returns
/// `Err` on a nonpositive pivot.
pub(crate) fn chol_in_place<T: Scalar>(a: &mut DMatrix<T>) -> Result<()> {
    let n = a.nrows();
    let s = a.as_mut_slice(); // column-major
    for k in 0..n {
        let d = s[k + k * n];
        if !(d > T::zero()) || !d.is_finite() {
            return Err(FrfError::Factorization(format!(
                "nonpositive pivot at column {k}"
            )));
        }
        let l_kk = d.sqrt();
        s[k + k * n] = l_kk;
        let inv = T::one() / l_kk;
        for i in (k + 1)..n {
            s[i + k * n] *= inv;
        }
        // rank-1 update of the trailing columns
        let (head, tail) = s.split_at_mut((k + 1) * n);
        let col_k = &head[k * n..k * n + n];
        for j in (k + 1)..n {
            let l_jk = col_k[j];
            if l_jk != T::zero() {
                let col_j = &mut tail[(j - k - 1) * n..(j - k) * n];
                for i in j..n {
                    col_j[i] -= col_k[i] * l_jk;
                }
            }
        }
    }
    Ok(())
}

/// Solve `L w = z` in place (lower triangular from [`chol_in_place`]).
pub(crate) fn forward_solve<T: Scalar>(l: &DMatrix<T>, z: &mut DVector<T>) {
    let n = l.nrows();
    let s = l.as_slice();
    let zs = z.as_mut_slice();
    for k in 0..n {
        let col = &s[k * n..(k + 1) * n];
        let v = zs[k] / col[k];
        zs[k] = v;
        for i in (k + 1)..n {
            zs[i] -= col[i] * v;
        }
    }
}

/// Solve `L^T x = w` in place.
pub(crate) fn backward_solve<T: Scalar>(l: &DMatrix<T>, w: &mut DVector<T>) {
    let n = l.nrows();
    let s = l.as_slice();
    let ws = w.as_mut_slice();
    for k in (0..n).rev() {
        let col = &s[k * n..(k + 1) * n];
        let mut v = ws[k];
        for i in (k + 1)..n {
            v -= col[i] * ws[i];
        }
        ws[k] = v / col[k];
    }
}

/// Factor with one jitter retry: on failure add `1e-10 * trace/dim` to the
/// diagonal and try again.
pub(crate) fn chol_with_jitter<T: Scalar>(
    a: &mut DMatrix<T>,
    backup: &mut DMatrix<T>,
) -> Result<()> {
    backup.copy_from(a);
    if chol_in_place(a).is_ok() {
        return Ok(());
    }
    let n = a.nrows();
    let trace = (0..n).map(|i| backup[(i, i)]).sum::<T>();
    let jitter = cvt::<T>(1e-10) * trace / cvt(n as f64);
    a.copy_from(backup);
    for i in 0..n {
        a[(i, i)] += jitter;
    }
    chol_in_place(a)
}

// ---------------------------------------------------------------------------
// Shared engine: real composite covariance assembly and solves
// ---------------------------------------------------------------------------

/// Reusable buffers for the data-space covariance solve; sized for windows
/// of length `m` (real dimension `2m`).
#[derive(Clone, Debug)]
pub(crate) struct GaussScratch<T: Scalar> {
    pub m: usize,
    pub k: DMatrix<T>,
    pub backup: DMatrix<T>,
    pub rhs: DVector<T>,
}

impl<T: Scalar> GaussScratch<T> {
    pub fn new(m: usize) -> Self {
        GaussScratch {
            m,
            k: DMatrix::zeros(2 * m, 2 * m),
            backup: DMatrix::zeros(2 * m, 2 * m),
            rhs: DVector::zeros(2 * m),
        }
    }

    /// Fill the real composite covariance from the augmented blocks of the
    /// data covariance: `A` Hermitian (covariance), `B` symmetric (relation).
    fn fill_from_blocks(&mut self, a: &DMatrix<Complex<T>>, b: &DMatrix<Complex<T>>) {
        let m = self.m;
        let half = cvt::<T>(0.5);
        for r in 0..m {
            for s in 0..m {
                let av = a[(r, s)];
                let bv = b[(r, s)];
                self.k[(r, s)] = (av.re + bv.re) * half;
                self.k[(m + r, m + s)] = (av.re - bv.re) * half;
                self.k[(m + r, s)] = (av.im + bv.im) * half;
                self.k[(r, m + s)] = (bv.im - av.im) * half;
            }
        }
    }

    fn load_rhs(&mut self, y: &DVector<Complex<T>>) {
        for r in 0..self.m {
            self.rhs[r] = y[r].re;
            self.rhs[self.m + r] = y[r].im;
        }
    }

    /// Negative log likelihood of `y` under covariance blocks `(a, b)`:
    /// factors, then returns `0.5 z' K^-1 z + 0.5 log|K| + m log(2 pi)`.
    pub fn nll(
        &mut self,
        a: &DMatrix<Complex<T>>,
        b: &DMatrix<Complex<T>>,
        y: &DVector<Complex<T>>,
    ) -> Result<T> {
        self.fill_from_blocks(a, b);
        self.finish_nll(y)
    }

    /// Factor the already-filled composite covariance and evaluate the NLL.
    pub fn finish_nll(&mut self, y: &DVector<Complex<T>>) -> Result<T> {
        self.load_rhs(y);
        chol_with_jitter(&mut self.k, &mut self.backup)?;
        forward_solve(&self.k, &mut self.rhs);
        let quad = self.rhs.iter().map(|&v| v * v).sum::<T>() * cvt(0.5);
        let logdet = (0..2 * self.m).map(|i| self.k[(i, i)].ln()).sum::<T>();
        let constant = cvt::<T>(self.m as f64) * (T::two_pi()).ln();
        let v = quad + logdet + constant;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(FrfError::Factorization("non-finite likelihood".into()))
        }
    }

    /// Factor `(a, b)` and solve for the composite weights
    /// `w = K^-1 [Re y; Im y]`; the result stays in `self.rhs`.
    pub fn solve_weights(
        &mut self,
        a: &DMatrix<Complex<T>>,
        b: &DMatrix<Complex<T>>,
        y: &DVector<Complex<T>>,
    ) -> Result<()> {
        self.fill_from_blocks(a, b);
        self.load_rhs(y);
        chol_with_jitter(&mut self.k, &mut self.backup)?;
        forward_solve(&self.k, &mut self.rhs);
        backward_solve(&self.k, &mut self.rhs);
        Ok(())
    }

    /// Apply a cross-covariance with augmented blocks `(a_c, b_c)` (rows:
    /// target dimension, cols: `m`) to the solved weights, producing the
    /// complex posterior mean. Conjugate pairing is exact by construction.
    pub fn apply_cross(
        &self,
        a_c: &DMatrix<Complex<T>>,
        b_c: &DMatrix<Complex<T>>,
    ) -> DVector<Complex<T>> {
        let rows = a_c.nrows();
        let m = self.m;
        let half = cvt::<T>(0.5);
        let mut out = DVector::zeros(rows);
        for r in 0..rows {
            let mut re = T::zero();
            let mut im = T::zero();
            for s in 0..m {
                let av = a_c[(r, s)];
                let bv = b_c[(r, s)];
                let w_re = self.rhs[s];
                let w_im = self.rhs[m + s];
                // real composite blocks of [[A,B],[conj B, conj A]]
                re += (av.re + bv.re) * half * w_re + (bv.im - av.im) * half * w_im;
                im += (av.im + bv.im) * half * w_re + (av.re - bv.re) * half * w_im;
            }
            out[r] = Complex::new(re, im);
        }
        out
    }
}

/// Data covariance blocks for the FRF-space model
/// `O = U~ M_G U~^H + M_T + sigma^2 I`.
pub(crate) fn frf_covariance_blocks<T: Scalar>(
    u: &DVector<Complex<T>>,
    m_g: &AugmentedKernel<T>,
    m_t: &AugmentedKernel<T>,
    sigma2: T,
    a: &mut DMatrix<Complex<T>>,
    b: &mut DMatrix<Complex<T>>,
) {
    let m = u.len();
    for r in 0..m {
        for s in 0..m {
            let mut av = u[r] * m_g.gamma[(r, s)] * u[s].conj() + m_t.gamma[(r, s)];
            let bv = u[r] * m_g.relation[(r, s)] * u[s] + m_t.relation[(r, s)];
            if r == s {
                av += Complex::new(sigma2, T::zero());
            }
            a[(r, s)] = av;
            b[(r, s)] = bv;
        }
    }
}

fn check_sigma<T: Scalar>(sigma2: T) -> Result<()> {
    if sigma2 > T::zero() && sigma2.is_finite() {
        Ok(())
    } else {
        Err(FrfError::invalid("sigma2 must be positive and finite"))
    }
}

/// MAP estimate of the local model coefficients under prior `m_theta` and
/// circular noise `sigma2`; the solve runs on the `4l+2`-dimensional real
/// composite system, so the conjugate half of the augmented solution is the
/// exact conjugate of the returned vector.
pub fn map_theta<T: Scalar>(
    psi: &DMatrix<Complex<T>>,
    y: &DVector<Complex<T>>,
    m_theta: &AugmentedKernel<T>,
    sigma2: T,
) -> Result<DVector<Complex<T>>> {
    check_sigma(sigma2)?;
    let (m, n) = psi.shape();
    if m_theta.dim() != n || y.len() != m {
        return Err(FrfError::invalid("map_theta dimension mismatch"));
    }
    // A = Psi Gamma Psi^H + sigma^2 I, B = Psi C Psi^T
    let psi_h = psi.adjoint();
    let psi_t = psi.transpose();
    let mut a = psi * &m_theta.gamma * &psi_h;
    let b = psi * &m_theta.relation * &psi_t;
    for i in 0..m {
        a[(i, i)] += Complex::new(sigma2, T::zero());
    }
    let mut scratch = GaussScratch::new(m);
    scratch.solve_weights(&a, &b, y)?;
    // cross covariance of theta with the data: (Gamma Psi^H, C Psi^T)
    let a_c = &m_theta.gamma * &psi_h;
    let b_c = &m_theta.relation * &psi_t;
    Ok(scratch.apply_cross(&a_c, &b_c))
}

/// Joint MAP estimate of the FRF and transient samples over the window.
#[derive(Clone, Debug)]
pub struct GtEstimate<T: Scalar> {
    /// Posterior mean of the FRF samples.
    pub g: DVector<Complex<T>>,
    /// Posterior mean of the transient samples.
    pub t: DVector<Complex<T>>,
    /// Residual of the exact identity
    /// `U~ M_G U~^H q + M_T q + sigma^2 q = Y~` at `q = O^{-1} Y~`,
    /// relative to `||Y||`; a solver-accuracy diagnostic.
    pub identity_residual: T,
}

/// MAP estimates of `(G_k, T_k)` under FRF-space priors `m_g`, `m_t`.
pub fn map_gt<T: Scalar>(
    u: &DVector<Complex<T>>,
    y: &DVector<Complex<T>>,
    m_g: &AugmentedKernel<T>,
    m_t: &AugmentedKernel<T>,
    sigma2: T,
) -> Result<GtEstimate<T>> {
    check_sigma(sigma2)?;
    let m = u.len();
    if y.len() != m || m_g.dim() != m || m_t.dim() != m {
        return Err(FrfError::invalid("map_gt dimension mismatch"));
    }
    let mut a = DMatrix::zeros(m, m);
    let mut b = DMatrix::zeros(m, m);
    frf_covariance_blocks(u, m_g, m_t, sigma2, &mut a, &mut b);
    let mut scratch = GaussScratch::new(m);
    scratch.solve_weights(&a, &b, y)?;

    // G cross blocks: (Gamma_G diag(conj U), C_G diag(U))
    let mut a_c = DMatrix::zeros(m, m);
    let mut b_c = DMatrix::zeros(m, m);
    for r in 0..m {
        for s in 0..m {
            a_c[(r, s)] = m_g.gamma[(r, s)] * u[s].conj();
            b_c[(r, s)] = m_g.relation[(r, s)] * u[s];
        }
    }
    let g = scratch.apply_cross(&a_c, &b_c);
    let t = scratch.apply_cross(&m_t.gamma, &m_t.relation);

    // identity diagnostic: q = O^{-1} Y~ reconstructed from the weights
    let half = cvt::<T>(0.5);
    let q: DVector<Complex<T>> = DVector::from_fn(m, |r, _| {
        Complex::new(scratch.rhs[r] * half, scratch.rhs[m + r] * half)
    });
    let mut resid_sq = T::zero();
    let mut y_sq = T::zero();
    for r in 0..m {
        let mut acc = Complex::new(T::zero(), T::zero());
        for s in 0..m {
            acc += a[(r, s)] * q[s] + b[(r, s)] * q[s].conj();
        }
        resid_sq += (y[r] - acc).norm_sqr();
        y_sq += y[r].norm_sqr();
    }
    let identity_residual = resid_sq.sqrt() / y_sq.sqrt().max(T::default_epsilon());
    Ok(GtEstimate {
        g,
        t,
        identity_residual,
    })
}

/// Negative log marginal likelihood of the window data under the FRF-space
/// model, computed in real composite coordinates via Cholesky.
pub fn nll<T: Scalar>(
    u: &DVector<Complex<T>>,
    y: &DVector<Complex<T>>,
    m_g: &AugmentedKernel<T>,
    m_t: &AugmentedKernel<T>,
    sigma2: T,
) -> Result<T> {
    check_sigma(sigma2)?;
    let m = u.len();
    if y.len() != m || m_g.dim() != m || m_t.dim() != m {
        return Err(FrfError::invalid("nll dimension mismatch"));
    }
    let mut a = DMatrix::zeros(m, m);
    let mut b = DMatrix::zeros(m, m);
    frf_covariance_blocks(u, m_g, m_t, sigma2, &mut a, &mut b);
    GaussScratch::new(m).nll(&a, &b, y)
}

/// Negative log marginal likelihood of the coefficient-space model
/// `Y = Psi theta + V` with prior `m_theta`.
pub fn nll_theta<T: Scalar>(
    psi: &DMatrix<Complex<T>>,
    y: &DVector<Complex<T>>,
    m_theta: &AugmentedKernel<T>,
    sigma2: T,
) -> Result<T> {
    check_sigma(sigma2)?;
    let (m, n) = psi.shape();
    if m_theta.dim() != n || y.len() != m {
        return Err(FrfError::invalid("nll_theta dimension mismatch"));
    }
    let psi_h = psi.adjoint();
    let psi_t = psi.transpose();
    let mut a = psi * &m_theta.gamma * &psi_h;
    let b = psi * &m_theta.relation * &psi_t;
    for i in 0..m {
        a[(i, i)] += Complex::new(sigma2, T::zero());
    }
    GaussScratch::new(m).nll(&a, &b, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng) -> f64 {
        f64::standard_normal(rng)
    }

    fn random_complex_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<Complex<f64>> {
        DVector::from_fn(n, |_, _| Complex::new(randn(rng), randn(rng)))
    }

    fn random_complex_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<Complex<f64>> {
        DMatrix::from_fn(r, c, |_, _| Complex::new(randn(rng), randn(rng)))
    }

    /// Random valid augmented kernel built from a random real composite
    /// `K = R R^T + ridge I`.
    fn random_kernel(rng: &mut ChaCha8Rng, n: usize, ridge: f64) -> AugmentedKernel<f64> {
        let r = DMatrix::from_fn(2 * n, 2 * n, |_, _| randn(rng));
        let mut k = &r * r.transpose();
        for i in 0..2 * n {
            k[(i, i)] += ridge;
        }
        compose(&RealCompositeKernel::new(k).unwrap()).unwrap()
    }

    #[test]
    fn compose_identity_half() {
        // K = I/2 gives the circular white prior
        let n = 3;
        let k = RealCompositeKernel::new(DMatrix::from_diagonal_element(2 * n, 2 * n, 0.5))
            .unwrap();
        let m = compose(&k).unwrap();
        for r in 0..n {
            for s in 0..n {
                let expect = if r == s { 1.0 } else { 0.0 };
                assert!((m.gamma[(r, s)] - cplx::<f64>(expect, 0.0)).norm() < 1e-15);
                assert!(m.relation[(r, s)].norm() < 1e-15);
            }
        }
    }

    #[test]
    fn equal_blocks_kill_relation() {
        // K_ii = K_rr, K_ri = 0 -> C = 0
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4;
        let r = DMatrix::from_fn(n, n, |_, _| randn(&mut rng));
        let mut block = &r * r.transpose();
        for i in 0..n {
            block[(i, i)] += 0.5;
        }
        let zero = DMatrix::zeros(n, n);
        let k =
            RealCompositeKernel::from_blocks(block.clone(), zero.clone(), zero, block).unwrap();
        let m = compose(&k).unwrap();
        for v in m.relation.iter() {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn compose_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2usize, 5] {
            let r = DMatrix::from_fn(2 * n, 2 * n, |_, _| randn(&mut rng));
            let k = RealCompositeKernel::new(&r * r.transpose()).unwrap();
            let back = decompose(&compose(&k).unwrap());
            let err = (&back.matrix - &k.matrix).norm() / k.matrix.norm();
            assert!(err < 1e-12, "round trip error {err}");
        }
    }

    #[test]
    fn compose_rejects_indefinite() {
        let mut k = DMatrix::from_diagonal_element(4, 4, 1.0);
        k[(0, 0)] = -1.0;
        assert!(compose(&RealCompositeKernel::new(k).unwrap()).is_err());
    }

    #[test]
    fn compose_preserves_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let m = random_kernel(&mut rng, 4, 1e-6);
            assert!(m.is_psd(1e-10));
        }
    }

    #[test]
    fn map_theta_limit_inverts_psi() {
        // huge circular prior, square invertible Psi: MAP -> Psi^{-1} Y
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 4;
        let psi = random_complex_mat(&mut rng, n, n);
        let y = random_complex_vec(&mut rng, n);
        let prior = AugmentedKernel::circular(n, 1e12);
        let theta = map_theta(&psi, &y, &prior, 1.0).unwrap();
        let direct = psi.clone().lu().solve(&y).unwrap();
        let err = (&theta - &direct).norm() / direct.norm();
        assert!(err < 1e-4, "limit error {err}");
    }

    #[test]
    fn map_theta_matches_ridge_oracle() {
        // circular prior with finite gamma reduces to complex ridge
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let (m, n) = (9, 4);
        let gamma = 2.5;
        let sigma2 = 0.7;
        let psi = random_complex_mat(&mut rng, m, n);
        let y = random_complex_vec(&mut rng, m);
        let prior = AugmentedKernel::circular(n, gamma);
        let theta = map_theta(&psi, &y, &prior, sigma2).unwrap();

        let mut normal = psi.adjoint() * &psi;
        for i in 0..n {
            normal[(i, i)] += cplx::<f64>(sigma2 / gamma, 0.0);
        }
        let rhs = psi.adjoint() * &y;
        let oracle = normal.lu().solve(&rhs).unwrap();
        let err = (&theta - &oracle).norm() / oracle.norm();
        assert!(err < 1e-8, "ridge oracle error {err}");
    }

    /// Independent RLS oracle: solve the augmented normal equations
    /// `(Psi~^H Psi~ + sigma^2 M^{-1}) theta~ = Psi~^H Y~` directly.
    fn rls_oracle(
        psi: &DMatrix<Complex<f64>>,
        y: &DVector<Complex<f64>>,
        m_theta: &AugmentedKernel<f64>,
        sigma2: f64,
    ) -> DVector<Complex<f64>> {
        let (m, n) = psi.shape();
        let mut psi_tilde = DMatrix::zeros(2 * m, 2 * n);
        for r in 0..m {
            for c in 0..n {
                psi_tilde[(r, c)] = psi[(r, c)];
                psi_tilde[(m + r, n + c)] = psi[(r, c)].conj();
            }
        }
        let mut y_tilde = DVector::zeros(2 * m);
        for r in 0..m {
            y_tilde[r] = y[r];
            y_tilde[m + r] = y[r].conj();
        }
        let m_inv = m_theta
            .composite()
            .lu()
            .try_inverse()
            .expect("oracle kernel invertible");
        let lhs = psi_tilde.adjoint() * &psi_tilde + m_inv * cplx::<f64>(sigma2, 0.0);
        let rhs = psi_tilde.adjoint() * &y_tilde;
        let sol = lhs.lu().solve(&rhs).unwrap();
        DVector::from_fn(n, |i, _| sol[i])
    }

    #[test]
    fn map_theta_equals_rls_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..25 {
            let n = 3 + (randn(&mut rng).abs() * 3.0) as usize;
            let m = n + 4;
            let psi = random_complex_mat(&mut rng, m, n);
            let y = random_complex_vec(&mut rng, m);
            let m_theta = random_kernel(&mut rng, n, 1e-3);
            let sigma2 = 0.5;
            let theta = map_theta(&psi, &y, &m_theta, sigma2).unwrap();
            let oracle = rls_oracle(&psi, &y, &m_theta, sigma2);
            let err = (&theta - &oracle).norm() / oracle.norm();
            assert!(err < 1e-8, "rls mismatch {err}");
        }
    }

    #[test]
    fn map_theta_rejects_bad_sigma() {
        let psi = DMatrix::from_element(3, 2, cplx::<f64>(1.0, 0.0));
        let y = DVector::from_element(3, cplx::<f64>(1.0, 0.0));
        let prior = AugmentedKernel::circular(2, 1.0);
        assert!(map_theta(&psi, &y, &prior, 0.0).is_err());
        assert!(map_theta(&psi, &y, &prior, -1.0).is_err());
    }

    #[test]
    fn map_gt_prior_dominates() {
        // M_T = 0, unit input, huge G prior: G-hat ~ Y
        let m = 7;
        let u = DVector::from_element(m, cplx::<f64>(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let y = random_complex_vec(&mut rng, m);
        let m_g = AugmentedKernel::circular(m, 1e12);
        let m_t = AugmentedKernel::zero(m);
        let est = map_gt(&u, &y, &m_g, &m_t, 1.0).unwrap();
        let err = (&est.g - &y).norm() / y.norm();
        assert!(err < 1e-4, "prior-dominated error {err}");
        assert!(est.t.norm() < 1e-12);
    }

    #[test]
    fn map_gt_shrinks_with_large_noise() {
        let m = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let u = random_complex_vec(&mut rng, m);
        let y = random_complex_vec(&mut rng, m);
        let m_g = random_kernel(&mut rng, m, 1e-4);
        let m_t = random_kernel(&mut rng, m, 1e-4);
        let small = map_gt(&u, &y, &m_g, &m_t, 1e-2).unwrap();
        let huge = map_gt(&u, &y, &m_g, &m_t, 1e9).unwrap();
        assert!(huge.g.norm() < 1e-6 * small.g.norm().max(1.0));
    }

    #[test]
    fn map_gt_identity_residual_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..20 {
            let m = 6;
            let u = random_complex_vec(&mut rng, m);
            let y = random_complex_vec(&mut rng, m);
            let m_g = random_kernel(&mut rng, m, 1e-3);
            let m_t = random_kernel(&mut rng, m, 1e-3);
            let est = map_gt(&u, &y, &m_g, &m_t, 0.3).unwrap();
            assert!(
                est.identity_residual < 1e-10,
                "identity residual {}",
                est.identity_residual
            );
        }
    }

    /// Augmented-complex NLL oracle:
    /// `0.5 Y~^H O^{-1} Y~ + 0.5 log|O| + m log(pi)`.
    fn nll_augmented_oracle(
        u: &DVector<Complex<f64>>,
        y: &DVector<Complex<f64>>,
        m_g: &AugmentedKernel<f64>,
        m_t: &AugmentedKernel<f64>,
        sigma2: f64,
    ) -> f64 {
        let m = u.len();
        let mut a = DMatrix::zeros(m, m);
        let mut b = DMatrix::zeros(m, m);
        frf_covariance_blocks(u, m_g, m_t, sigma2, &mut a, &mut b);
        let mut o = DMatrix::zeros(2 * m, 2 * m);
        for r in 0..m {
            for s in 0..m {
                o[(r, s)] = a[(r, s)];
                o[(r, m + s)] = b[(r, s)];
                o[(m + r, s)] = b[(r, s)].conj();
                o[(m + r, m + s)] = a[(r, s)].conj();
            }
        }
        let mut y_tilde = DVector::zeros(2 * m);
        for r in 0..m {
            y_tilde[r] = y[r];
            y_tilde[m + r] = y[r].conj();
        }
        let lu = o.clone().lu();
        let solved = lu.solve(&y_tilde).unwrap();
        let quad = 0.5 * y_tilde.dotc(&solved).re;
        let logdet = lu.determinant().norm().ln();
        quad + 0.5 * logdet + m as f64 * std::f64::consts::PI.ln()
    }

    #[test]
    fn nll_two_path_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        for _ in 0..10 {
            let m = 5;
            let u = random_complex_vec(&mut rng, m);
            let y = random_complex_vec(&mut rng, m);
            let m_g = random_kernel(&mut rng, m, 1e-3);
            let m_t = random_kernel(&mut rng, m, 1e-3);
            let sigma2 = 0.8;
            let real_path = nll(&u, &y, &m_g, &m_t, sigma2).unwrap();
            let aug_path = nll_augmented_oracle(&u, &y, &m_g, &m_t, sigma2);
            assert!(
                (real_path - aug_path).abs() < 1e-9 * real_path.abs().max(1.0),
                "paths differ: {real_path} vs {aug_path}"
            );
        }
    }

    #[test]
    fn nll_scalar_window_hand_value() {
        // l = 0, U = 1, Gamma_G = 2 (circular), M_T = 0, sigma2 = 1, Y = 1:
        // K = 1.5 I_2, z = [1, 0];
        // NLL = 0.5/1.5 + 0.5 ln(1.5^2) + ln(2 pi)
        let u = DVector::from_element(1, cplx::<f64>(1.0, 0.0));
        let y = DVector::from_element(1, cplx::<f64>(1.0, 0.0));
        let m_g = AugmentedKernel::circular(1, 2.0);
        let m_t = AugmentedKernel::zero(1);
        let got = nll(&u, &y, &m_g, &m_t, 1.0).unwrap();
        let expect = 0.5 / 1.5 + 1.5_f64.ln() + (2.0 * std::f64::consts::PI).ln();
        assert!((got - expect).abs() < 1e-12, "got {got}, expect {expect}");
    }

    #[test]
    fn nll_scaling_identity() {
        // scaling Y by sqrt(c) and (kernels, sigma2) by c shifts the NLL by
        // (dim/2) log(c) = m log(c)
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let m = 4;
        let u = random_complex_vec(&mut rng, m);
        let y = random_complex_vec(&mut rng, m);
        let m_g = random_kernel(&mut rng, m, 1e-3);
        let m_t = random_kernel(&mut rng, m, 1e-3);
        let sigma2 = 0.6;
        let c: f64 = 3.7;
        let base = nll(&u, &y, &m_g, &m_t, sigma2).unwrap();
        let y_scaled = y.map(|v| v * c.sqrt());
        let scaled = nll(&u, &y_scaled, &m_g.scale(c), &m_t.scale(c), sigma2 * c).unwrap();
        let offset = m as f64 * c.ln();
        assert!(
            (scaled - base - offset).abs() < 1e-9,
            "offset {} vs {}",
            scaled - base,
            offset
        );
    }

    #[test]
    fn nll_sigma_axis_prefers_true_scale() {
        // with data drawn at sigma2 = 1 and fixed kernels, the grid-preferred
        // sigma2 lands near the generating value
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let m = 8;
        let u = DVector::from_element(m, cplx::<f64>(1.0, 0.0));
        let m_g = random_kernel(&mut rng, m, 1e-2);
        let m_t = AugmentedKernel::zero(m);
        // draw Y from the model: Y = U G + noise
        let k_real = decompose(&m_g).matrix;
        let eig = nalgebra::SymmetricEigen::new(k_real);
        let mut g_real = DVector::zeros(2 * m);
        for i in 0..2 * m {
            let lam = eig.eigenvalues[i].max(0.0).sqrt();
            g_real += eig.eigenvectors.column(i) * (lam * randn(&mut rng));
        }
        let y = DVector::from_fn(m, |r, _| {
            Complex::new(g_real[r], g_real[m + r])
                + Complex::new(randn(&mut rng), randn(&mut rng)) * 0.5_f64.sqrt()
        });
        // E|noise|^2 = 1 per bin
        let grid: Vec<f64> = (-8..=8).map(|e| 10f64.powf(e as f64 / 4.0)).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|&s2| nll(&u, &y, &m_g, &m_t, s2).unwrap())
            .collect();
        let best = grid[vals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0];
        assert!(
            (0.05..20.0).contains(&best),
            "grid-preferred sigma2 {best} implausible"
        );
    }
}
