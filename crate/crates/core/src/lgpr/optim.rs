//! Bound-constrained quasi-Newton minimizer with numerical gradients, plus
//! the low-discrepancy start-point generator for the multistart search.

use nalgebra::{DMatrix, DVector};

use crate::scalar::{cvt, Scalar};

#[derive(Clone, Copy, Debug)]
pub(crate) struct BfgsOptions<T: Scalar> {
    pub max_iter: usize,
    /// Infinity-norm tolerance on the projected gradient.
    pub grad_tol: T,
    /// Central-difference step (coordinates are log-scaled, so this is
    /// scale-free).
    pub fd_step: T,
    /// Abort a run that is still above `threshold` after `iters` iterations;
    /// used by the multistart loop to stop hopeless starts early.
    pub cutoff: Option<(usize, T)>,
}

impl<T: Scalar> Default for BfgsOptions<T> {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 120,
            grad_tol: cvt(1e-5),
            fd_step: cvt(1e-4),
            cutoff: None,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BfgsOutcome<T: Scalar> {
    pub x: Vec<T>,
    pub value: T,
    pub converged: bool,
}

fn clip<T: Scalar>(x: &mut [T], lo: &[T], hi: &[T]) {
    for i in 0..x.len() {
        x[i] = x[i].max(lo[i]).min(hi[i]);
    }
}

/// Central-difference gradient with one-sided fallback at the box edge.
fn gradient<T: Scalar, F: FnMut(&[T]) -> T>(
    f: &mut F,
    x: &[T],
    lo: &[T],
    hi: &[T],
    h: T,
    evals: &mut usize,
    buf: &mut Vec<T>,
) -> DVector<T> {
    let n = x.len();
    let mut g = DVector::zeros(n);
    buf.clear();
    buf.extend_from_slice(x);
    for i in 0..n {
        let hp = h.min(hi[i] - x[i]).max(T::zero());
        let hm = h.min(x[i] - lo[i]).max(T::zero());
        if hp + hm <= T::zero() {
            continue;
        }
        buf[i] = x[i] + hp;
        let fp = f(buf);
        buf[i] = x[i] - hm;
        let fm = f(buf);
        buf[i] = x[i];
        *evals += 2;
        if fp.is_finite() && fm.is_finite() {
            g[i] = (fp - fm) / (hp + hm);
        }
    }
    g
}

/// Projected BFGS on a box: gradient components pushing outward at an
/// active bound are masked, the line search clips iterates to the box.
pub(crate) fn minimize_box<T: Scalar, F: FnMut(&[T]) -> T>(
    f: &mut F,
    x0: &[T],
    lo: &[T],
    hi: &[T],
    opts: &BfgsOptions<T>,
) -> BfgsOutcome<T> {
    let n = x0.len();
    let mut x = x0.to_vec();
    clip(&mut x, lo, hi);
    let mut evals = 1usize;
    let mut fx = f(&x);
    if !fx.is_finite() {
        return BfgsOutcome {
            x,
            value: T::infinity(),
            converged: false,
        };
    }
    let mut h_inv = DMatrix::identity(n, n);
    let mut buf = Vec::with_capacity(n);
    let mut g = gradient(f, &x, lo, hi, opts.fd_step, &mut evals, &mut buf);
    let edge = cvt::<T>(1e-12);
    // longest step tried first, in log-space units
    let step_cap = cvt::<T>(3.0);
    let mut converged = false;
    let mut stall_count = 0usize;

    for iter in 0..opts.max_iter {
        if let Some((probe_iter, threshold)) = opts.cutoff {
            if iter == probe_iter && fx > threshold {
                break;
            }
        }
        // mask active bounds
        let mut g_masked = g.clone();
        for i in 0..n {
            let at_lo = x[i] - lo[i] <= edge * (T::one() + lo[i].abs());
            let at_hi = hi[i] - x[i] <= edge * (T::one() + hi[i].abs());
            if (at_lo && g[i] > T::zero()) || (at_hi && g[i] < T::zero()) || lo[i] == hi[i] {
                g_masked[i] = T::zero();
            }
        }
        if g_masked.amax() < opts.grad_tol {
            converged = true;
            break;
        }

        let projected_capped = |mut d: DVector<T>| -> DVector<T> {
            for i in 0..n {
                if g_masked[i] == T::zero() && (x[i] - lo[i] <= edge || hi[i] - x[i] <= edge) {
                    d[i] = T::zero();
                }
            }
            let norm = d.norm();
            if norm > step_cap {
                d *= step_cap / norm;
            }
            d
        };

        // Armijo backtracking along the clipped path
        let c1 = cvt::<T>(1e-4);
        let mut line_search = |d: &DVector<T>,
                               evals: &mut usize|
         -> Option<(Vec<T>, T)> {
            let mut t = T::one();
            let mut x_new = x.clone();
            for _ in 0..40 {
                for i in 0..n {
                    x_new[i] = x[i] + t * d[i];
                }
                clip(&mut x_new, lo, hi);
                let step_sq = (0..n)
                    .map(|i| (x_new[i] - x[i]) * (x_new[i] - x[i]))
                    .sum::<T>();
                if step_sq == T::zero() {
                    return None;
                }
                *evals += 1;
                let cand = f(&x_new);
                if cand.is_finite() {
                    let pred = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum::<T>();
                    if cand <= fx + c1 * pred || (pred >= T::zero() && cand < fx) {
                        return Some((x_new, cand));
                    }
                }
                t *= cvt(0.5);
            }
            None
        };

        let mut d = projected_capped(-(&h_inv * &g_masked));
        if !(d.dot(&g_masked) < T::zero()) {
            h_inv = DMatrix::identity(n, n);
            d = projected_capped(-g_masked.clone());
        }
        let mut step = line_search(&d, &mut evals);
        if step.is_none() {
            // quasi-Newton direction failed: fall back to steepest descent
            h_inv = DMatrix::identity(n, n);
            let d_sd = projected_capped(-g_masked.clone());
            step = line_search(&d_sd, &mut evals);
        }
        let Some((x_new, f_new)) = step else {
            converged = true; // no further progress available
            break;
        };
        let stalled = fx - f_new <= cvt::<T>(1e-10) * (T::one() + fx.abs());

        let g_new = gradient(f, &x_new, lo, hi, opts.fd_step, &mut evals, &mut buf);
        let s = DVector::from_fn(n, |i, _| x_new[i] - x[i]);
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > cvt::<T>(1e-12) * s.norm() * yv.norm() {
            // BFGS inverse update
            let rho = T::one() / sy;
            let hy = &h_inv * &yv;
            let yhy = yv.dot(&hy);
            let ss = &s * s.transpose();
            let hy_s = &hy * s.transpose();
            h_inv = &h_inv + &ss * (rho * rho * yhy + rho)
                - (&hy_s + hy_s.transpose()) * rho;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        if stalled {
            stall_count += 1;
            // one stall with a small gradient, or two in a row, ends the run
            if stall_count >= 2 || g.amax() < cvt(1e-2) {
                converged = true;
                break;
            }
        } else {
            stall_count = 0;
        }
    }

    let _ = evals;
    BfgsOutcome {
        x,
        value: fx,
        converged,
    }
}

const HALTON_PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical-inverse Halton point in `[0,1)^dim` with a per-dimension rotation
/// (deterministic scrambling derived from the seed).
pub(crate) fn halton_point<T: Scalar>(dim: usize, index: usize, shift: &[T]) -> Vec<T> {
    assert!(dim <= HALTON_PRIMES.len(), "halton dimension too large");
    (0..dim)
        .map(|d| {
            let base = HALTON_PRIMES[d] as u64;
            let mut i = index as u64 + 1;
            let mut f = T::one();
            let mut v = T::zero();
            let base_t = cvt::<T>(base as f64);
            while i > 0 {
                f /= base_t;
                v += f * cvt((i % base) as f64);
                i /= base;
            }
            let shifted = v + shift[d];
            shifted - shifted.floor()
        })
        .collect()
}
