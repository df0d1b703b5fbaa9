//! Synthetic frequency-domain experiments.
//!
//! Generates periodic multisine excitations, simulates a discretized lightly
//! damped test system with calibrated output noise, and transforms the
//! retained samples into per-bin input/output spectra with exact ground
//! truth. Records serialize to CSV and JSON; readers accept files without
//! ground-truth columns (measured data).

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

use crate::error::{FrfError, Result};
use crate::scalar::{cvt, Scalar};
use crate::seeds::derive_seed;

/// Configuration of one synthetic experiment.
#[derive(Clone, Debug)]
pub struct ExperimentConfig<T: Scalar> {
    /// Number of retained samples `N`.
    pub sample_count: usize,
    /// Sampling interval `T_s` in seconds.
    pub sampling_interval: T,
    /// Multisine period `P` in samples; must satisfy `P >= N`.
    pub period: usize,
    /// Excited band as a fraction of Nyquist, in `(0, 1]`.
    pub excited_fraction: T,
    /// Output signal-to-noise ratio in dB; `+inf` disables noise.
    pub snr_db: T,
    /// Number of full periods run before the retained window.
    pub warmup_periods: usize,
    /// Base seed; identical seeds give bit-identical records.
    pub rng_seed: u64,
}

impl<T: Scalar> ExperimentConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(FrfError::invalid("sample_count must be positive"));
        }
        if self.sampling_interval <= T::zero() {
            return Err(FrfError::invalid("sampling_interval must be > 0"));
        }
        if self.period < self.sample_count {
            return Err(FrfError::invalid("period must be >= sample_count"));
        }
        if self.excited_fraction <= T::zero() || self.excited_fraction > T::one() {
            return Err(FrfError::invalid("excited_fraction must be in (0, 1]"));
        }
        if self.warmup_periods == 0 {
            return Err(FrfError::invalid("warmup_periods must be positive"));
        }
        Ok(())
    }

    /// Highest excited bin of the one-period input DFT.
    fn excited_bin_max(&self, len: usize) -> usize {
        let half = cvt::<T>(len as f64 / 2.0);
        let k = (self.excited_fraction * half * cvt(1.0 + 1e-12))
            .floor()
            .to_usize()
            .unwrap_or(0);
        // keep strictly below Nyquist so phases stay free
        k.min(len.saturating_sub(1) / 2)
    }
}

/// One resonant mode of the continuous-time test system.
#[derive(Clone, Copy, Debug)]
pub struct Mode<T: Scalar> {
    /// Natural frequency in rad/s.
    pub natural_frequency: T,
    /// Damping ratio.
    pub damping_ratio: T,
    /// DC gain of the mode.
    pub gain: T,
}

/// Second-order digital section, denominator normalized to `a0 = 1`.
#[derive(Clone, Copy, Debug)]
pub struct Biquad<T: Scalar> {
    pub b: [T; 3],
    pub a: [T; 3],
}

impl<T: Scalar> Biquad<T> {
    /// Poles strictly inside the unit circle (stability triangle).
    pub fn is_stable(&self) -> bool {
        let (a1, a2) = (self.a[1], self.a[2]);
        a2.abs() < T::one() && a1.abs() < T::one() + a2
    }

    /// Evaluate the section at `z = e^{j w Ts}`.
    fn response(&self, z_inv: Complex<T>) -> Complex<T> {
        let z_inv2 = z_inv * z_inv;
        let num = Complex::new(self.b[0], T::zero())
            + z_inv * self.b[1]
            + z_inv2 * self.b[2];
        let den = Complex::new(self.a[0], T::zero())
            + z_inv * self.a[1]
            + z_inv2 * self.a[2];
        num / den
    }

    /// Run the section over `input` from zero initial state (DF2 transposed).
    fn filter_into(&self, input: &[T], output: &mut [T]) {
        let mut s1 = T::zero();
        let mut s2 = T::zero();
        for (x, y) in input.iter().zip(output.iter_mut()) {
            let out = self.b[0] * *x + s1;
            s1 = self.b[1] * *x - self.a[1] * out + s2;
            s2 = self.b[2] * *x - self.a[2] * out;
            *y += out;
        }
    }
}

/// Parallel connection of discretized second-order modes.
#[derive(Clone, Debug)]
pub struct TestSystem<T: Scalar> {
    pub modes: Vec<Mode<T>>,
    sections: Vec<Biquad<T>>,
}

impl<T: Scalar> TestSystem<T> {
    /// Discretize `modes` with the bilinear transform at interval `t_s`.
    pub fn new(modes: Vec<Mode<T>>, t_s: T) -> Result<Self> {
        if modes.is_empty() {
            return Err(FrfError::invalid("system needs at least one mode"));
        }
        if t_s <= T::zero() {
            return Err(FrfError::invalid("sampling interval must be > 0"));
        }
        let two = cvt::<T>(2.0);
        let k = two / t_s;
        let mut sections = Vec::with_capacity(modes.len());
        for m in &modes {
            let wn = m.natural_frequency;
            let zeta = m.damping_ratio;
            if wn <= T::zero() || zeta <= T::zero() {
                return Err(FrfError::invalid(
                    "mode needs natural_frequency > 0 and damping_ratio > 0",
                ));
            }
            let wn2 = wn * wn;
            let c0 = k * k + two * zeta * wn * k + wn2;
            let c1 = two * wn2 - two * k * k;
            let c2 = k * k - two * zeta * wn * k + wn2;
            let g = m.gain * wn2 / c0;
            let section = Biquad {
                b: [g, two * g, g],
                a: [T::one(), c1 / c0, c2 / c0],
            };
            if !section.is_stable() {
                return Err(FrfError::UnstableSystem(format!(
                    "mode at {} rad/s discretizes outside the unit circle",
                    m.natural_frequency.to_f64().unwrap_or(f64::NAN)
                )));
            }
            sections.push(section);
        }
        Ok(TestSystem { modes, sections })
    }

    /// Static gain (used by identity-system tests).
    pub fn static_gain(gain: T) -> Self {
        TestSystem {
            modes: Vec::new(),
            sections: vec![Biquad {
                b: [gain, T::zero(), T::zero()],
                a: [T::one(), T::zero(), T::zero()],
            }],
        }
    }

    /// Default lightly damped benchmark system: three resonances inside the
    /// evaluation band `[0, 2 pi)` rad/s.
    pub fn lightly_damped_default(t_s: T) -> Self {
        let modes = vec![
            Mode {
                natural_frequency: cvt(1.5),
                damping_ratio: cvt(0.005),
                gain: T::one(),
            },
            Mode {
                natural_frequency: cvt(3.0),
                damping_ratio: cvt(0.003),
                gain: T::one(),
            },
            Mode {
                natural_frequency: cvt(5.0),
                damping_ratio: cvt(0.008),
                gain: T::one(),
            },
        ];
        TestSystem::new(modes, t_s).expect("default system is stable")
    }

    /// Smooth (well damped) system for bias checks away from resonances.
    pub fn smooth_default(t_s: T) -> Self {
        let modes = vec![Mode {
            natural_frequency: cvt(3.0),
            damping_ratio: cvt(0.9),
            gain: T::one(),
        }];
        TestSystem::new(modes, t_s).expect("smooth system is stable")
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    /// Slowest continuous-time mode time constant `1/(zeta*wn)`, if any.
    pub fn slowest_time_constant(&self) -> Option<T> {
        self.modes
            .iter()
            .map(|m| T::one() / (m.damping_ratio * m.natural_frequency))
            .fold(None, |acc, tau| {
                Some(acc.map_or(tau, |a: T| if tau > a { tau } else { a }))
            })
    }

    /// Exact discrete transfer function at angular frequency `omega` (rad/s).
    pub fn freq_response(&self, omega: T, t_s: T) -> Complex<T> {
        let theta = omega * t_s;
        let z_inv = Complex::new(theta.cos(), -theta.sin());
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .fold(Complex::new(T::zero(), T::zero()), |acc, h| acc + h)
    }

    /// Noise-free response to `input` from zero initial state.
    pub fn response(&self, input: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); input.len()];
        for s in &self.sections {
            s.filter_into(input, &mut out);
        }
        out
    }
}

/// Per-bin input/output spectra with optional ground truth.
#[derive(Clone, Debug)]
pub struct SpectraRecord<T: Scalar> {
    /// Retained sample count `N` behind the DFT grid.
    pub sample_count: usize,
    /// Sampling interval in seconds.
    pub sampling_interval: T,
    /// Angular frequency per bin, `omega_k = 2 pi k / (N Ts)`.
    pub omega: Vec<T>,
    /// Input DFT `U(k)`, bins `0..=floor(N/2)`.
    pub input: Vec<Complex<T>>,
    /// Output DFT `Y(k)`.
    pub output: Vec<Complex<T>>,
    /// True FRF at the bin frequencies (synthetic data only).
    pub g_true: Option<Vec<Complex<T>>>,
    /// True per-bin noise variance (synthetic data only).
    pub sigma2_true: Option<Vec<T>>,
    /// Excited-bin mask.
    pub excited: Vec<bool>,
}

impl<T: Scalar> SpectraRecord<T> {
    /// Number of stored bins, `floor(N/2) + 1`.
    pub fn bin_count(&self) -> usize {
        self.omega.len()
    }

    /// Constant grid spacing `2 pi / (N Ts)`.
    pub fn delta_omega(&self) -> T {
        T::two_pi() / (cvt::<T>(self.sample_count as f64) * self.sampling_interval)
    }

    pub fn has_ground_truth(&self) -> bool {
        self.g_true.is_some() && self.sigma2_true.is_some()
    }

    /// Contiguous excited band as `(first, last)` bin indices.
    pub fn excited_band(&self) -> Result<(usize, usize)> {
        let first = self
            .excited
            .iter()
            .position(|&e| e)
            .ok_or_else(|| FrfError::invalid("record has no excited bins"))?;
        let last = self.excited.iter().rposition(|&e| e).unwrap();
        if self.excited[first..=last].iter().any(|&e| !e) {
            return Err(FrfError::invalid("excited band is not contiguous"));
        }
        Ok((first, last))
    }
}

/// Unitary N-point DFT: `X(k) = N^{-1/2} sum_n x(n) e^{-2 pi j n k / N}`.
pub fn dft<T: Scalar>(x: &[T]) -> Result<Vec<Complex<T>>> {
    if x.is_empty() {
        return Err(FrfError::invalid("dft input must be nonempty"));
    }
    let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
    FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
    let scale = T::one() / cvt::<T>(x.len() as f64).sqrt();
    for c in &mut buf {
        *c = c.scale(scale);
    }
    Ok(buf)
}

/// One period of the equal-amplitude random-phase multisine at unit RMS.
///
/// The one-period DFT is zero at DC and above `excited_fraction * P/2`;
/// excited bins share one magnitude and carry seeded uniform phases.
pub fn multisine<T: Scalar>(config: &ExperimentConfig<T>) -> Result<Vec<T>> {
    config.validate()?;
    let p = config.period;
    let k_max = config.excited_bin_max(p);
    if k_max == 0 {
        return Err(FrfError::invalid(
            "excited_fraction excites no bins at this period",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut spec = vec![Complex::new(T::zero(), T::zero()); p];
    for k in 1..=k_max {
        let phase = T::two_pi() * T::unit_uniform(&mut rng);
        let line = Complex::new(phase.cos(), phase.sin());
        spec[k] = line;
        spec[p - k] = line.conj();
    }
    FftPlanner::new().plan_fft_inverse(p).process(&mut spec);
    let mut u: Vec<T> = spec.iter().map(|c| c.re).collect();
    let mean_sq = u.iter().map(|&v| v * v).sum::<T>() / cvt::<T>(p as f64);
    let rms = mean_sq.sqrt();
    for v in &mut u {
        *v /= rms;
    }
    Ok(u)
}

fn variance<T: Scalar>(x: &[T]) -> T {
    let n = cvt::<T>(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n
}

/// Simulate the experiment and return frequency-domain records.
///
/// The input is `warmup_periods * P + N` samples of the periodic multisine;
/// the system output starts from zero state; white Gaussian noise is scaled
/// to the configured SNR; only the last `N` samples are retained and
/// transformed, so `N < P` leaves the leakage/transient term in the data.
pub fn simulate<T: Scalar>(
    system: &TestSystem<T>,
    config: &ExperimentConfig<T>,
) -> Result<SpectraRecord<T>> {
    config.validate()?;
    if !system.is_stable() {
        return Err(FrfError::UnstableSystem(
            "discretized poles outside the unit circle".into(),
        ));
    }
    let n = config.sample_count;
    let p = config.period;
    let u_period = multisine(config)?;
    let total = config.warmup_periods * p + n;
    let u_full: Vec<T> = (0..total).map(|i| u_period[i % p]).collect();
    let y_clean = system.response(&u_full);

    let u_ret = &u_full[total - n..];
    let mut y_ret = y_clean[total - n..].to_vec();

    let sigma_v2 = if config.snr_db.is_finite() {
        let snr_lin = cvt::<T>(10.0).powf(config.snr_db / cvt(10.0));
        variance(&y_ret) / snr_lin
    } else {
        T::zero()
    };
    if sigma_v2 > T::zero() {
        let sigma_v = sigma_v2.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, 0x6e6f_6973));
        for y in &mut y_ret {
            *y += sigma_v * T::standard_normal(&mut rng);
        }
    }

    let u_spec = dft(u_ret)?;
    let y_spec = dft(&y_ret)?;
    let bins = n / 2 + 1;
    let t_s = config.sampling_interval;
    let d_omega = T::two_pi() / (cvt::<T>(n as f64) * t_s);
    let k_max = config.excited_bin_max(n);

    let mut omega = Vec::with_capacity(bins);
    let mut g_true = Vec::with_capacity(bins);
    let mut excited = Vec::with_capacity(bins);
    for k in 0..bins {
        let w = d_omega * cvt::<T>(k as f64);
        omega.push(w);
        g_true.push(system.freq_response(w, t_s));
        excited.push(k >= 1 && k <= k_max);
    }

    Ok(SpectraRecord {
        sample_count: n,
        sampling_interval: t_s,
        omega,
        input: u_spec[..bins].to_vec(),
        output: y_spec[..bins].to_vec(),
        g_true: Some(g_true),
        sigma2_true: Some(vec![sigma_v2; bins]),
        excited,
    })
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

const RECORD_HEADER: [&str; 10] = [
    "k",
    "omega",
    "re_U",
    "im_U",
    "re_Y",
    "im_Y",
    "re_Gtrue",
    "im_Gtrue",
    "sigma2_true",
    "excited",
];

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

impl<T: Scalar> SpectraRecord<T> {
    /// Write the record as CSV with the canonical header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(RECORD_HEADER)?;
        for k in 0..self.bin_count() {
            let (g_re, g_im, s2) = match (&self.g_true, &self.sigma2_true) {
                (Some(g), Some(s)) => (
                    fmt_f64(g[k].re.to_f64().unwrap()),
                    fmt_f64(g[k].im.to_f64().unwrap()),
                    fmt_f64(s[k].to_f64().unwrap()),
                ),
                _ => (String::new(), String::new(), String::new()),
            };
            w.write_record([
                k.to_string(),
                fmt_f64(self.omega[k].to_f64().unwrap()),
                fmt_f64(self.input[k].re.to_f64().unwrap()),
                fmt_f64(self.input[k].im.to_f64().unwrap()),
                fmt_f64(self.output[k].re.to_f64().unwrap()),
                fmt_f64(self.output[k].im.to_f64().unwrap()),
                g_re,
                g_im,
                s2,
                (self.excited[k] as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a record from CSV; ground-truth columns may be absent or empty.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let headers = r.headers()?.clone();
        let idx = |name: &str| headers.iter().position(|h| h == name);
        let need = |name: &str| {
            idx(name).ok_or_else(|| FrfError::invalid(format!("missing CSV column {name}")))
        };
        let (ik, iw) = (need("k")?, need("omega")?);
        let (iur, iui) = (need("re_U")?, need("im_U")?);
        let (iyr, iyi) = (need("re_Y")?, need("im_Y")?);
        let igr = idx("re_Gtrue");
        let igi = idx("im_Gtrue");
        let is2 = idx("sigma2_true");
        let iex = idx("excited");

        let mut omega = Vec::new();
        let mut input = Vec::new();
        let mut output = Vec::new();
        let mut g_true: Vec<Complex<T>> = Vec::new();
        let mut sigma2: Vec<T> = Vec::new();
        let mut excited = Vec::new();
        let mut gt_complete = true;

        let parse = |field: &str| -> Result<T> {
            field
                .parse::<f64>()
                .map(|v| cvt(v))
                .map_err(|e| FrfError::invalid(format!("bad float {field:?}: {e}")))
        };
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let k: usize = rec
                .get(ik)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| FrfError::invalid(format!("bad bin index in row {row}")))?;
            if k != row {
                return Err(FrfError::invalid("bin indices must be consecutive from 0"));
            }
            omega.push(parse(rec.get(iw).unwrap_or(""))?);
            input.push(Complex::new(
                parse(rec.get(iur).unwrap_or(""))?,
                parse(rec.get(iui).unwrap_or(""))?,
            ));
            output.push(Complex::new(
                parse(rec.get(iyr).unwrap_or(""))?,
                parse(rec.get(iyi).unwrap_or(""))?,
            ));
            let gt = match (igr, igi, is2) {
                (Some(a), Some(b), Some(c)) => {
                    let (ra, rb, rc) = (
                        rec.get(a).unwrap_or(""),
                        rec.get(b).unwrap_or(""),
                        rec.get(c).unwrap_or(""),
                    );
                    if ra.is_empty() || rb.is_empty() || rc.is_empty() {
                        None
                    } else {
                        Some((parse(ra)?, parse(rb)?, parse(rc)?))
                    }
                }
                _ => None,
            };
            match gt {
                Some((re, im, s2)) => {
                    g_true.push(Complex::new(re, im));
                    sigma2.push(s2);
                }
                None => gt_complete = false,
            }
            excited.push(match iex {
                Some(i) => rec.get(i).unwrap_or("1") != "0",
                None => true,
            });
        }
        if omega.is_empty() {
            return Err(FrfError::invalid("record has no bins"));
        }
        // reconstruct N from the grid spacing when more than one bin exists
        let sample_count = (omega.len() - 1) * 2;
        let t_s = if omega.len() > 1 {
            T::two_pi() / ((omega[1] - omega[0]) * cvt(sample_count as f64))
        } else {
            T::one()
        };
        Ok(SpectraRecord {
            sample_count: sample_count.max(1),
            sampling_interval: t_s,
            omega,
            input,
            output,
            g_true: gt_complete.then_some(g_true),
            sigma2_true: gt_complete.then_some(sigma2),
            excited,
        })
    }

    /// Write the record as a JSON document equivalent to the CSV layout.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let dto = RecordDto::from_record(self);
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut file, &dto)?;
        file.write_all(b"\n")?;
        Ok(())
    }

    /// Read a record from JSON; ground-truth arrays are optional.
    pub fn read_json(path: &Path) -> Result<Self> {
        let dto: RecordDto = serde_json::from_reader(std::fs::File::open(path)?)?;
        dto.into_record()
    }
}

#[derive(Serialize, Deserialize)]
struct RecordDto {
    sample_count: usize,
    sampling_interval: f64,
    omega: Vec<f64>,
    re_u: Vec<f64>,
    im_u: Vec<f64>,
    re_y: Vec<f64>,
    im_y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    re_gtrue: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    im_gtrue: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma2_true: Option<Vec<f64>>,
    excited: Vec<bool>,
}

impl RecordDto {
    fn from_record<T: Scalar>(r: &SpectraRecord<T>) -> Self {
        let tof = |v: &[T]| v.iter().map(|x| x.to_f64().unwrap()).collect::<Vec<_>>();
        RecordDto {
            sample_count: r.sample_count,
            sampling_interval: r.sampling_interval.to_f64().unwrap(),
            omega: tof(&r.omega),
            re_u: r.input.iter().map(|c| c.re.to_f64().unwrap()).collect(),
            im_u: r.input.iter().map(|c| c.im.to_f64().unwrap()).collect(),
            re_y: r.output.iter().map(|c| c.re.to_f64().unwrap()).collect(),
            im_y: r.output.iter().map(|c| c.im.to_f64().unwrap()).collect(),
            re_gtrue: r
                .g_true
                .as_ref()
                .map(|g| g.iter().map(|c| c.re.to_f64().unwrap()).collect()),
            im_gtrue: r
                .g_true
                .as_ref()
                .map(|g| g.iter().map(|c| c.im.to_f64().unwrap()).collect()),
            sigma2_true: r.sigma2_true.as_ref().map(|s| tof(s)),
            excited: r.excited.clone(),
        }
    }

    fn into_record<T: Scalar>(self) -> Result<SpectraRecord<T>> {
        let n_bins = self.omega.len();
        let check = |len: usize, name: &str| {
            if len != n_bins {
                Err(FrfError::invalid(format!("length mismatch in {name}")))
            } else {
                Ok(())
            }
        };
        check(self.re_u.len(), "re_u")?;
        check(self.re_y.len(), "re_y")?;
        check(self.excited.len(), "excited")?;
        let tov = |v: &[f64]| v.iter().map(|&x| cvt::<T>(x)).collect::<Vec<T>>();
        let g_true = match (&self.re_gtrue, &self.im_gtrue) {
            (Some(re), Some(im)) => {
                check(re.len(), "re_gtrue")?;
                Some(
                    re.iter()
                        .zip(im)
                        .map(|(&a, &b)| Complex::new(cvt::<T>(a), cvt::<T>(b)))
                        .collect(),
                )
            }
            _ => None,
        };
        Ok(SpectraRecord {
            sample_count: self.sample_count,
            sampling_interval: cvt(self.sampling_interval),
            omega: tov(&self.omega),
            input: self
                .re_u
                .iter()
                .zip(&self.im_u)
                .map(|(&a, &b)| Complex::new(cvt::<T>(a), cvt::<T>(b)))
                .collect(),
            output: self
                .re_y
                .iter()
                .zip(&self.im_y)
                .map(|(&a, &b)| Complex::new(cvt::<T>(a), cvt::<T>(b)))
                .collect(),
            g_true,
            sigma2_true: self.sigma2_true.as_ref().map(|s| tov(s)),
            excited: self.excited,
        })
    }
}
