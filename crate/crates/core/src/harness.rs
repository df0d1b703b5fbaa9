//! Benchmark orchestration: method-by-scenario grids over Monte Carlo
//! replicates, MSE scoring, per-bin residual series, and artifact output.
//!
//! Replicates run in a rayon work pool with seeds derived from the base
//! seed, so identical configurations reproduce byte-identical summaries
//! regardless of the worker count.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::classic::{
    ilrm_fit, lpm_fit, lrm_fit, mdl_select, FitOrders, IlrmOptions, MdlMethod, MDL_DEFAULT_GRID,
};
use crate::error::{FrfError, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::lgpr::{lgpr_estimate, lrpm_estimate, EstimateOptions, FrfEstimate};
use crate::localwin::extract_window;
use crate::scalar::{cvt, Scalar};
use crate::seeds::derive_seed;
use crate::spectra::{simulate, ExperimentConfig, SpectraRecord, TestSystem};

/// One benchmark scenario: record length, period, window half-width, SNR.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub p: usize,
    pub ell: usize,
    pub snr_db: f64,
    #[serde(default = "default_ts")]
    pub t_s: f64,
    #[serde(default = "default_warmup")]
    pub warmup_periods: usize,
    #[serde(default = "default_excited_fraction")]
    pub excited_fraction: f64,
}

fn default_ts() -> f64 {
    0.1
}
fn default_warmup() -> usize {
    3
}
fn default_excited_fraction() -> f64 {
    0.4
}

impl Scenario {
    pub fn tag(&self) -> String {
        format!("N{}_P{}_ell{}_snr{}", self.n, self.p, self.ell, self.snr_db)
    }

    fn experiment_config<T: Scalar>(&self, seed: u64) -> ExperimentConfig<T> {
        ExperimentConfig {
            sample_count: self.n,
            sampling_interval: cvt(self.t_s),
            period: self.p,
            excited_fraction: cvt(self.excited_fraction),
            snr_db: cvt(self.snr_db),
            warmup_periods: self.warmup_periods,
            rng_seed: seed,
        }
    }
}

/// Benchmark configuration; mirrors the JSON config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenarios: Vec<Scenario>,
    /// Method names, e.g. `"LPM(2)"`, `"LRM(MDL)"`, `"LGPR(DPpR1)"`.
    pub methods: Vec<String>,
    pub replicates: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Multistart count for the empirical-Bayes methods; the desk-scale
    /// default favors runtime, raise it for thorough tuning.
    #[serde(default = "default_eb_starts")]
    pub eb_starts: usize,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    /// Upper edge of the evaluated band in rad/s.
    #[serde(default = "default_band_max")]
    pub band_max_omega: f64,
}

fn default_eb_starts() -> usize {
    8
}
fn default_true() -> bool {
    true
}
fn default_band_max() -> f64 {
    std::f64::consts::TAU
}

/// Order selection rule for the classical methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderRule {
    Fixed(usize),
    Mdl,
}

impl std::fmt::Display for OrderRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OrderRule::Fixed(n) => write!(f, "{n}"),
            OrderRule::Mdl => write!(f, "MDL"),
        }
    }
}

/// A benchmark method.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Lpm(OrderRule),
    Lrm(OrderRule),
    Ilrm(OrderRule),
    Lrpm { n_b: usize, n_i: usize },
    Lgpr(KernelFamily),
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Lpm(r) => write!(f, "LPM({r})"),
            Method::Lrm(r) => write!(f, "LRM({r})"),
            Method::Ilrm(r) => write!(f, "ILRM({r})"),
            Method::Lrpm { .. } => write!(f, "LRPM(DI)"),
            Method::Lgpr(fam) => write!(f, "LGPR({fam})"),
        }
    }
}

impl FromStr for Method {
    type Err = FrfError;

    /// Accepts `NAME(ARG)` и `NAME-ARG` spellings, e.g. `LGPR(DPpR1)` or
    /// `LGPR-DPpR1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = if let Some(open) = s.find('(') {
            let close = s
                .rfind(')')
                .ok_or_else(|| FrfError::invalid(format!("unbalanced parens in {s:?}")))?;
            (&s[..open], &s[open + 1..close])
        } else if let Some(dash) = s.find('-') {
            (&s[..dash], &s[dash + 1..])
        } else {
            (s, "")
        };
        let order_rule = |arg: &str| -> Result<OrderRule> {
            if arg.eq_ignore_ascii_case("mdl") {
                Ok(OrderRule::Mdl)
            } else {
                arg.parse::<usize>()
                    .map(OrderRule::Fixed)
                    .map_err(|_| FrfError::invalid(format!("bad order {arg:?}")))
            }
        };
        match name.to_ascii_uppercase().as_str() {
            "LPM" => Ok(Method::Lpm(order_rule(arg)?)),
            "LRM" => Ok(Method::Lrm(order_rule(arg)?)),
            "ILRM" => Ok(Method::Ilrm(order_rule(arg)?)),
            "LRPM" => {
                if arg.is_empty() || arg.eq_ignore_ascii_case("di") {
                    Ok(Method::Lrpm { n_b: 4, n_i: 4 })
                } else {
                    Err(FrfError::invalid(format!("unknown LRPM variant {arg:?}")))
                }
            }
            "LGPR" => Ok(Method::Lgpr(arg.parse()?)),
            other => Err(FrfError::invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// Frequency band selector for scoring.
#[derive(Clone, Debug)]
pub enum Band<T: Scalar> {
    /// All estimated bins with `omega < max` (rad/s).
    OmegaMax(T),
    /// An explicit list of bins.
    Bins(Vec<usize>),
}

impl<T: Scalar> Default for Band<T> {
    fn default() -> Self {
        Band::OmegaMax(T::two_pi())
    }
}

/// Mean square error of the FRF estimate in dB over the band; exactly zero
/// error returns negative infinity (serialized as `"-inf"`).
pub fn mse_db<T: Scalar>(
    estimate: &FrfEstimate<T>,
    record: &SpectraRecord<T>,
    band: &Band<T>,
) -> Result<T> {
    let g_true = record
        .g_true
        .as_ref()
        .ok_or_else(|| FrfError::MissingGroundTruth("record carries no true FRF".into()))?;
    let mut sum = T::zero();
    let mut count = 0usize;
    match band {
        Band::OmegaMax(w_max) => {
            for (i, &k) in estimate.bins.iter().enumerate() {
                if record.omega[k] < *w_max {
                    sum += (estimate.g_hat[i] - g_true[k]).norm_sqr();
                    count += 1;
                }
            }
        }
        Band::Bins(bins) => {
            for &k in bins {
                let i = estimate.position(k).ok_or_else(|| {
                    FrfError::invalid(format!("bin {k} missing from the estimate"))
                })?;
                sum += (estimate.g_hat[i] - g_true[k]).norm_sqr();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(FrfError::invalid("empty scoring band"));
    }
    let mean = sum / cvt(count as f64);
    if mean == T::zero() {
        Ok(-T::infinity())
    } else {
        Ok(cvt::<T>(10.0) * mean.log10())
    }
}

/// Extra per-method diagnostics carried out of a benchmark cell.
#[derive(Clone, Debug, Default)]
pub struct MethodDiagnostics {
    /// Largest `LOE(ILRM) - LOE(LRM)` over the bins (descent check).
    pub ilrm_loe_violation: Option<f64>,
    /// Bins flagged with a near-vanishing denominator.
    pub pole_flags: usize,
    /// Largest MAP identity residual (FRF-space methods).
    pub identity_residual: Option<f64>,
}

/// Run one method over the band bins of a record.
pub fn estimate_method<T: Scalar>(
    record: &SpectraRecord<T>,
    method: &Method,
    ell: usize,
    bins: &[usize],
    eopts: &EstimateOptions<T>,
) -> Result<(FrfEstimate<T>, MethodDiagnostics)> {
    let mut diag = MethodDiagnostics::default();
    let est = match method {
        Method::Lrpm { n_b, n_i } => {
            let mut opts = eopts.clone();
            opts.band = Some(bins.to_vec());
            lrpm_estimate(record, ell, (*n_b, *n_i), None, &opts)?
        }
        Method::Lgpr(family) => {
            let mut opts = eopts.clone();
            opts.band = Some(bins.to_vec());
            let spec = KernelSpec::<T>::new(*family, BTreeMap::new());
            let est = lgpr_estimate(record, ell, &spec, &opts)?;
            diag.identity_residual = est.max_identity_residual.map(|v| v.to_f64().unwrap());
            est
        }
        Method::Lpm(rule) | Method::Lrm(rule) | Method::Ilrm(rule) => {
            let mut est = FrfEstimate::empty(method.to_string());
            let mut max_viol: Option<f64> = None;
            for &k in bins {
                let step = (|| -> Result<(Complex<T>, Complex<T>, T, String)> {
                    let window = extract_window(record, k, ell)?;
                    match method {
                        Method::Lpm(_) => {
                            let n = match rule {
                                OrderRule::Fixed(n) => *n,
                                OrderRule::Mdl => {
                                    mdl_select(&window, &MDL_DEFAULT_GRID, MdlMethod::Lpm, None)?
                                        .order
                                }
                            };
                            let fit = lpm_fit(&window, n, n, None)?;
                            Ok((fit.g_hat, fit.t_hat, fit.sigma2, format!("n={n}")))
                        }
                        Method::Lrm(_) => {
                            let n = match rule {
                                OrderRule::Fixed(n) => *n,
                                OrderRule::Mdl => {
                                    mdl_select(&window, &MDL_DEFAULT_GRID, MdlMethod::Lrm, None)?
                                        .order
                                }
                            };
                            let fit = lrm_fit(&window, FitOrders::rational(n, n, n), None)?;
                            if fit.diagnostics.pole_in_window {
                                diag.pole_flags += 1;
                            }
                            Ok((fit.g_hat, fit.t_hat, fit.sigma2, format!("n={n}")))
                        }
                        Method::Ilrm(_) => {
                            let n = match rule {
                                OrderRule::Fixed(n) => *n,
                                OrderRule::Mdl => {
                                    mdl_select(&window, &MDL_DEFAULT_GRID, MdlMethod::Lrm, None)?
                                        .order
                                }
                            };
                            let start = lrm_fit(&window, FitOrders::rational(n, n, n), None)?;
                            let fit =
                                ilrm_fit(&window, &start, None, IlrmOptions::default())?;
                            if fit.diagnostics.pole_in_window {
                                diag.pole_flags += 1;
                            }
                            let viol = (fit.loe - start.loe).to_f64().unwrap();
                            max_viol = Some(max_viol.map_or(viol, |v| v.max(viol)));
                            Ok((
                                fit.g_hat,
                                fit.t_hat,
                                fit.sigma2,
                                format!("n={n},it={}", fit.diagnostics.iterations),
                            ))
                        }
                        _ => unreachable!(),
                    }
                })();
                est.bins.push(k);
                est.omega.push(record.omega[k]);
                match step {
                    Ok((g, t, s2, detail)) => {
                        est.g_hat.push(g);
                        est.t_hat.push(t);
                        est.sigma2_hat.push(s2);
                        est.detail.push(detail);
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
            diag.ilrm_loe_violation = max_viol;
            est
        }
    };
    Ok((est, diag))
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v < 0.0 {
        s.serialize_str("-inf")
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else {
        s.serialize_str("inf")
    }
}

/// One summary line per (scenario, method) aggregate.
#[derive(Clone, Debug, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub n: usize,
    pub p: usize,
    pub ell: usize,
    pub snr_db: f64,
    pub method: String,
    pub replicates: usize,
    #[serde(serialize_with = "ser_db")]
    pub mse_db_mean: f64,
    #[serde(serialize_with = "ser_db")]
    pub mse_db_std: f64,
    /// Replicate cells that failed, with the first reason.
    pub failed: usize,
    pub note: String,
}

/// Replicate-averaged per-bin series for residual/noise-variance plots.
#[derive(Clone, Debug, Serialize)]
pub struct PerBinSeries {
    pub scenario: String,
    pub method: String,
    pub bins: Vec<usize>,
    pub omega: Vec<f64>,
    /// Replicate mean of `|G_hat - G_true|`.
    pub mean_abs_err: Vec<f64>,
    /// First-replicate `|G_hat - G_true|`.
    pub rep0_abs_err: Vec<f64>,
    /// Replicate mean of the per-bin noise-variance estimate.
    pub mean_sigma2_hat: Vec<f64>,
    pub rep0_sigma2_hat: Vec<f64>,
    pub sigma2_true: Vec<f64>,
}

/// Full benchmark output.
#[derive(Clone, Debug)]
pub struct ResultTable {
    pub rows: Vec<SummaryRow>,
    pub per_bin: Vec<PerBinSeries>,
    /// Per-replicate MSE values keyed by (scenario tag, method name).
    pub cells: BTreeMap<(String, String), Vec<f64>>,
    /// Worst ILRM descent violation across the whole run.
    pub ilrm_loe_violation: Option<f64>,
    /// Worst MAP identity residual across the whole run.
    pub identity_residual: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub table: ResultTable,
    pub partial_failures: bool,
}

struct CellResult {
    mse_db: f64,
    abs_err: Vec<f64>,
    sigma2_hat: Vec<f64>,
    diag: MethodDiagnostics,
    failure: Option<String>,
}

/// Execute the configured benchmark.
///
/// Replicates parallelize across the rayon pool; the aggregation order is
/// fixed, so equal configurations give byte-identical artifacts.
pub fn run<T: Scalar + Send + Sync>(config: &RunConfig) -> Result<RunOutcome> {
    if config.replicates == 0 {
        return Err(FrfError::invalid("replicates must be >= 1"));
    }
    if config.scenarios.is_empty() {
        return Err(FrfError::invalid("no scenarios configured"));
    }
    let methods: Vec<Method> = config
        .methods
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(FrfError::invalid("no methods configured"));
    }

    let mut rows = Vec::new();
    let mut per_bin = Vec::new();
    let mut cells = BTreeMap::new();
    let mut worst_viol: Option<f64> = None;
    let mut worst_resid: Option<f64> = None;
    let mut any_failure = false;

    for (si, scenario) in config.scenarios.iter().enumerate() {
        let scenario_seed = derive_seed(config.base_seed, si as u64);
        let system = TestSystem::<T>::lightly_damped_default(cvt(scenario.t_s));

        // probe record fixes the band and the ground truth
        let probe_cfg = scenario.experiment_config::<T>(derive_seed(scenario_seed, 0));
        let probe = simulate(&system, &probe_cfg)?;
        let (lo, hi) = probe.excited_band()?;
        let band_max = cvt::<T>(config.band_max_omega);
        let bins: Vec<usize> = (lo..=hi).filter(|&k| probe.omega[k] < band_max).collect();
        if bins.is_empty() {
            return Err(FrfError::invalid(format!(
                "scenario {} has no bins below {} rad/s",
                scenario.tag(),
                config.band_max_omega
            )));
        }
        if 2 * scenario.ell + 1 > hi - lo + 1 {
            return Err(FrfError::invalid(format!(
                "scenario {} window exceeds the excited band",
                scenario.tag()
            )));
        }
        let sigma2_true: Vec<f64> = bins
            .iter()
            .map(|&k| probe.sigma2_true.as_ref().unwrap()[k].to_f64().unwrap())
            .collect();

        // replicate -> method -> cell
        let replicate_results: Vec<Vec<CellResult>> = (0..config.replicates)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(scenario_seed, r as u64);
                let cfg = scenario.experiment_config::<T>(seed);
                let record = match simulate(&system, &cfg) {
                    Ok(rec) => rec,
                    Err(e) => {
                        let failed = CellResult {
                            mse_db: f64::NAN,
                            abs_err: Vec::new(),
                            sigma2_hat: Vec::new(),
                            diag: MethodDiagnostics::default(),
                            failure: Some(format!("simulation failed: {e}")),
                        };
                        return methods
                            .iter()
                            .map(|_| CellResult {
                                mse_db: failed.mse_db,
                                abs_err: Vec::new(),
                                sigma2_hat: Vec::new(),
                                diag: MethodDiagnostics::default(),
                                failure: failed.failure.clone(),
                            })
                            .collect();
                    }
                };
                let g_true = record.g_true.as_ref().unwrap();
                methods
                    .iter()
                    .enumerate()
                    .map(|(mi, method)| {
                        let eopts = EstimateOptions::<T> {
                            starts: Some(config.eb_starts),
                            seed: derive_seed(seed, 0x1000 + mi as u64),
                            warm_start: config.warm_start,
                            ..Default::default()
                        };
                        match estimate_method(&record, method, scenario.ell, &bins, &eopts) {
                            Ok((est, diag)) => {
                                let failure = (!est.failures.is_empty()).then(|| {
                                    format!(
                                        "{} bins failed; first: bin {} ({})",
                                        est.failures.len(),
                                        est.failures[0].0,
                                        est.failures[0].1
                                    )
                                });
                                let mse = mse_db(&est, &record, &Band::OmegaMax(band_max))
                                    .map(|v| v.to_f64().unwrap())
                                    .unwrap_or(f64::NAN);
                                let abs_err: Vec<f64> = bins
                                    .iter()
                                    .enumerate()
                                    .map(|(i, &k)| {
                                        (est.g_hat[i] - g_true[k])
                                            .norm_sqr()
                                            .sqrt()
                                            .to_f64()
                                            .unwrap()
                                    })
                                    .collect();
                                let sigma2_hat: Vec<f64> = est
                                    .sigma2_hat
                                    .iter()
                                    .map(|v| v.to_f64().unwrap())
                                    .collect();
                                CellResult {
                                    mse_db: mse,
                                    abs_err,
                                    sigma2_hat,
                                    diag,
                                    failure,
                                }
                            }
                            Err(e) => CellResult {
                                mse_db: f64::NAN,
                                abs_err: Vec::new(),
                                sigma2_hat: Vec::new(),
                                diag: MethodDiagnostics::default(),
                                failure: Some(e.to_string()),
                            },
                        }
                    })
                    .collect()
            })
            .collect();

        for (mi, method) in methods.iter().enumerate() {
            let mut mse_values = Vec::new();
            let mut failed = 0usize;
            let mut note = String::new();
            let mut mean_abs = vec![0.0f64; bins.len()];
            let mut mean_s2 = vec![0.0f64; bins.len()];
            let mut mean_count = 0usize;
            let mut rep0_abs = vec![f64::NAN; bins.len()];
            let mut rep0_s2 = vec![f64::NAN; bins.len()];
            for (r, rep) in replicate_results.iter().enumerate() {
                let cell = &rep[mi];
                if let Some(reason) = &cell.failure {
                    failed += 1;
                    if note.is_empty() {
                        note = format!("replicate {r}: {reason}");
                    }
                    continue;
                }
                mse_values.push(cell.mse_db);
                if !cell.abs_err.is_empty() {
                    for i in 0..bins.len() {
                        mean_abs[i] += cell.abs_err[i];
                        mean_s2[i] += cell.sigma2_hat[i];
                    }
                    mean_count += 1;
                    if r == 0 {
                        rep0_abs.copy_from_slice(&cell.abs_err);
                        rep0_s2.copy_from_slice(&cell.sigma2_hat);
                    }
                }
                if let Some(v) = cell.diag.ilrm_loe_violation {
                    worst_viol = Some(worst_viol.map_or(v, |w| w.max(v)));
                }
                if let Some(v) = cell.diag.identity_residual {
                    worst_resid = Some(worst_resid.map_or(v, |w| w.max(v)));
                }
            }
            if failed > 0 {
                any_failure = true;
            }
            if mean_count > 0 {
                for i in 0..bins.len() {
                    mean_abs[i] /= mean_count as f64;
                    mean_s2[i] /= mean_count as f64;
                }
            }
            let (mean, std) = mean_std(&mse_values);
            rows.push(SummaryRow {
                scenario: scenario.tag(),
                n: scenario.n,
                p: scenario.p,
                ell: scenario.ell,
                snr_db: scenario.snr_db,
                method: method.to_string(),
                replicates: config.replicates,
                mse_db_mean: mean,
                mse_db_std: std,
                failed,
                note,
            });
            per_bin.push(PerBinSeries {
                scenario: scenario.tag(),
                method: method.to_string(),
                bins: bins.clone(),
                omega: bins
                    .iter()
                    .map(|&k| probe.omega[k].to_f64().unwrap())
                    .collect(),
                mean_abs_err: mean_abs,
                rep0_abs_err: rep0_abs,
                mean_sigma2_hat: mean_s2,
                rep0_sigma2_hat: rep0_s2,
                sigma2_true: sigma2_true.clone(),
            });
            cells.insert((scenario.tag(), method.to_string()), mse_values);
        }
    }

    let table = ResultTable {
        rows,
        per_bin,
        cells,
        ilrm_loe_violation: worst_viol,
        identity_residual: worst_resid,
    };
    if let Some(dir) = &config.out_dir {
        write_artifacts(&table, dir)?;
    }
    Ok(RunOutcome {
        table,
        partial_failures: any_failure,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fmt_db(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else if x.is_nan() {
        "nan".into()
    } else if x < 0.0 {
        "-inf".into()
    } else {
        "inf".into()
    }
}

/// Atomically write `content` (temp file + rename).
fn write_atomic(path: &Path, content: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(content)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Write `summary.csv`, `summary.json` and per-cell plot CSVs.
pub fn write_artifacts(table: &ResultTable, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut csv = String::from(
        "scenario,n,p,ell,snr_db,method,replicates,mse_db_mean,mse_db_std,failed,note\n",
    );
    for row in &table.rows {
        csv.push_str(&format!(
            "{},{},{},{},{:?},{},{},{},{},{},{}\n",
            row.scenario,
            row.n,
            row.p,
            row.ell,
            row.snr_db,
            row.method,
            row.replicates,
            fmt_db(row.mse_db_mean),
            fmt_db(row.mse_db_std),
            row.failed,
            row.note.replace(',', ";"),
        ));
    }
    write_atomic(&dir.join("summary.csv"), csv.as_bytes())?;

    let json = serde_json::to_string_pretty(&table.rows)?;
    write_atomic(&dir.join("summary.json"), format!("{json}\n").as_bytes())?;

    for series in &table.per_bin {
        let mut csv = String::from(
            "k,omega,mean_abs_err,rep0_abs_err,mean_sigma2_hat,rep0_sigma2_hat,sigma2_true\n",
        );
        for i in 0..series.bins.len() {
            csv.push_str(&format!(
                "{},{:?},{},{},{},{},{:?}\n",
                series.bins[i],
                series.omega[i],
                fmt_db(series.mean_abs_err[i]),
                fmt_db(series.rep0_abs_err[i]),
                fmt_db(series.mean_sigma2_hat[i]),
                fmt_db(series.rep0_sigma2_hat[i]),
                series.sigma2_true[i],
            ));
        }
        let name = format!(
            "plot_{}_{}.csv",
            series.scenario,
            series
                .method
                .replace(['(', ')'], "_")
                .replace(',', "-")
        );
        write_atomic(&dir.join(name), csv.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;

    fn tiny_config(dir: Option<PathBuf>) -> RunConfig {
        RunConfig {
            scenarios: vec![Scenario {
                n: 256,
                p: 320,
                ell: 5,
                snr_db: 40.0,
                t_s: 0.1,
                warmup_periods: 2,
                excited_fraction: 0.4,
            }],
            methods: vec!["LPM(2)".into()],
            replicates: 1,
            base_seed: 7,
            out_dir: dir,
            eb_starts: 4,
            warm_start: true,
            band_max_omega: std::f64::consts::TAU,
        }
    }

    #[test]
    fn method_parsing_round_trips() {
        let cases = [
            ("LPM(2)", Method::Lpm(OrderRule::Fixed(2))),
            ("LPM(MDL)", Method::Lpm(OrderRule::Mdl)),
            ("LRM-2", Method::Lrm(OrderRule::Fixed(2))),
            ("ILRM(MDL)", Method::Ilrm(OrderRule::Mdl)),
            ("LRPM(DI)", Method::Lrpm { n_b: 4, n_i: 4 }),
            ("LGPR(DP)", Method::Lgpr(KernelFamily::Dp)),
            ("LGPR-DPpR1", Method::Lgpr(KernelFamily::DpPlusR1)),
            ("LGPR(DCpR1)", Method::Lgpr(KernelFamily::DcPlusR1)),
        ];
        for (text, expect) in cases {
            let parsed: Method = text.parse().unwrap();
            assert_eq!(parsed, expect, "parsing {text}");
        }
        assert!("LGPR(BOGUS)".parse::<Method>().is_err());
        assert!("FOO(2)".parse::<Method>().is_err());
    }

    #[test]
    fn mse_db_known_values() {
        // G-hat = G_true everywhere -> -inf; off by 1 everywhere -> 0 dB;
        // two bins with errors {1, 3} -> 10 log10(5)
        let record = SpectraRecord::<f64> {
            sample_count: 8,
            sampling_interval: 0.1,
            omega: vec![0.0, 1.0, 2.0],
            input: vec![cplx(1.0, 0.0); 3],
            output: vec![cplx(1.0, 0.0); 3],
            g_true: Some(vec![cplx(1.0, 0.0), cplx(2.0, 0.0), cplx(0.5, 0.0)]),
            sigma2_true: Some(vec![0.0; 3]),
            excited: vec![true; 3],
        };
        let mut est = FrfEstimate::<f64>::empty("test");
        est.bins = vec![0, 1, 2];
        est.omega = record.omega.clone();
        est.t_hat = vec![cplx(0.0, 0.0); 3];
        est.sigma2_hat = vec![1.0; 3];
        est.detail = vec![String::new(); 3];

        est.g_hat = record.g_true.clone().unwrap();
        let exact = mse_db(&est, &record, &Band::default()).unwrap();
        assert!(exact.is_infinite() && exact < 0.0);

        est.g_hat = record
            .g_true
            .clone()
            .unwrap()
            .iter()
            .map(|g| g + cplx::<f64>(1.0, 0.0))
            .collect();
        let unit = mse_db(&est, &record, &Band::default()).unwrap();
        assert!(unit.abs() < 1e-12);

        est.g_hat = record.g_true.clone().unwrap();
        est.g_hat[0] += cplx::<f64>(1.0, 0.0);
        est.g_hat[1] += cplx::<f64>(0.0, 3.0);
        let two = mse_db(&est, &record, &Band::Bins(vec![0, 1])).unwrap();
        assert!((two - 10.0 * 5.0f64.log10()).abs() < 1e-12, "got {two}");

        // missing ground truth is an error
        let mut bare = record.clone();
        bare.g_true = None;
        assert!(matches!(
            mse_db(&est, &bare, &Band::default()),
            Err(FrfError::MissingGroundTruth(_))
        ));
    }

    #[test]
    fn minimal_run_produces_one_row_and_artifacts() {
        let dir = std::env::temp_dir().join("frf_lab_harness_min");
        let _ = std::fs::remove_dir_all(&dir);
        let config = tiny_config(Some(dir.clone()));
        let outcome = run::<f64>(&config).unwrap();
        assert!(!outcome.partial_failures);
        assert_eq!(outcome.table.rows.len(), 1);
        assert_eq!(outcome.table.per_bin.len(), 1);
        assert!(outcome.table.rows[0].mse_db_mean.is_finite());
        assert!(dir.join("summary.csv").exists());
        assert!(dir.join("summary.json").exists());
        assert!(dir.join("plot_N256_P320_ell5_snr40_LPM_2_.csv").exists());
        // plot data carries the residual and noise-variance series
        let head = std::fs::read_to_string(dir.join("plot_N256_P320_ell5_snr40_LPM_2_.csv"))
            .unwrap();
        assert!(head.starts_with(
            "k,omega,mean_abs_err,rep0_abs_err,mean_sigma2_hat,rep0_sigma2_hat,sigma2_true"
        ));
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir1 = std::env::temp_dir().join("frf_lab_harness_det1");
        let dir2 = std::env::temp_dir().join("frf_lab_harness_det2");
        let _ = std::fs::remove_dir_all(&dir1);
        let _ = std::fs::remove_dir_all(&dir2);
        let mut config = tiny_config(Some(dir1.clone()));
        config.methods = vec!["LPM(2)".into(), "LGPR(DP)".into()];
        run::<f64>(&config).unwrap();
        config.out_dir = Some(dir2.clone());
        run::<f64>(&config).unwrap();
        let a = std::fs::read(dir1.join("summary.csv")).unwrap();
        let b = std::fs::read(dir2.join("summary.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn summary_covers_every_cell() {
        let mut config = tiny_config(None);
        config.methods = vec!["LPM(2)".into(), "LRM(2)".into(), "ILRM(2)".into()];
        config.replicates = 2;
        let outcome = run::<f64>(&config).unwrap();
        assert_eq!(outcome.table.rows.len(), 3);
        for row in &outcome.table.rows {
            assert_eq!(row.replicates, 2);
            assert_eq!(row.failed, 0);
        }
        // ILRM descent invariant carried through the run
        let viol = outcome.table.ilrm_loe_violation.unwrap();
        assert!(viol <= 1e-12, "descent violation {viol}");
    }
}
