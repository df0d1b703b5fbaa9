//! `frf-lab`: generate synthetic spectra, run the benchmark grid, or apply a
//! single estimator to recorded data.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use frf_lab::harness::{self, Band, Method, RunConfig};
use frf_lab::lgpr::EstimateOptions;
use frf_lab::spectra::{simulate, SpectraRecord, TestSystem};
use frf_lab::seeds::derive_seed;

#[derive(Parser)]
#[command(name = "frf-lab", version, about = "Local FRF estimation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic records of a benchmark configuration.
    Gen {
        /// JSON configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the record files.
        #[arg(long)]
        out: PathBuf,
        /// Also write a JSON copy next to each CSV.
        #[arg(long)]
        json: bool,
    },
    /// Run the full benchmark and write summary and plot artifacts.
    Run {
        /// JSON configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out_dir` in the config).
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one method to a recorded spectra file.
    Estimate {
        /// Input record (CSV with the spectra layout).
        #[arg(long)]
        data: PathBuf,
        /// Method name, e.g. `LPM-2`, `LRM-MDL`, `LGPR-DPpR1`.
        #[arg(long)]
        method: String,
        /// Window half-width.
        #[arg(long)]
        ell: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Multistart count for the tuned methods.
        #[arg(long)]
        starts: Option<usize>,
        /// Seed for the tuning start points.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write a JSON copy with tuning details.
        #[arg(long)]
        json: bool,
    },
}

fn init_threads() {
    if let Ok(v) = std::env::var("FRF_LAB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn load_config(path: &PathBuf) -> frf_lab::Result<RunConfig> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(file)?)
}

fn cmd_gen(config: PathBuf, out: PathBuf, json: bool) -> frf_lab::Result<bool> {
    let cfg = load_config(&config)?;
    std::fs::create_dir_all(&out)?;
    for (si, scenario) in cfg.scenarios.iter().enumerate() {
        let system = TestSystem::<f64>::lightly_damped_default(scenario.t_s);
        let scenario_seed = derive_seed(cfg.base_seed, si as u64);
        for r in 0..cfg.replicates {
            let seed = derive_seed(scenario_seed, r as u64);
            let ecfg = frf_lab::spectra::ExperimentConfig {
                sample_count: scenario.n,
                sampling_interval: scenario.t_s,
                period: scenario.p,
                excited_fraction: scenario.excited_fraction,
                snr_db: scenario.snr_db,
                warmup_periods: scenario.warmup_periods,
                rng_seed: seed,
            };
            let record = simulate(&system, &ecfg)?;
            let base = format!("record_{}_rep{r}", scenario.tag());
            record.write_csv(&out.join(format!("{base}.csv")))?;
            if json {
                record.write_json(&out.join(format!("{base}.json")))?;
            }
        }
    }
    Ok(false)
}

fn cmd_run(config: PathBuf, out: PathBuf) -> frf_lab::Result<bool> {
    let mut cfg = load_config(&config)?;
    cfg.out_dir = Some(out);
    let outcome = harness::run::<f64>(&cfg)?;
    println!(
        "{:<28} {:<12} {:>12} {:>10} {:>7}",
        "scenario", "method", "mse_db_mean", "std", "failed"
    );
    for row in &outcome.table.rows {
        println!(
            "{:<28} {:<12} {:>12.2} {:>10.2} {:>7}",
            row.scenario, row.method, row.mse_db_mean, row.mse_db_std, row.failed
        );
    }
    Ok(outcome.partial_failures)
}

fn cmd_estimate(
    data: PathBuf,
    method: String,
    ell: usize,
    out: PathBuf,
    starts: Option<usize>,
    seed: u64,
    json: bool,
) -> frf_lab::Result<bool> {
    let record = SpectraRecord::<f64>::read_csv(&data)?;
    let method: Method = method.parse()?;
    let (lo, hi) = record.excited_band()?;
    let bins: Vec<usize> = (lo..=hi).collect();
    let eopts = EstimateOptions::<f64> {
        starts,
        seed,
        embed_trace: json,
        ..Default::default()
    };
    let (est, _diag) = harness::estimate_method(&record, &method, ell, &bins, &eopts)?;
    est.write_csv(&out)?;
    if json {
        est.write_json(&out.with_extension("json"))?;
    }
    if record.has_ground_truth() {
        if let Ok(mse) = harness::mse_db(&est, &record, &Band::default()) {
            println!("mse_db = {mse:.2}");
        }
    }
    let partial = !est.failures.is_empty();
    for (bin, reason) in &est.failures {
        eprintln!("bin {bin} failed: {reason}");
    }
    Ok(partial)
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { config, out, json } => cmd_gen(config, out, json),
        Command::Run { config, out } => cmd_run(config, out),
        Command::Estimate {
            data,
            method,
            ell,
            out,
            starts,
            seed,
            json,
        } => cmd_estimate(data, method, ell, out, starts, seed, json),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
