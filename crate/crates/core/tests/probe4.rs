// temporary diagnostic probe, removed before release
use frf_lab::kernels::{KernelFamily, KernelSpec};
use frf_lab::lgpr::{lgpr_estimate, EstimateOptions};
use frf_lab::spectra::{simulate, ExperimentConfig, TestSystem};
use std::collections::BTreeMap;
use std::time::Instant;

#[test]
#[ignore]
fn probe_tuning_cost() {
    let cfg = ExperimentConfig {
        sample_count: 2500,
        sampling_interval: 0.1,
        period: 3100,
        excited_fraction: 0.4,
        snr_db: 60.0,
        warmup_periods: 3,
        rng_seed: 12345,
    };
    let sys = TestSystem::lightly_damped_default(0.1);
    let rec = simulate(&sys, &cfg).unwrap();
    let spec = KernelSpec::<f64>::new(KernelFamily::DpPlusR1, BTreeMap::new());
    for (lo, hi, label) in [(10usize, 40usize, "smooth"), (55, 65, "resonance")] {
        let opts = EstimateOptions {
            starts: Some(8),
            band: Some((lo..hi).collect()),
            embed_trace: true,
            ..Default::default()
        };
        let t0 = Instant::now();
        let est = lgpr_estimate(&rec, 5, &spec, &opts).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let n = (hi - lo) as f64;
        println!(
            "{label}: {:.1} ms/window over {n} windows",
            dt * 1000.0 / n
        );
        if let Some(tuning) = &est.tuning {
            let conv: usize = tuning.iter().map(|t| t.converged_starts()).sum();
            let tot: usize = tuning.iter().map(|t| t.trace.len()).sum();
            println!("  converged {conv}/{tot} starts");
        }
    }
}
