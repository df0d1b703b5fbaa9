// temporary diagnostic probe, removed before release
use frf_lab::kernels::{frf_kernel_pair, KernelFamily, KernelSpec, WindowGrid};
use frf_lab::lgpr::{eb_tune, WindowModel};
use frf_lab::localwin::extract_window;
use frf_lab::spectra::{simulate, ExperimentConfig, TestSystem};
use frf_lab::cgauss::{map_gt, nll};
use std::collections::BTreeMap;

#[test]
#[ignore]
fn probe_resonance_window() {
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
    let d_omega: f64 = rec.delta_omega();
    let k_res = (1.5 / d_omega).round() as usize;
    println!("bin nearest target: {k_res}, omega = {}", rec.omega[k_res]);
    let w = extract_window(&rec, k_res, 5).unwrap();
    let grid = WindowGrid::from_window(&w, None);
    let g_true = rec.g_true.as_ref().unwrap()[k_res];
    println!("|G_true| at bin = {}", g_true.norm());
    println!("window |Y|: {:?}", w.output.iter().map(|c| c.norm()).collect::<Vec<_>>());
    let sigma2_true = rec.sigma2_true.as_ref().unwrap()[k_res];
    println!("sigma2_true = {sigma2_true:e}");

    let model = WindowModel::FrfSpace { input: &w.input, output: &w.output, grid: &grid };
    let spec = KernelSpec::<f64>::new(KernelFamily::DpPlusR1, BTreeMap::new());

    for starts in [8usize, 20, 46, 80] {
        let tuned = eb_tune(&model, &spec, starts, 42, None).unwrap();
        let tuned_spec = spec.with_eta_vec(&tuned.eta_values()).unwrap();
        let (m_g, m_t) = frf_kernel_pair(&tuned_spec, &grid).unwrap();
        let gt = map_gt(&w.input, &w.output, &m_g, &m_t, tuned.sigma2).unwrap();
        let err = (gt.g[w.eval_index()] - g_true).norm();
        println!(
            "starts={starts}: nll={:.2} sigma2={:.3e} err={:.3e} eta={:?}",
            tuned.nll, tuned.sigma2, err,
            tuned.eta.iter().map(|(n, v)| format!("{n}={v:.3e}")).collect::<Vec<_>>()
        );
    }

    // hand-crafted parameter vector informed by the mode at 3 rad/s
    let peak = w.output.iter().zip(w.input.iter()).map(|(y, u)| (y / u).norm()).fold(0.0f64, f64::max);
    let beta1 = 0.009;
    let gamma = 2.0 * beta1 * peak;
    let mut eta = BTreeMap::new();
    for (n, v) in [
        ("alpha_G", 1.0), ("lambda", 1e-3), ("beta_G", 1.0), ("kappa", 1e-3),
        ("beta1", beta1), ("beta2", 3.0), ("gamma1", gamma), ("gamma2", gamma),
    ] { eta.insert(n.to_string(), v); }
    let mut hand = KernelSpec::new(KernelFamily::DpPlusR1, eta);
    hand.transient_scale = Some(1.0);
    let (m_g, m_t) = frf_kernel_pair(&hand, &grid).unwrap();
    let hand_nll = nll(&w.input, &w.output, &m_g, &m_t, sigma2_true).unwrap();
    let gt = map_gt(&w.input, &w.output, &m_g, &m_t, sigma2_true).unwrap();
    let err = (gt.g[w.eval_index()] - g_true).norm();
    println!("hand-crafted: nll={hand_nll:.2} err={err:.3e} (peak={peak:.1}, gamma={gamma:.3e})");
}
