// temporary diagnostic probe, removed before release
use frf_lab::cgauss::{map_gt, nll};
use frf_lab::kernels::{frf_kernel_pair, KernelFamily, KernelSpec, WindowGrid};
use frf_lab::localwin::extract_window;
use frf_lab::spectra::{simulate, ExperimentConfig, TestSystem};
use std::collections::BTreeMap;

#[test]
#[ignore]
fn probe_first_resonance_landscape() {
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
    let w = extract_window(&rec, k_res, 5).unwrap();
    let grid = WindowGrid::from_window(&w, None);
    let g_all = rec.g_true.as_ref().unwrap();
    println!("center bin {k_res} omega {:.4}", rec.omega[k_res]);
    for i in 0..11 {
        let k = w.center - 5 + i;
        let g_raw = w.output[i] / w.input[i];
        let t = w.output[i] - g_all[k] * w.input[i];
        println!(
            "  k={k} om={:.4} |U|={:.3} |Y|={:7.2} |G_true|={:7.2} |G_raw|={:8.2} |T+V|={:7.2}",
            rec.omega[k],
            w.input[i].norm(),
            w.output[i].norm(),
            g_all[k].norm(),
            g_raw.norm(),
            t.norm()
        );
    }
    let sigma2_true: f64 = rec.sigma2_true.as_ref().unwrap()[k_res];
    let g_center = g_all[k_res];

    // scan (beta2, beta1) with amplitude-matched gamma, smooth DP floor
    let peak_graw = (0..11)
        .map(|i| (w.output[i] / w.input[i]).norm())
        .fold(0.0f64, f64::max);
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    for i in 0..=60 {
        let beta2 = 1.44 + 0.003 * i as f64;
        for beta1 in [0.002, 0.0075, 0.02, 0.06] {
            for gscale in [0.3, 1.0, 3.0] {
                let gamma = beta1 * peak_graw * 2.0f64.sqrt() * gscale;
                let mut eta = BTreeMap::new();
                for (n, v) in [
                    ("alpha_G", 25.0),
                    ("lambda", 1e-4),
                    ("beta_G", 25.0),
                    ("kappa", 1e-4),
                    ("beta1", beta1),
                    ("beta2", beta2),
                    ("gamma1", gamma),
                    ("gamma2", gamma),
                ] {
                    eta.insert(n.to_string(), v);
                }
                let mut spec = KernelSpec::new(KernelFamily::DpPlusR1, eta);
                spec.transient_scale = Some(1.0);
                let (m_g, m_t) = frf_kernel_pair(&spec, &grid).unwrap();
                for s2 in [sigma2_true, sigma2_true * 100.0] {
                    let v = nll(&w.input, &w.output, &m_g, &m_t, s2).unwrap();
                    if v < best.0 {
                        best = (v, beta2, beta1, gamma);
                        let gt = map_gt(&w.input, &w.output, &m_g, &m_t, s2).unwrap();
                        let err = (gt.g[w.eval_index()] - g_center).norm();
                        println!(
                            "  new best: nll={v:.2} beta2={beta2:.4} beta1={beta1} gamma={gamma:.2} s2={s2:.2e} err={err:.3e}"
                        );
                    }
                }
            }
        }
    }
    println!("best: {best:?}");
}
