//! Median χ² and latent RMSE over seeds for the three simulated problems.
//!
//! cargo run --release -p lfm-core --example calibration_sweep [seeds]

use std::time::Instant;

use lfm_core::pipeline::{simulated_experiment, InferenceOptions};
use lfm_core::problems::ProblemConfig;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn main() -> lfm_core::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let configs = [
        ProblemConfig::van_der_pol(),
        ProblemConfig::lotka_volterra(),
        ProblemConfig::sird(1000.0)?,
    ];
    for cfg in &configs {
        let start = Instant::now();
        let (mut chi2, mut native, mut linked) = (Vec::new(), Vec::new(), Vec::new());
        for seed in 0..seeds {
            let (_, _, s) = simulated_experiment(cfg, seed, &InferenceOptions::default())?;
            println!("  {} seed {seed}: chi2 {:.3} rmse native {:.4} linked {:.4}", cfg.name(), s.chi2, s.rmse_native, s.rmse_linked);
            chi2.push(s.chi2);
            native.push(s.rmse_native);
            linked.push(s.rmse_linked);
        }
        println!(
            "{}: median chi2 {:.3}, rmse native {:.4}, linked {:.4} ({:.1}s)",
            cfg.name(),
            median(chi2),
            median(native),
            median(linked),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
