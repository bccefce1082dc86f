//! Runs every bundled hazard scenario with all four variants and prints the
//! summary table.
//!
//! `cargo run --release -p gronav-core --example sweep -- [trials] [seed]`

use gronav::harness::{run_batch, summarize, MethodVariant, TrialOptions};
use gronav::scenarios;

fn main() -> gronav::Result<()> {
    let mut args = std::env::args().skip(1);
    let trials: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    for name in scenarios::HAZARD_NAMES {
        let sc = scenarios::by_name(name).expect("bundled");
        let t0 = std::time::Instant::now();
        let out = run_batch(&sc, &MethodVariant::ALL, trials, seed, TrialOptions::default())?;
        let results: Vec<_> = out.iter().map(|o| o.result.clone()).collect();
        println!("{name} ({:.1}s)", t0.elapsed().as_secs_f64());
        for s in summarize(&results) {
            let statuses: Vec<String> = results
                .iter()
                .filter(|r| r.variant == s.variant)
                .map(|r| format!("{:?}@{:.0}", r.status, r.sim_time_s))
                .collect();
            println!(
                "  {:7} success {:.1}  ntl {:.3}  imu {:9.1}  [{}]",
                s.variant.name(),
                s.success_rate,
                s.norm_traj_length,
                s.imu_energy,
                statuses.join(" ")
            );
        }
    }
    Ok(())
}
