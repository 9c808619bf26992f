//! Simulate a named scenario, fit it with the true factor counts and print
//! the trace statistics for each replicate.
//!
//! ```text
//! cargo run --release --example scenario_replay -- s1-nu20 3 2024 1e-6
//! ```

use std::time::Instant;

use multirfm::evaluation::trace_metrics;
use multirfm::simulation::{scenario_preset, simulate_replicate};
use multirfm::vem::fit;
use multirfm::FitConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "s1-nu20".to_string());
    let reps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2024);

    let spec = scenario_preset(&name)?.with_seed(seed);
    let eps: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1e-6);
    let config = FitConfig {
        eps,
        ..FitConfig::default()
    };
    println!("scenario {name}: {:?}", spec.error_law);
    println!("rep  Tr_A    MTr_F   MTr_B   MTr_H   nu     iters  secs");
    for rep in 0..reps {
        let (data, truth) = simulate_replicate(&spec, rep)?;
        let t0 = Instant::now();
        let res = fit(&data, &spec.counts(), &config)?;
        let secs = t0.elapsed().as_secs_f64();
        let m = trace_metrics(&res, &truth)?;
        println!(
            "{rep:<4} {:.4}  {:.4}  {:.4}  {:.4}  {:<6} {:<6} {secs:.2}",
            m.tr_a, m.mtr_f, m.mtr_b, m.mtr_h, res.params.nu, res.iterations
        );
    }
    Ok(())
}
