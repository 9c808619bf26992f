//! Heavy-tailed errors: the fitted degrees of freedom against a fit with
//! `nu` pinned high, which behaves like a Gaussian factor model. The
//! optional argument sets the signal strength of every loading block.
//!
//! ```text
//! cargo run --release --example robust_vs_gaussian -- 0.6
//! ```

use multirfm::evaluation::trace_metrics;
use multirfm::simulation::{simulate_replicate, ErrorLaw, SimulationSpec};
use multirfm::vem::fit;
use multirfm::FitConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rho: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.6);
    let spec = SimulationSpec {
        n: vec![150, 200],
        p: 300,
        q: 3,
        q_s: vec![2, 2],
        rho_a: rho,
        rho_b: rho,
        error_law: ErrorLaw::StudentT { nu: 2.0 },
        seed: 2024,
    };
    let (data, truth) = simulate_replicate(&spec, 0)?;

    let robust = FitConfig::default();
    let gaussian = FitConfig {
        nu_fixed: Some(1e6),
        ..FitConfig::default()
    };
    for (label, config) in [("robust", robust), ("nu = 1e6", gaussian)] {
        let result = fit(&data, &spec.counts(), &config)?;
        let m = trace_metrics(&result, &truth)?;
        println!(
            "{label:<9} nu {:<8} Tr_A {:.4}  MTr_F {:.4}  MTr_B {:.4}  MTr_H {:.4}",
            result.params.nu, m.tr_a, m.mtr_f, m.mtr_b, m.mtr_h
        );
    }
    Ok(())
}
