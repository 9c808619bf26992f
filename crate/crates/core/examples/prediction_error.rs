//! Hold out part of every study, fit on the rest and score the held-out rows
//! with least-squares factor scores.

use multirfm::evaluation::{oos_factor_scores, prediction_error, split_dataset};
use multirfm::simulation::{scenario_preset, simulate_replicate};
use multirfm::vem::fit;
use multirfm::FitConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = scenario_preset("s2-exp")?.with_seed(11);
    let (data, _) = simulate_replicate(&spec, 0)?;
    let (train, test) = split_dataset(&data, 0.2, 11)?;

    let result = fit(&train, &spec.counts(), &FitConfig::default())?;
    for (s, e) in prediction_error(&result.params, &test)?.iter().enumerate() {
        let worst = e.per_variable.max();
        println!(
            "study {}: {} held-out rows, PE {:.4} (worst variable {:.4})",
            s + 1,
            test.n_obs(s),
            e.overall,
            worst
        );
    }

    let x = test.study(0).row(0).transpose();
    let (f, h) = oos_factor_scores(&result.params, &x, 0)?;
    println!("first held-out row: f = {:.3?}, h = {:.3?}", f.as_slice(), h.as_slice());
    Ok(())
}
