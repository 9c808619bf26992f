//! Generate one replicate of a simulation design and write it as CSV files
//! that the `multirfm` binary (or any other tool) can read back.
//!
//! ```text
//! cargo run --example simulate_to_csv -- s1-nu3 /tmp/s1
//! ```

use std::path::PathBuf;

use multirfm::io::{read_dataset, write_dataset, write_parameters, write_scores};
use multirfm::simulation::{scenario_preset, simulate_replicate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "s1-nu3".to_string());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "simulated".to_string()));

    let spec = scenario_preset(&name)?.with_seed(42);
    let (data, truth) = simulate_replicate(&spec, 0)?;
    write_dataset(&out, &data)?;
    write_parameters(&out.join("truth"), &truth.params0)?;
    write_scores(&out.join("truth"), &truth.f, &truth.h)?;

    let back = read_dataset(&[out.clone()])?;
    assert_eq!(back.studies(), data.studies());
    for s in 0..data.n_studies() {
        println!("X_{}.csv: {} x {}", s + 1, data.n_obs(s), data.n_vars());
    }
    println!("error law {:?}, finite covariance: {}", spec.error_law, truth.covariance_defined);
    println!("written to {} and read back exactly", out.display());
    Ok(())
}
