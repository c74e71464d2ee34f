//! Run a small parameter sweep from an inline JSON config.

use netmoments::cli::{run_sweep, SweepConfig};
use netmoments::count::CountLimits;
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg: SweepConfig = serde_json::from_value(json!({
        "name": "density",
        "models": [
            {"name": "er", "block": {"K": 1, "pi": [1.0], "S": [[1.0]], "rho": 0.01}},
            {"name": "two-block", "block": {"K": 2, "pi": [0.5, 0.5], "S": [[2.0, 0.5], [0.5, 1.0]], "rho": 0.01}}
        ],
        "n": [500, 1000],
        "lambda": [10.0],
        "replicates": 2,
        "metrics": ["rho_hat", "qcheck", "tau"],
        "keys": ["wheel:k=2,l=1"]
    }))?;
    for line in run_sweep(&cfg, 2024, &CountLimits::default())? {
        println!("{}", serde_json::to_string(&line)?);
    }
    Ok(())
}
