//! Empirical wheel moments of a sampled graph next to their population values.

use netmoments::count::CountLimits;
use netmoments::moments::{moment_table, CountMode};
use netmoments::sampler::sample_block_model;
use netmoments::theory::tau_block;
use netmoments::{BlockModel, PatternSpec, WheelSpec};

fn main() -> netmoments::Result<()> {
    let n = 3000;
    let model = BlockModel::new(vec![0.5, 0.5], vec![vec![2.0, 0.5], vec![0.5, 1.0]], 20.0 / (n as f64 - 1.0))?;
    let g = sample_block_model(&model, n, 3, false)?.into_graph();

    let keys = ["wheel:k=1,l=2", "wheel:k=2,l=1", "wheel:k=2,l=2", "wheel:k=1/2,l=1/1"];
    let specs: Vec<PatternSpec> = keys.iter().map(|k| k.parse()).collect::<Result<_, _>>()?;
    let table = moment_table(&g, &specs, CountMode::Both, &CountLimits::default())?;

    println!("lambda_hat = {:.2}", g.lambda_hat());
    println!("{:<20} {:>12} {:>9} {:>9} {:>9}", "pattern", "raw", "P-check", "Q-check", "tau");
    for (key, e) in keys.iter().zip(&table.entries) {
        let w: WheelSpec = key.parse()?;
        println!(
            "{:<20} {:>12} {:>9.4} {:>9.4} {:>9.4}",
            e.pattern,
            e.raw_count.unwrap_or(0),
            e.p_check.unwrap_or(f64::NAN),
            e.q_check.unwrap_or(f64::NAN),
            tau_block(&model, &w)
        );
    }
    Ok(())
}
