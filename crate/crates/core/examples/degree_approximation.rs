//! Wheel moments from m-degrees alone, against exact counting.

use netmoments::count::CountLimits;
use netmoments::moments::{moment_table_degree_approx, wheel_qcheck};
use netmoments::sampler::sample_block_model;
use netmoments::{BlockModel, WheelSpec};

fn main() -> netmoments::Result<()> {
    let n = 5000;
    let keys: Vec<WheelSpec> = ["wheel:k=1,l=2", "wheel:k=2,l=1", "wheel:k=2,l=2", "wheel:k=3,l=1"]
        .iter()
        .map(|k| k.parse())
        .collect::<Result<_, _>>()?;
    for lambda in [3.0, 30.0] {
        let model = BlockModel::erdos_renyi(lambda / (n as f64 - 1.0))?;
        let g = sample_block_model(&model, n, 5, false)?.into_graph();
        let approx = moment_table_degree_approx(&g, &keys, u64::MAX)?;
        println!("lambda {lambda}");
        for (key, e) in keys.iter().zip(&approx.entries) {
            let exact = wheel_qcheck(&g, key, &CountLimits::default())?;
            let a = e.q_check.unwrap_or(f64::NAN);
            println!("  {key:<16} exact {exact:.4}  degree formula {a:.4}  ratio {:.4}", a / exact);
        }
    }
    Ok(())
}
