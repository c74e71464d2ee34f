//! Subsampling variance of a checked wheel moment, reusing one count cache.

use netmoments::bootstrap::{bootstrap_variance, default_subsample, BootstrapConfig, HubCountCache};
use netmoments::count::CountLimits;
use netmoments::sampler::sample_block_model;
use netmoments::{BlockModel, WheelSpec};

fn main() -> netmoments::Result<()> {
    let n = 2000;
    let model = BlockModel::new(vec![0.5, 0.5], vec![vec![2.0, 0.5], vec![0.5, 1.0]], 20.0 / (n as f64 - 1.0))?;
    let g = sample_block_model(&model, n, 1, false)?.into_graph();

    let keys: Vec<WheelSpec> = vec!["wheel:k=1,l=2".parse()?, "wheel:k=2,l=1".parse()?];
    let cache = HubCountCache::build(&g, &keys, &CountLimits::default())?;

    println!("default m = {}", default_subsample(n));
    for key in &keys {
        let cfg = BootstrapConfig { b: 300, seed: 17, ..Default::default() };
        let r = bootstrap_variance(&cache, key, &cfg)?;
        let q = &r.replicates_summary.quantiles;
        println!(
            "{}: estimate {:.4}, sigma2_hat {:.4e}, replicate median {:.4} [{:.4}, {:.4}]",
            r.key, r.estimate, r.sigma2_hat, q[2], q[0], q[4]
        );
    }
    Ok(())
}
