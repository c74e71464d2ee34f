//! Recover a two-block model from wheel moments of one sampled graph.

use netmoments::blockfit::{fit_block_model, FitConfig};
use netmoments::sampler::sample_block_model;
use netmoments::BlockModel;

fn main() -> netmoments::Result<()> {
    let n = 4000;
    let truth = BlockModel::new(vec![0.5, 0.5], vec![vec![2.0, 0.5], vec![0.5, 1.0]], 20.0 / (n as f64 - 1.0))?;
    let g = sample_block_model(&truth, n, 42, false)?.into_graph();

    let fit = fit_block_model(&g, &FitConfig::new(2))?;
    // fits come back in canonical block order
    let truth = truth.canonical();
    println!("pi  true {:?}  fitted {:.4?}", truth.pi(), fit.pi);
    println!("S   true {:?}", truth.s_rows());
    println!("    fitted {:.4?}", fit.s);
    if let Some(d) = &fit.direct {
        println!("direct inversion pi {:.4?}", d.pi);
    }
    println!("residual {:.3e}, converged {}", fit.residual, fit.converged);
    println!("hankel conditions {:.3?}, heterogeneity z {:.2?}", fit.diagnostics.hankel_condition, fit.diagnostics.heterogeneity_z);
    for w in &fit.diagnostics.warnings {
        println!("warning: {w}");
    }
    for ((k, hat), fitted) in fit.keys.iter().zip(&fit.tau_hat).zip(&fit.tau_fit) {
        println!("{k:<16} observed {hat:.4}  model {fitted:.4}");
    }
    Ok(())
}
