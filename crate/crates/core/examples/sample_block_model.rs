//! Draw a sparse two-block graph and compare its edge density with the model.

use netmoments::sampler::sample_block_model;
use netmoments::BlockModel;

fn main() -> netmoments::Result<()> {
    let n = 2000;
    let lambda = 15.0;
    let model = BlockModel::new(vec![0.5, 0.5], vec![vec![2.0, 0.5], vec![0.5, 1.0]], lambda / (n as f64 - 1.0))?;

    let out = sample_block_model(&model, n, 7, true)?;
    let g = out.graph();
    let blocks = out.blocks.as_ref().expect("latents kept");
    let in_first = blocks.iter().filter(|&&b| b == 0).count();

    println!("n = {}, edges = {}", g.n(), g.edge_count());
    println!("rho = {:.3e}, rho_hat = {:.3e}", model.rho(), g.rho_hat()?);
    println!("mean degree {:.2} (target {lambda})", g.average_degree());
    println!("{in_first} vertices in block 0");

    // same seed, same graph
    let again = sample_block_model(&model, n, 7, false)?;
    assert_eq!(again.graph().edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
    Ok(())
}
