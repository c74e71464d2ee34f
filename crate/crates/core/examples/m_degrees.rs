//! m-step degree profiles and their coupling distance to the latent iterates.

use netmoments::degrees::{joint_coupling_error, m_degrees, theta_profile, LatentModel};
use netmoments::sampler::sample_block_model;
use netmoments::BlockModel;

fn main() -> netmoments::Result<()> {
    let m = 3;
    for lambda in [5.0, 20.0, 80.0] {
        let n = 5000;
        let model = BlockModel::new(vec![0.5, 0.5], vec![vec![2.0, 0.5], vec![0.5, 1.0]], lambda / (n as f64 - 1.0))?;
        let out = sample_block_model(&model, n, 9, true)?;
        let profile = m_degrees(out.graph(), m, u64::MAX)?;
        let blocks = out.blocks.as_ref().expect("latents kept");
        let theta = theta_profile(LatentModel::Block(&model, blocks), m);
        let err = joint_coupling_error(&profile, &theta)?;

        let means: Vec<f64> = (1..=m)
            .map(|j| {
                let col = profile.normalized(j);
                col.iter().sum::<f64>() / col.len() as f64
            })
            .collect();
        println!("lambda {lambda:>5}: normalized means {means:.3?}, coupling error {err:.4}");
    }
    Ok(())
}
