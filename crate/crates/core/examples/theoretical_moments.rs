//! Population moments of a block model and of the equivalent step graphon.

use netmoments::model::blockmodel_to_graphon;
use netmoments::theory::{iterate_operator_block, tau_block, tau_graphon, triangle_moment_block};
use netmoments::{BlockModel, WheelSpec};

fn main() -> netmoments::Result<()> {
    let m = BlockModel::normalized(vec![0.3, 0.7], vec![vec![3.0, 0.4], vec![0.4, 1.2]], 0.01)?;
    let it = iterate_operator_block(&m, 3);
    for (j, v) in it.values.iter().enumerate() {
        println!("T^{} 1 = {:?}", j + 1, v);
    }

    let w = blockmodel_to_graphon(&m, 10)?;
    for key in ["wheel:k=1,l=2", "wheel:k=2,l=1", "wheel:k=3,l=1", "wheel:k=1/2,l=1/2"] {
        let spec: WheelSpec = key.parse()?;
        let grid = tau_graphon(&w, &spec);
        println!("{key:<20} block {:.6}  graphon {:.6}", tau_block(&m, &spec), grid.value);
    }
    println!("triangle density {:.6}", triangle_moment_block(&m));
    Ok(())
}
