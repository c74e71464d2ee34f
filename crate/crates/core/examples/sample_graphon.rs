//! Sample from a gridded graphon and write the edge list to stdout.

use netmoments::sampler::sample_graphon;
use netmoments::Graphon;

fn main() -> netmoments::Result<()> {
    // w(x, y) = 2(x + y) on a 4x4 grid, rescaled to integrate to one
    let r = 4;
    let rows: Vec<Vec<f64>> = (0..r)
        .map(|i| (0..r).map(|j| (i + j + 1) as f64 / r as f64).collect())
        .collect();
    let w = Graphon::new(rows)?;
    println!("# marginals {:?}", w.marginals());

    let n = 300;
    let out = sample_graphon(&w, 8.0 / (n as f64 - 1.0), n, 11, true)?;
    let g = out.graph();
    println!("# n = {}, edges = {}, max degree = {}", g.n(), g.edge_count(), g.max_degree());
    g.write_edge_list(std::io::stdout().lock())
}
