//! Induced and noninduced subgraph counts for a handful of small patterns.

use netmoments::count::{count_induced, count_noninduced};
use netmoments::{Graph, PatternGraph};

fn main() -> netmoments::Result<()> {
    // the Petersen graph
    let outer = (0..5).map(|i| (i, (i + 1) % 5));
    let spokes = (0..5).map(|i| (i, i + 5));
    let inner = (0..5).map(|i| (i + 5, (i + 2) % 5 + 5));
    let g = Graph::from_edges(10, outer.chain(spokes).chain(inner))?;

    let patterns = [
        ("edge", PatternGraph::edge()),
        ("2-star", PatternGraph::two_star()),
        ("triangle", PatternGraph::triangle()),
        ("4-path", PatternGraph::new(4, &[(0, 1), (1, 2), (2, 3)])?),
        ("4-cycle", PatternGraph::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0)])?),
        ("5-cycle", PatternGraph::new(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)])?),
    ];
    println!("{:<10} {:>6} {:>10} {:>8}", "pattern", "|Aut|", "noninduced", "induced");
    for (name, r) in &patterns {
        println!(
            "{:<10} {:>6} {:>10} {:>8}",
            name,
            r.automorphism_count(),
            count_noninduced(&g, r)?,
            count_induced(&g, r)?
        );
    }
    Ok(())
}
