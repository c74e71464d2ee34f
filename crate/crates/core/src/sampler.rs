//! Reproducible sampling from block models and graphons.
//!
//! All randomness comes from one ChaCha8 stream seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`: first the `n` latent positions, then
//! the pair loop. Pairs are visited in lexicographic `(i, j)`, `i < j`
//! order with geometric skipping at the largest pair probability and
//! thinning to each pair's own probability, so the output depends only on
//! the seed and the model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Vertex};
use crate::model::{BlockLocator, BlockModel, Graphon};

/// The generator used everywhere a seed is accepted.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under the same seed.
pub fn rng_stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleOutput {
    #[serde(skip)]
    pub graph: Option<Graph>,
    /// Latent positions, when requested.
    pub xi: Option<Vec<f64>>,
    /// Block label of each vertex (block models only, when latents are kept).
    pub blocks: Option<Vec<usize>>,
    pub seed: u64,
}

impl SampleOutput {
    pub fn graph(&self) -> &Graph {
        self.graph.as_ref().expect("sample output carries its graph")
    }

    pub fn into_graph(self) -> Graph {
        self.graph.expect("sample output carries its graph")
    }
}

/// Uniform draw from the open interval `(0, 1)`.
#[inline]
pub fn open_uniform<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Visits candidate pairs in lexicographic order, skipping geometrically at
/// rate `p_max` and accepting each candidate with `prob(i, j) / p_max`.
fn sample_pairs<F>(n: usize, p_max: f64, rng: &mut SeededRng, mut prob: F) -> Vec<(Vertex, Vertex)>
where
    F: FnMut(usize, usize) -> f64,
{
    let mut edges = Vec::new();
    if n < 2 || !(p_max > 0.0) {
        return edges;
    }
    let p_max = p_max.min(1.0);
    let log_q = (-p_max).ln_1p();
    let n64 = n as u64;
    // (i, j) is the last visited pair; start just before (0, 1).
    let (mut i, mut j) = (0u64, 0u64);
    loop {
        let skip = if p_max >= 1.0 {
            0
        } else {
            let u = open_uniform(rng);
            let s = (u.ln() / log_q).floor();
            if s >= (n64 * n64) as f64 {
                break;
            }
            s as u64
        };
        j += skip + 1;
        while j >= n64 {
            i += 1;
            if i + 1 >= n64 {
                return edges;
            }
            j = j - n64 + i + 1;
        }
        let p = prob(i as usize, j as usize);
        let accept = if p >= p_max { true } else { rng.gen::<f64>() * p_max < p };
        if accept {
            edges.push((i as Vertex, j as Vertex));
        }
    }
    edges
}

/// Samples `n` vertices from a block model. Each vertex draws a uniform
/// latent position whose canonical block interval fixes its block.
pub fn sample_block_model(m: &BlockModel, n: usize, seed: u64, keep_latents: bool) -> Result<SampleOutput> {
    if n < 2 {
        return Err(Error::Domain(format!("need n >= 2, got {n}")));
    }
    if m.rho() * m.max_s() > 1.0 + 1e-12 {
        return Err(Error::InvalidModel("rho * max S exceeds 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let xi: Vec<f64> = (0..n).map(|_| open_uniform(&mut rng)).collect();
    let locator = BlockLocator::new(m);
    let blocks: Vec<usize> = xi.iter().map(|&x| locator.block_of(x)).collect();
    let k = m.k();
    let probs: Vec<f64> = (0..k * k).map(|ab| m.edge_probability(ab / k, ab % k)).collect();
    let p_max = probs.iter().cloned().fold(0.0, f64::max);
    let edges = sample_pairs(n, p_max, &mut rng, |i, j| probs[blocks[i] * k + blocks[j]]);
    let graph = Graph::from_sorted_unique(n, &edges);
    Ok(SampleOutput {
        graph: Some(graph),
        xi: keep_latents.then_some(xi),
        blocks: keep_latents.then_some(blocks),
        seed,
    })
}

/// Samples from a gridded graphon with edge probability
/// `min(rho * w(xi_i, xi_j), 1)`.
pub fn sample_graphon(w: &Graphon, rho: f64, n: usize, seed: u64, keep_latents: bool) -> Result<SampleOutput> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Domain(format!("rho must lie in (0, 1], got {rho}")));
    }
    if n < 2 {
        return Err(Error::Domain(format!("need n >= 2, got {n}")));
    }
    let mut rng = rng_from_seed(seed);
    let xi: Vec<f64> = (0..n).map(|_| open_uniform(&mut rng)).collect();
    let cells: Vec<usize> = xi.iter().map(|&x| w.cell_of(x)).collect();
    let p_max = (rho * w.max_value()).min(1.0);
    let edges = sample_pairs(n, p_max, &mut rng, |i, j| (rho * w.cell(cells[i], cells[j])).min(1.0));
    Ok(SampleOutput {
        graph: Some(Graph::from_sorted_unique(n, &edges)),
        xi: keep_latents.then_some(xi),
        blocks: None,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::blockmodel_to_graphon;

    fn reference(rho: f64) -> BlockModel {
        BlockModel::new(vec![0.5, 0.5], vec![vec![2.0, 0.5], vec![0.5, 1.0]], rho).unwrap()
    }

    #[test]
    fn pair_walk_visits_every_pair_in_order() {
        let mut rng = rng_from_seed(1);
        let mut seen = Vec::new();
        let edges = sample_pairs(5, 1.0, &mut rng, |i, j| {
            seen.push((i, j));
            1.0
        });
        let expected: Vec<_> = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).collect();
        assert_eq!(seen, expected);
        assert_eq!(edges.len(), 10);
    }

    #[test]
    fn er_pair_frequency() {
        let m = BlockModel::erdos_renyi(0.5).unwrap();
        let reps = 4000;
        let hits = (0..reps)
            .filter(|&s| sample_block_model(&m, 2, s, false).unwrap().graph().edge_count() == 1)
            .count();
        let f = hits as f64 / reps as f64;
        assert!((f - 0.5).abs() < 4.0 * (0.25 / reps as f64).sqrt(), "frequency {f}");
    }

    #[test]
    fn reference_density_within_three_sd() {
        let n = 10_000usize;
        let out = sample_block_model(&reference(0.01), n, 42, false).unwrap();
        let pairs = (n * (n - 1) / 2) as f64;
        let rho_hat = out.graph().rho_hat().unwrap();
        let sd = (0.01 * 0.99 / pairs).sqrt();
        // block proportions add variance on top of the binomial term:
        // d(pi' S pi)/d(pi_1) = 1 at pi = (.5, .5)
        let latent_sd = 0.01 * 0.5 / (n as f64).sqrt();
        assert!((rho_hat - 0.01).abs() < 3.0 * (sd * sd + latent_sd * latent_sd).sqrt(), "{rho_hat}");
    }

    #[test]
    fn zero_rho_is_empty() {
        for seed in 0..5 {
            let out = sample_block_model(&reference(0.0), 50, seed, false).unwrap();
            assert_eq!(out.graph().edge_count(), 0);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = sample_block_model(&reference(0.05), 300, 9, true).unwrap();
        let b = sample_block_model(&reference(0.05), 300, 9, true).unwrap();
        assert_eq!(a.graph(), b.graph());
        assert_eq!(a.xi, b.xi);
        let c = sample_block_model(&reference(0.05), 300, 10, true).unwrap();
        assert_ne!(a.graph(), c.graph());
    }

    #[test]
    fn latents_in_open_interval() {
        let out = sample_block_model(&reference(0.05), 500, 3, true).unwrap();
        let xi = out.xi.as_ref().unwrap();
        assert_eq!(xi.len(), 500);
        assert!(xi.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn constant_graphon_matches_er_probability() {
        let w = Graphon::constant(3);
        let er = BlockModel::erdos_renyi(0.05).unwrap();
        let a = sample_graphon(&w, 0.05, 400, 5, false).unwrap();
        let b = sample_block_model(&er, 400, 5, false).unwrap();
        assert_eq!(a.graph(), b.graph());
    }

    #[test]
    fn gridded_block_model_shares_pair_probabilities() {
        let m = reference(0.05);
        let w = blockmodel_to_graphon(&m, 2).unwrap();
        let a = sample_block_model(&m, 400, 11, true).unwrap();
        let b = sample_graphon(&w, 0.05, 400, 11, true).unwrap();
        assert_eq!(a.xi, b.xi);
        let (xi, blocks) = (a.xi.as_ref().unwrap(), a.blocks.as_ref().unwrap());
        for i in 0..50 {
            for j in 0..50 {
                let pb = m.edge_probability(blocks[i], blocks[j]);
                let pg = 0.05 * w.value(xi[i], xi[j]);
                assert!((pb - pg).abs() < 1e-15);
            }
        }
        assert_eq!(a.graph(), b.graph());
    }

    #[test]
    fn truncated_cells_always_connect() {
        let w = Graphon::new(vec![vec![1.6, 0.4], vec![0.4, 1.6]]).unwrap();
        // rho * 1.6 > 1: same-half pairs are certain
        let out = sample_graphon(&w, 0.8, 200, 2, true).unwrap();
        let xi = out.xi.as_ref().unwrap();
        for i in 0..200 {
            for j in i + 1..200 {
                if w.cell_of(xi[i]) == w.cell_of(xi[j]) {
                    assert!(out.graph().has_edge(i as Vertex, j as Vertex));
                }
            }
        }
    }

    #[test]
    fn pair_probability_monte_carlo() {
        // fixed pair (0, 1) across replicates, conditional on blocks
        let m = reference(0.2);
        let reps = 6000;
        let mut counts = [[0usize; 2]; 3];
        for s in 0..reps {
            let out = sample_block_model(&m, 2, s, true).unwrap();
            let b = out.blocks.unwrap();
            let key = b[0] + b[1];
            counts[key][0] += 1;
            counts[key][1] += out.graph.unwrap().edge_count() as usize;
        }
        for (key, p) in [(0, 0.4), (1, 0.1), (2, 0.2)] {
            let r = counts[key][0] as f64;
            let f = counts[key][1] as f64 / r;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / r).sqrt(), "key {key}: {f} vs {p}");
        }
    }
}
