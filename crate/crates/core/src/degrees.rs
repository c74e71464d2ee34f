//! Loopless path counts ("m-degrees") and their limits.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Vertex};
use crate::model::{BlockModel, Graphon};
use crate::pattern::WheelSpec;
use crate::theory::{iterate_operator_block, iterate_operator_graphon};

/// `counts[j - 1][i]` is the number of loopless paths of length `j`
/// starting at vertex `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeProfile {
    pub m: usize,
    pub counts: Vec<Vec<u64>>,
}

impl DegreeProfile {
    pub fn n(&self) -> usize {
        self.counts.first().map_or(0, |c| c.len())
    }

    /// Mean degree `D_bar`.
    pub fn mean_degree(&self) -> f64 {
        let s: u64 = self.counts[0].iter().sum();
        s as f64 / self.n() as f64
    }

    /// Column `j` divided by `D_bar^j`.
    pub fn normalized(&self, j: usize) -> Vec<f64> {
        let scale = self.mean_degree().powi(j as i32);
        self.counts[j - 1].iter().map(|&c| c as f64 / scale).collect()
    }

    /// `(D_i^(1) / D_bar, ..., D_i^(m) / D_bar^m)` per vertex.
    pub fn normalized_rows(&self) -> Vec<Vec<f64>> {
        let cols: Vec<Vec<f64>> = (1..=self.m).map(|j| self.normalized(j)).collect();
        (0..self.n()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
    }

    /// Per-vertex CSV rows `vertex,D1,...,Dm` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("vertex");
        for j in 1..=self.m {
            out.push_str(&format!(",D{j}"));
        }
        out.push('\n');
        for i in 0..self.n() {
            out.push_str(&i.to_string());
            for j in 0..self.m {
                out.push_str(&format!(",{}", self.counts[j][i]));
            }
            out.push('\n');
        }
        out
    }
}

fn extend_paths(g: &Graph, path: &mut Vec<Vertex>, m: usize, counts: &mut [u64], nodes: &mut u64) {
    *nodes += 1;
    let depth = path.len() - 1;
    let tip = *path.last().unwrap();
    if depth + 1 == m {
        // count the final step without descending
        let back = path[..depth]
            .iter()
            .filter(|&&x| g.has_edge(x, tip))
            .count();
        counts[depth] += (g.degree(tip) - back) as u64;
        return;
    }
    for &v in g.neighbors(tip) {
        if path.contains(&v) {
            continue;
        }
        counts[depth] += 1;
        path.push(v);
        extend_paths(g, path, m, counts, nodes);
        path.pop();
    }
}

/// Loopless path counts of lengths `1..=m` from every vertex, by depth-first
/// enumeration. `budget` caps the total number of search nodes.
pub fn m_degrees(g: &Graph, m: usize, budget: u64) -> Result<DegreeProfile> {
    if m == 0 {
        return Err(Error::Domain("m must be at least 1".into()));
    }
    let n = g.n();
    let spent = AtomicU64::new(0);
    let rows: Vec<(Vec<u64>, u64)> = (0..n as Vertex)
        .into_par_iter()
        .map(|i| {
            let mut counts = vec![0u64; m];
            let mut nodes = 0;
            if spent.load(Ordering::Relaxed) <= budget {
                let mut path = Vec::with_capacity(m + 1);
                path.push(i);
                extend_paths(g, &mut path, m, &mut counts, &mut nodes);
                spent.fetch_add(nodes, Ordering::Relaxed);
            }
            (counts, nodes)
        })
        .collect();
    if spent.load(Ordering::Relaxed) > budget {
        return Err(Error::Budget(format!("m-degree search exceeded {budget} nodes")));
    }
    let counts = (0..m).map(|j| rows.iter().map(|r| r.0[j]).collect()).collect();
    Ok(DegreeProfile { m, counts })
}

/// Limit profile `theta_m(xi) = (T 1, T^2 1, ..., T^m 1)(xi)` per vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaProfile {
    pub m: usize,
    pub values: Vec<Vec<f64>>,
}

/// Where to evaluate `theta_m`.
pub enum LatentModel<'a> {
    /// Block model with each vertex's block label.
    Block(&'a BlockModel, &'a [usize]),
    /// Gridded graphon with each vertex's latent position.
    Graphon(&'a Graphon, &'a [f64]),
}

pub fn theta_profile(model: LatentModel<'_>, m: usize) -> ThetaProfile {
    let values = match model {
        LatentModel::Block(bm, blocks) => {
            let it = iterate_operator_block(bm, m);
            blocks.iter().map(|&b| (0..m).map(|j| it.values[j][b]).collect()).collect()
        }
        LatentModel::Graphon(w, xi) => {
            let it = iterate_operator_graphon(w, m, None);
            xi.iter()
                .map(|&x| {
                    let c = w.cell_of(x);
                    (0..m).map(|j| it.values[j][c]).collect()
                })
                .collect()
        }
    };
    ThetaProfile { m, values }
}

/// `(1/n) sum_i |D_tilde_i - theta_m(xi_i)|^2`.
pub fn joint_coupling_error(profile: &DegreeProfile, theta: &ThetaProfile) -> Result<f64> {
    if profile.n() != theta.values.len() {
        return Err(Error::Alignment(format!(
            "{} degree rows against {} latent rows",
            profile.n(),
            theta.values.len()
        )));
    }
    if profile.m != theta.m {
        return Err(Error::Alignment(format!("depth {} against {}", profile.m, theta.m)));
    }
    let rows = profile.normalized_rows();
    let n = rows.len() as f64;
    Ok(rows
        .iter()
        .zip(&theta.values)
        .map(|(d, t)| d.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / n)
}

/// Mallows 2-distance between two empirical distributions on the line,
/// through the quantile coupling.
pub fn mallows2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("empty sample".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    if x.len() == y.len() {
        let s: f64 = x.iter().zip(&y).map(|(u, v)| (u - v) * (u - v)).sum();
        return Ok((s / x.len() as f64).sqrt());
    }
    // integrate (F^-1 - G^-1)^2 over the merged quantile breakpoints
    let (na, nb) = (x.len(), y.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0f64;
    let mut acc = 0.0;
    while i < na && j < nb {
        let next_a = (i + 1) as f64 / na as f64;
        let next_b = (j + 1) as f64 / nb as f64;
        let step = next_a.min(next_b);
        let d = x[i] - y[j];
        acc += (step - u) * d * d;
        u = step;
        // exact rational comparison avoids drift at coinciding breakpoints
        match ((i + 1) * nb).cmp(&((j + 1) * na)) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    Ok(acc.sqrt())
}

fn falling_factorial(x: u64, l: usize) -> Option<u128> {
    (0..l as u64).try_fold(1u128, |acc, i| acc.checked_mul(x.saturating_sub(i) as u128))
}

/// `(1/n) sum_i prod_j (D_i^(k_j))_(l_j) / D_bar^q`, with `(x)_l` the
/// falling factorial.
pub fn degree_moment_approx(profile: &DegreeProfile, key: &WheelSpec) -> Result<f64> {
    if key.max_k() > profile.m {
        return Err(Error::Domain(format!(
            "profile has {} columns, {key} needs {}",
            profile.m,
            key.max_k()
        )));
    }
    let n = profile.n();
    let numerator = exact_numerator(profile, key).map(|v| v as f64).unwrap_or_else(|| {
        (0..n)
            .map(|i| {
                key.classes()
                    .map(|(k, l)| {
                        let d = profile.counts[k - 1][i] as f64;
                        (0..l).map(|t| (d - t as f64).max(0.0)).product::<f64>()
                    })
                    .product::<f64>()
            })
            .sum()
    });
    let degree_sum: u64 = profile.counts[0].iter().sum();
    if degree_sum == 0 {
        return Err(Error::Normalization("graph has no edges".into()));
    }
    // numerator / (n * (S/n)^q) = numerator * n^(q-1) / S^q
    let q = key.q() as i32;
    Ok(numerator / (degree_sum as f64).powi(q) * (n as f64).powi(q - 1))
}

/// `sum_i prod_j (D_i^(k_j))_(l_j)` in exact integers, `None` on overflow.
pub fn exact_numerator(profile: &DegreeProfile, key: &WheelSpec) -> Option<u128> {
    (0..profile.n()).try_fold(0u128, |acc, i| {
        let term = key
            .classes()
            .try_fold(1u128, |t, (k, l)| t.checked_mul(falling_factorial(profile.counts[k - 1][i], l)?))?;
        acc.checked_add(term)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::count::{wheel_counts_per_hub, CountLimits};
    use crate::sampler::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    const BUDGET: u64 = u64::MAX;

    #[test]
    fn cycle_and_path_examples() {
        let c4 = m_degrees(&Graph::cycle(4), 2, BUDGET).unwrap();
        assert_eq!(c4.counts[1], vec![2, 2, 2, 2]);
        let p4 = m_degrees(&Graph::path(4), 3, BUDGET).unwrap();
        assert_eq!(p4.counts[2][0], 1);
        assert_eq!(p4.counts[2][1], 0);
        assert_eq!(p4.counts[0], vec![1, 2, 2, 1]);
    }

    #[test]
    fn budget_is_enforced() {
        let err = m_degrees(&Graph::complete(8), 4, 10).unwrap_err();
        assert!(matches!(err, Error::Budget(_)));
    }

    #[test]
    fn theta_reference_and_constant() {
        let m = BlockModel::new(vec![0.5, 0.5], vec![vec![2.0, 0.5], vec![0.5, 1.0]], 0.01).unwrap();
        let th = theta_profile(LatentModel::Block(&m, &[0, 1]), 2);
        assert_eq!(th.values[0], vec![1.25, 1.4375]);
        assert_eq!(th.values[1], vec![0.75, 0.6875]);
        let w = Graphon::constant(4);
        let th = theta_profile(LatentModel::Graphon(&w, &[0.1, 0.9]), 3);
        assert!(th.values.iter().flatten().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn coupling_error_self_and_mismatch() {
        let p = m_degrees(&Graph::cycle(7), 2, BUDGET).unwrap();
        let theta = ThetaProfile { m: 2, values: p.normalized_rows() };
        assert_eq!(joint_coupling_error(&p, &theta).unwrap(), 0.0);
        let short = ThetaProfile { m: 2, values: theta.values[..3].to_vec() };
        assert!(matches!(joint_coupling_error(&p, &short), Err(Error::Alignment(_))));
    }

    #[test]
    fn mallows_examples() {
        assert_eq!(mallows2_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mallows2_1d(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(mallows2_1d(&[], &[1.0]).is_err());
        // one point vs two points: (0-0)^2/2 + (0-2)^2/2 = 2
        assert!((mallows2_1d(&[0.0], &[0.0, 2.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        // repeating a sample does not change its distribution
        let a = [0.3, 1.7, -2.0];
        let aa = [0.3, 1.7, -2.0, 0.3, 1.7, -2.0];
        assert!(mallows2_1d(&a, &aa).unwrap() < 1e-15);
    }

    #[test]
    fn falling_factorial_arithmetic() {
        assert_eq!(falling_factorial(5, 3), Some(60));
        assert_eq!(falling_factorial(2, 3), Some(0));
        let p = m_degrees(&Graph::cycle(9), 1, BUDGET).unwrap();
        assert_eq!(degree_moment_approx(&p, &WheelSpec::simple(1, 1).unwrap()).unwrap(), 1.0);
    }

    fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
        let mut rng = rng_from_seed(seed);
        let edges: Vec<(Vertex, Vertex)> = (0..n as Vertex)
            .flat_map(|i| (i + 1..n as Vertex).map(move |j| (i, j)))
            .filter(|_| rng.gen::<f64>() < p)
            .collect();
        Graph::from_edges(n, edges).unwrap()
    }

    fn random_tree(n: usize, seed: u64) -> Graph {
        let mut rng = rng_from_seed(seed);
        let edges: Vec<(Vertex, Vertex)> = (1..n).map(|i| (rng.gen_range(0..i) as Vertex, i as Vertex)).collect();
        Graph::from_edges(n, edges).unwrap()
    }

    #[test]
    fn tree_numerators_match_hub_counts() {
        for seed in 0..20 {
            let g = random_tree(60, seed);
            let p = m_degrees(&g, 1, BUDGET).unwrap();
            for l in 1..=4 {
                let key = WheelSpec::simple(1, l).unwrap();
                let hubs: u128 = wheel_counts_per_hub(&g, &key, &CountLimits::default()).unwrap().iter().sum();
                let lf: u128 = (1..=l as u128).product();
                assert_eq!(exact_numerator(&p, &key).unwrap(), lf * hubs);
            }
        }
    }

    fn brute_paths(g: &Graph, start: Vertex, m: usize) -> Vec<u64> {
        let mut out = vec![0u64; m];
        fn rec(g: &Graph, path: &mut Vec<Vertex>, m: usize, out: &mut [u64]) {
            if path.len() > 1 {
                out[path.len() - 2] += 1;
            }
            if path.len() == m + 1 {
                return;
            }
            for v in 0..g.n() as Vertex {
                if !path.contains(&v) && g.has_edge(*path.last().unwrap(), v) {
                    path.push(v);
                    rec(g, path, m, out);
                    path.pop();
                }
            }
        }
        rec(g, &mut vec![start], m, &mut out);
        out
    }

    proptest! {
        #[test]
        fn matches_brute_force(seed in 0u64..100_000, n in 1usize..9, m in 1usize..5) {
            let g = random_graph(n, 0.5, seed);
            let p = m_degrees(&g, m, BUDGET).unwrap();
            prop_assert_eq!(&p.counts[0], &g.degrees());
            for i in 0..n {
                let b = brute_paths(&g, i as Vertex, m);
                for j in 0..m {
                    prop_assert_eq!(p.counts[j][i], b[j]);
                }
            }
        }

        #[test]
        fn mallows_translation(xs in prop::collection::vec(-10.0f64..10.0, 1..30), c in -5.0f64..5.0) {
            let ys: Vec<f64> = xs.iter().map(|x| x + c).collect();
            prop_assert!((mallows2_1d(&xs, &ys).unwrap() - c.abs()).abs() < 1e-9);
        }
    }
}
