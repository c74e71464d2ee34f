//! Population moments of block models and gridded graphons.
//!
//! For a wheel key `(k, l)` the normalized moment is
//! `tau = E prod_j [T_w^{k_j} 1 (xi)]^{l_j}`, where `T_w` is the integral
//! operator of the normalized graphon. On block-constant functions `T_w`
//! acts as `M = S diag(pi)`.

use crate::model::{BlockModel, Graphon};
use crate::moments::{MomentEntry, MomentTable};
use crate::pattern::{PatternGraph, PatternSpec, WheelSpec};

/// Moment keys are wheel descriptors.
pub type MomentKey = WheelSpec;

/// `T_w^j 1` evaluated per unit (block or grid cell), `j = 1..=J`, together
/// with the probability weight of each unit.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorIterates {
    /// `values[j - 1][a]` is `T_w^j 1` on unit `a`.
    pub values: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl OperatorIterates {
    pub fn depth(&self) -> usize {
        self.values.len()
    }

    pub fn units(&self) -> usize {
        self.weights.len()
    }

    /// `T_w^j 1` on every unit; `j = 0` is the constant function.
    pub fn iterate(&self, j: usize) -> Vec<f64> {
        if j == 0 {
            vec![1.0; self.units()]
        } else {
            self.values[j - 1].clone()
        }
    }

    /// `sum_a weight_a prod_j (v^(k_j)_a)^(l_j)`.
    pub fn tau(&self, key: &MomentKey) -> f64 {
        assert!(key.max_k() <= self.depth(), "iterates too shallow for {key}");
        (0..self.units())
            .map(|a| {
                let prod: f64 = key
                    .classes()
                    .map(|(k, l)| self.values[k - 1][a].powi(l as i32))
                    .product();
                self.weights[a] * prod
            })
            .sum()
    }
}

/// `v^(1)_a = sum_b S_ab pi_b`, `v^(j) = M v^(j-1)` with `M = S diag(pi)`.
pub fn iterate_operator_block(m: &BlockModel, depth: usize) -> OperatorIterates {
    let k = m.k();
    let pi = m.pi();
    let mut values = Vec::with_capacity(depth);
    let mut prev = vec![1.0; k];
    for _ in 0..depth {
        let next: Vec<f64> = (0..k)
            .map(|a| (0..k).map(|b| m.s(a, b) * pi[b] * prev[b]).sum())
            .collect();
        values.push(next.clone());
        prev = next;
    }
    OperatorIterates { values, weights: pi.to_vec() }
}

/// Midpoint-rule iterates of `T_w` on the grid. With `truncate_at = Some(c)`
/// the kernel is `min(w, c)`, matching the sampler's clipping at `c = 1/rho`.
pub fn iterate_operator_graphon(w: &Graphon, depth: usize, truncate_at: Option<f64>) -> OperatorIterates {
    let g = w.resolution();
    let h = 1.0 / g as f64;
    let kernel = |i: usize, j: usize| {
        let v = w.cell(i, j);
        truncate_at.map_or(v, |c| v.min(c))
    };
    let mut values = Vec::with_capacity(depth);
    let mut prev = vec![1.0; g];
    for _ in 0..depth {
        let next: Vec<f64> = (0..g)
            .map(|i| h * (0..g).map(|j| kernel(i, j) * prev[j]).sum::<f64>())
            .collect();
        values.push(next.clone());
        prev = next;
    }
    OperatorIterates { values, weights: vec![h; g] }
}

pub fn tau_block(m: &BlockModel, key: &MomentKey) -> f64 {
    iterate_operator_block(m, key.max_k()).tau(key)
}

/// A grid moment with the change against the half-resolution grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMoment {
    pub value: f64,
    /// `|tau(G) - tau(G/2)|`; `None` when the resolution is odd.
    pub refinement_error: Option<f64>,
}

pub fn tau_graphon(w: &Graphon, key: &MomentKey) -> GridMoment {
    tau_graphon_truncated(w, key, None)
}

pub fn tau_graphon_truncated(w: &Graphon, key: &MomentKey, truncate_at: Option<f64>) -> GridMoment {
    let value = iterate_operator_graphon(w, key.max_k(), truncate_at).tau(key);
    let refinement_error = w
        .coarsened()
        .map(|c| (iterate_operator_graphon(&c, key.max_k(), truncate_at).tau(key) - value).abs());
    GridMoment { value, refinement_error }
}

/// Normalized triangle moment `sum_abc pi_a pi_b pi_c S_ab S_bc S_ca`.
pub fn triangle_moment_block(m: &BlockModel) -> f64 {
    let k = m.k();
    let pi = m.pi();
    let mut acc = 0.0;
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                acc += pi[a] * pi[b] * pi[c] * m.s(a, b) * m.s(b, c) * m.s(c, a);
            }
        }
    }
    acc
}

/// `int int w2(u, v) w(v, u) du dv` with `w2 = T_w` kernel squared, i.e.
/// `trace(W^3) / G^3`.
pub fn triangle_moment_graphon(w: &Graphon) -> f64 {
    let g = w.resolution();
    let mut w2 = vec![0.0; g * g];
    for i in 0..g {
        for k in 0..g {
            let wik = w.cell(i, k);
            if wik == 0.0 {
                continue;
            }
            for j in 0..g {
                w2[i * g + j] += wik * w.cell(k, j);
            }
        }
    }
    let trace: f64 = (0..g)
        .map(|i| (0..g).map(|j| w2[i * g + j] * w.cell(j, i)).sum::<f64>())
        .sum();
    trace / (g * g * g) as f64
}

/// Normalized moment `P(all edges of R present) / rho^q` for an arbitrary
/// pattern under a block model, by summing over block assignments.
pub fn tau_pattern_block(m: &BlockModel, r: &PatternGraph) -> f64 {
    let k = m.k();
    let p = r.p();
    let pi = m.pi();
    let mut assign = vec![0usize; p];
    let mut total = 0.0;
    loop {
        let mut term: f64 = assign.iter().map(|&a| pi[a]).product();
        for &(u, v) in r.edges() {
            term *= m.s(assign[u], assign[v]);
        }
        total += term;
        let mut i = 0;
        while i < p {
            assign[i] += 1;
            if assign[i] < k {
                break;
            }
            assign[i] = 0;
            i += 1;
        }
        if i == p {
            break;
        }
    }
    total
}

/// Theoretical moment table of a block model; only the `tau` column is set.
pub fn theoretical_table(m: &BlockModel, patterns: &[PatternSpec]) -> MomentTable {
    let entries = patterns
        .iter()
        .map(|spec| {
            let tau = match spec {
                PatternSpec::Wheel(w) => tau_block(m, w),
                PatternSpec::Graph(r) => tau_pattern_block(m, r),
            };
            MomentEntry::theoretical(spec, tau)
        })
        .collect();
    MomentTable::theoretical(m.rho(), entries)
}

/// `T_w^j 1` at each vertex's latent block, for `j = 1..=depth`.
pub fn iterates_at_blocks(m: &BlockModel, blocks: &[usize], depth: usize) -> Vec<Vec<f64>> {
    let it = iterate_operator_block(m, depth);
    blocks
        .iter()
        .map(|&b| (0..depth).map(|j| it.values[j][b]).collect())
        .collect()
}
