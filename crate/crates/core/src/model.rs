//! Block models and gridded graphons under the `h = rho * w` parametrization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-9;

/// `K`-block model with block probabilities `pi`, normalized intensities
/// `S` (`sum_ab pi_a pi_b S_ab = 1`) and edge scale `rho`, so that
/// `P(A_ij = 1 | i in a, j in b) = rho * S_ab`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BlockModelDoc", into = "BlockModelDoc")]
pub struct BlockModel {
    pi: Vec<f64>,
    s: Vec<f64>,
    rho: f64,
}

#[derive(Serialize, Deserialize)]
struct BlockModelDoc {
    #[serde(rename = "K")]
    k: usize,
    pi: Vec<f64>,
    #[serde(rename = "S")]
    s: Vec<Vec<f64>>,
    rho: f64,
}

impl TryFrom<BlockModelDoc> for BlockModel {
    type Error = Error;

    fn try_from(doc: BlockModelDoc) -> Result<Self> {
        if doc.pi.len() != doc.k {
            return Err(Error::InvalidModel(format!(
                "field \"pi\": expected {} entries, got {}",
                doc.k,
                doc.pi.len()
            )));
        }
        if doc.s.len() != doc.k || doc.s.iter().any(|r| r.len() != doc.k) {
            return Err(Error::InvalidModel(format!(
                "field \"S\": expected a {0}x{0} matrix",
                doc.k
            )));
        }
        BlockModel::new(doc.pi, doc.s, doc.rho)
    }
}

impl From<BlockModel> for BlockModelDoc {
    fn from(m: BlockModel) -> Self {
        BlockModelDoc { k: m.k(), s: m.s_rows(), pi: m.pi, rho: m.rho }
    }
}

impl BlockModel {
    /// Validates and builds a model. `S` must already satisfy the
    /// normalization `sum_ab pi_a pi_b S_ab = 1`.
    pub fn new(pi: Vec<f64>, s: Vec<Vec<f64>>, rho: f64) -> Result<Self> {
        let k = pi.len();
        if k == 0 {
            return Err(Error::InvalidModel("field \"pi\": at least one block required".into()));
        }
        if s.len() != k || s.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidModel(format!("field \"S\": expected a {k}x{k} matrix")));
        }
        if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidModel(
                "field \"pi\": block probabilities must be positive".into(),
            ));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidModel(format!("field \"pi\": sums to {total}, not 1")));
        }
        let flat: Vec<f64> = s.into_iter().flatten().collect();
        for a in 0..k {
            for b in 0..k {
                let v = flat[a * k + b];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidModel(format!("field \"S\": entry ({a},{b}) = {v}")));
                }
                if (v - flat[b * k + a]).abs() > NORM_TOL * v.abs().max(1.0) {
                    return Err(Error::InvalidModel("field \"S\": matrix is not symmetric".into()));
                }
            }
        }
        let mass = quadratic_form(&pi, &flat);
        if (mass - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidModel(format!(
                "field \"S\": sum_ab pi_a pi_b S_ab = {mass}, expected 1"
            )));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidModel(format!("field \"rho\": {rho} outside [0, 1]")));
        }
        let smax = flat.iter().cloned().fold(0.0, f64::max);
        if rho * smax > 1.0 + 1e-12 {
            return Err(Error::InvalidModel(format!(
                "field \"rho\": rho * max S = {} exceeds 1",
                rho * smax
            )));
        }
        Ok(BlockModel { pi, s: flat, rho })
    }

    /// Rescales an arbitrary nonnegative symmetric `S` so that the
    /// normalization holds, then validates.
    pub fn normalized(pi: Vec<f64>, s: Vec<Vec<f64>>, rho: f64) -> Result<Self> {
        let k = pi.len();
        if s.len() != k || s.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidModel(format!("field \"S\": expected a {k}x{k} matrix")));
        }
        let total: f64 = pi.iter().sum();
        let pi: Vec<f64> = pi.iter().map(|p| p / total).collect();
        let flat: Vec<f64> = s.iter().flatten().cloned().collect();
        let mass = quadratic_form(&pi, &flat);
        if !(mass > 0.0) {
            return Err(Error::InvalidModel("field \"S\": zero intensity matrix".into()));
        }
        let s = s
            .into_iter()
            .map(|row| row.into_iter().map(|v| v / mass).collect())
            .collect();
        Self::new(pi, s, rho)
    }

    /// Erdős–Rényi `G(n, rho)` as a one-block model.
    pub fn erdos_renyi(rho: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![vec![1.0]], rho)
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    #[inline]
    pub fn s(&self, a: usize, b: usize) -> f64 {
        self.s[a * self.k() + b]
    }

    pub fn s_rows(&self) -> Vec<Vec<f64>> {
        self.s.chunks(self.k()).map(|r| r.to_vec()).collect()
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(self.pi.clone(), self.s_rows(), rho)
    }

    /// `F_ab = rho * S_ab`.
    pub fn edge_probability(&self, a: usize, b: usize) -> f64 {
        self.rho * self.s(a, b)
    }

    pub fn max_s(&self) -> f64 {
        self.s.iter().cloned().fold(0.0, f64::max)
    }

    /// Marginal intensity `sum_b S_ab pi_b` of each block, i.e. the value of
    /// `int w(u, v) dv` for `u` in block `a`.
    pub fn marginals(&self) -> Vec<f64> {
        let k = self.k();
        (0..k)
            .map(|a| (0..k).map(|b| self.s(a, b) * self.pi[b]).sum())
            .collect()
    }

    /// `H_a = sum_b S_ab pi_a pi_b`.
    pub fn block_mass(&self) -> Vec<f64> {
        self.marginals()
            .iter()
            .zip(&self.pi)
            .map(|(m, p)| m * p)
            .collect()
    }

    /// Block order of the canonical graphon: ascending marginal, ties
    /// broken by block probability and then by the sorted row of `S`.
    pub fn canonical_order(&self) -> Vec<usize> {
        let marg = self.marginals();
        let k = self.k();
        let sorted_row = |a: usize| {
            let mut r: Vec<f64> = (0..k).map(|b| self.s(a, b)).collect();
            r.sort_by(f64::total_cmp);
            r
        };
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            marg[a]
                .total_cmp(&marg[b])
                .then(self.pi[a].total_cmp(&self.pi[b]))
                .then_with(|| {
                    let (ra, rb) = (sorted_row(a), sorted_row(b));
                    ra.iter()
                        .zip(&rb)
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .then(a.cmp(&b))
        });
        order
    }

    /// Relabels blocks by `order` (new block `i` is old block `order[i]`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let k = self.k();
        if order.len() != k {
            return Err(Error::Domain("permutation length mismatch".into()));
        }
        let pi = order.iter().map(|&a| self.pi[a]).collect();
        let s = order
            .iter()
            .map(|&a| order.iter().map(|&b| self.s(a, b)).collect())
            .collect();
        Self::new(pi, s, self.rho)
    }

    pub fn canonical(&self) -> Self {
        self.permuted(&self.canonical_order())
            .expect("permutation of a valid model is valid")
    }

    /// Upper ends of the canonical block intervals on `(0, 1)`, indexed by
    /// canonical position.
    pub fn canonical_cuts(&self) -> (Vec<usize>, Vec<f64>) {
        let order = self.canonical_order();
        let mut acc = 0.0;
        let cuts = order
            .iter()
            .map(|&a| {
                acc += self.pi[a];
                acc
            })
            .collect();
        (order, cuts)
    }
}

fn quadratic_form(pi: &[f64], s: &[f64]) -> f64 {
    let k = pi.len();
    let mut acc = 0.0;
    for a in 0..k {
        for b in 0..k {
            acc += pi[a] * pi[b] * s[a * k + b];
        }
    }
    acc
}

/// Maps a latent position to its canonical block (original label).
#[derive(Debug, Clone)]
pub struct BlockLocator {
    order: Vec<usize>,
    cuts: Vec<f64>,
}

impl BlockLocator {
    pub fn new(m: &BlockModel) -> Self {
        let (order, cuts) = m.canonical_cuts();
        BlockLocator { order, cuts }
    }

    pub fn block_of(&self, xi: f64) -> usize {
        let pos = self.cuts.partition_point(|&c| c <= xi);
        self.order[pos.min(self.order.len() - 1)]
    }
}

/// Symmetric piecewise-constant graphon on a uniform `G x G` grid of
/// `(0, 1)^2`, normalized to unit mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphonDoc", into = "GraphonDoc")]
pub struct Graphon {
    resolution: usize,
    grid: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GraphonDoc {
    resolution: usize,
    grid: Vec<Vec<f64>>,
}

impl TryFrom<GraphonDoc> for Graphon {
    type Error = Error;

    fn try_from(doc: GraphonDoc) -> Result<Self> {
        if doc.grid.len() != doc.resolution {
            return Err(Error::InvalidModel(format!(
                "field \"grid\": expected {} rows, got {}",
                doc.resolution,
                doc.grid.len()
            )));
        }
        Graphon::new(doc.grid)
    }
}

impl From<Graphon> for GraphonDoc {
    fn from(w: Graphon) -> Self {
        GraphonDoc { resolution: w.resolution, grid: w.rows() }
    }
}

impl Graphon {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let g = rows.len();
        if g == 0 {
            return Err(Error::InvalidModel("field \"grid\": empty".into()));
        }
        if rows.iter().any(|r| r.len() != g) {
            return Err(Error::InvalidModel("field \"grid\": must be square".into()));
        }
        let grid: Vec<f64> = rows.into_iter().flatten().collect();
        for i in 0..g {
            for j in 0..g {
                let v = grid[i * g + j];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidModel(format!("field \"grid\": entry ({i},{j}) = {v}")));
                }
                if (v - grid[j * g + i]).abs() > 1e-12 * v.abs().max(1.0) {
                    return Err(Error::InvalidModel("field \"grid\": not symmetric".into()));
                }
            }
        }
        let mean = grid.iter().sum::<f64>() / (g * g) as f64;
        if (mean - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidModel(format!("field \"grid\": mean {mean}, expected 1")));
        }
        Ok(Graphon { resolution: g, grid })
    }

    pub fn constant(resolution: usize) -> Self {
        Graphon { resolution, grid: vec![1.0; resolution * resolution] }
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.grid[i * self.resolution + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.grid.chunks(self.resolution).map(|r| r.to_vec()).collect()
    }

    pub fn max_value(&self) -> f64 {
        self.grid.iter().cloned().fold(0.0, f64::max)
    }

    /// Grid cell containing a latent position in `(0, 1)`.
    #[inline]
    pub fn cell_of(&self, u: f64) -> usize {
        ((u * self.resolution as f64) as usize).min(self.resolution - 1)
    }

    pub fn value(&self, u: f64, v: f64) -> f64 {
        self.cell(self.cell_of(u), self.cell_of(v))
    }

    /// Row means, i.e. `int w(u, v) dv` per cell.
    pub fn marginals(&self) -> Vec<f64> {
        self.grid
            .chunks(self.resolution)
            .map(|r| r.iter().sum::<f64>() / self.resolution as f64)
            .collect()
    }

    /// Whether the marginal is nondecreasing in `u` (the canonical form).
    pub fn is_canonical(&self) -> bool {
        self.marginals().windows(2).all(|w| w[0] <= w[1] + 1e-12)
    }

    /// Subdivides every cell into `factor x factor` equal cells.
    pub fn refined(&self, factor: usize) -> Self {
        let g = self.resolution * factor;
        let mut grid = vec![0.0; g * g];
        for i in 0..g {
            for j in 0..g {
                grid[i * g + j] = self.cell(i / factor, j / factor);
            }
        }
        Graphon { resolution: g, grid }
    }

    /// Averages `2 x 2` cell blocks; `None` for odd resolutions.
    pub fn coarsened(&self) -> Option<Self> {
        if self.resolution % 2 != 0 || self.resolution < 2 {
            return None;
        }
        let g = self.resolution / 2;
        let mut grid = vec![0.0; g * g];
        for i in 0..g {
            for j in 0..g {
                grid[i * g + j] = 0.25
                    * (self.cell(2 * i, 2 * j)
                        + self.cell(2 * i + 1, 2 * j)
                        + self.cell(2 * i, 2 * j + 1)
                        + self.cell(2 * i + 1, 2 * j + 1));
            }
        }
        Some(Graphon { resolution: g, grid })
    }
}

/// Renders a block model as its canonical piecewise-constant graphon. Each
/// cell holds the exact average of `w` over that cell, so the grid keeps
/// unit mean even when block boundaries do not align with the grid.
pub fn blockmodel_to_graphon(m: &BlockModel, resolution: usize) -> Result<Graphon> {
    let k = m.k();
    if resolution < k {
        return Err(Error::Domain(format!("resolution {resolution} below block count {k}")));
    }
    let (order, cuts) = m.canonical_cuts();
    let g = resolution;
    let h = 1.0 / g as f64;
    // overlap[i][c]: length of cell i inside canonical block c.
    let mut overlap = vec![0.0; g * k];
    for i in 0..g {
        let (lo, hi) = (i as f64 * h, (i + 1) as f64 * h);
        let mut start = 0.0;
        for (c, &end) in cuts.iter().enumerate() {
            let len = (hi.min(end) - lo.max(start)).max(0.0);
            overlap[i * k + c] = len;
            start = end;
        }
    }
    let mut grid = vec![0.0; g * g];
    for i in 0..g {
        for j in i..g {
            let mut acc = 0.0;
            for c in 0..k {
                let oi = overlap[i * k + c];
                if oi == 0.0 {
                    continue;
                }
                for d in 0..k {
                    acc += oi * overlap[j * k + d] * m.s(order[c], order[d]);
                }
            }
            let v = acc / (h * h);
            grid[i * g + j] = v;
            grid[j * g + i] = v;
        }
    }
    // remove rounding drift so the unit-mean invariant holds tightly
    let mean = grid.iter().sum::<f64>() / (g * g) as f64;
    for v in &mut grid {
        *v /= mean;
    }
    Ok(Graphon { resolution: g, grid })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn reference() -> BlockModel {
        BlockModel::new(vec![0.5, 0.5], vec![vec![2.0, 0.5], vec![0.5, 1.0]], 0.01).unwrap()
    }

    #[test]
    fn validation_errors_name_fields() {
        let bad_pi = BlockModel::new(vec![0.5, 0.4], vec![vec![1.0, 1.0], vec![1.0, 1.0]], 0.1);
        assert!(matches!(bad_pi, Err(Error::InvalidModel(m)) if m.contains("pi")));
        let zero_block = BlockModel::new(vec![1.0, 0.0], vec![vec![1.0, 1.0], vec![1.0, 1.0]], 0.1);
        assert!(zero_block.is_err());
        let asym = BlockModel::new(vec![0.5, 0.5], vec![vec![2.0, 0.4], vec![0.6, 1.0]], 0.1);
        assert!(matches!(asym, Err(Error::InvalidModel(m)) if m.contains("symmetric")));
        let too_dense = reference().with_rho(0.6);
        assert!(matches!(too_dense, Err(Error::InvalidModel(m)) if m.contains("rho")));
    }

    #[test]
    fn json_round_trip_and_schema_errors() {
        let m = reference();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"K\":2"));
        let back: BlockModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let err = serde_json::from_str::<BlockModel>(r#"{"K":2,"pi":[1.0],"S":[[1]],"rho":0.1}"#)
            .unwrap_err();
        assert!(err.to_string().contains("pi"));
    }

    #[test]
    fn marginals_and_order() {
        let m = reference();
        assert_eq!(m.marginals(), vec![1.25, 0.75]);
        assert_eq!(m.canonical_order(), vec![1, 0]);
        let loc = BlockLocator::new(&m);
        assert_eq!(loc.block_of(0.2), 1);
        assert_eq!(loc.block_of(0.7), 0);
    }

    #[test]
    fn graphon_of_one_block_is_constant() {
        let w = blockmodel_to_graphon(&BlockModel::erdos_renyi(0.1).unwrap(), 7).unwrap();
        assert!(w.rows().iter().flatten().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn reference_graphon_has_unit_mean() {
        let w = blockmodel_to_graphon(&reference(), 4).unwrap();
        let mean: f64 = w.rows().iter().flatten().sum::<f64>() / 16.0;
        assert!((mean - 1.0).abs() < 1e-12);
        // canonical: low-marginal block first
        assert_eq!(w.cell(0, 0), 1.0);
        assert_eq!(w.cell(3, 3), 2.0);
        assert_eq!(w.cell(0, 3), 0.5);
        assert!(w.is_canonical());
    }

    #[test]
    fn unaligned_grid_keeps_unit_mean() {
        let m = BlockModel::normalized(
            vec![1.0 / 3.0, 2.0 / 3.0],
            vec![vec![3.0, 0.2], vec![0.2, 1.0]],
            0.01,
        )
        .unwrap();
        let w = blockmodel_to_graphon(&m, 10).unwrap();
        let mean: f64 = w.rows().iter().flatten().sum::<f64>() / 100.0;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relabeling_gives_identical_graphon() {
        let m = BlockModel::normalized(
            vec![0.2, 0.3, 0.5],
            vec![vec![3.0, 0.2, 0.4], vec![0.2, 1.0, 0.7], vec![0.4, 0.7, 2.0]],
            0.01,
        )
        .unwrap();
        let w = blockmodel_to_graphon(&m, 20).unwrap();
        for perm in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
            let relabeled = m.permuted(&perm).unwrap();
            assert_eq!(blockmodel_to_graphon(&relabeled, 20).unwrap(), w);
        }
    }

    #[test]
    fn coarsen_refine() {
        let w = blockmodel_to_graphon(&reference(), 4).unwrap();
        assert_eq!(w.refined(2).coarsened().unwrap(), w);
    }
}
