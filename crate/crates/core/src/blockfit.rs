//! Block-model parameters from wheel moments.
//!
//! Stage `k` of a block model is the discrete distribution of `T_w^k 1(xi)`,
//! with atoms `v^(k)_a` and weights `pi_a`; its power moments are the wheel
//! moments `tau_{k,l}`. The pipeline recovers each stage's atoms from
//! `2K - 1` moments, aligns atoms to blocks across stages, solves
//! `M V1 = V2` for `M = S diag(pi)`, and finally projects the moments onto
//! the model by least squares.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr_free::normal;
use serde::{Deserialize, Serialize};

use crate::count::CountLimits;
use crate::degrees::m_degrees;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::BlockModel;
use crate::moments::{moment_table_degree_approx, wheel_qcheck};
use crate::nls::{levenberg_marquardt, LmOptions};
use crate::pattern::WheelSpec;
use crate::sampler::rng_stream;

pub const FIT_RESULT_SCHEMA: &str = "netmoments/fit-result/v1";

/// Standard normal draws without an extra dependency.
mod rand_distr_free {
    use rand::Rng;

    pub fn normal<R: Rng>(rng: &mut R) -> f64 {
        // Box-Muller on an open interval
        let u: f64 = 1.0 - rng.gen::<f64>();
        let v: f64 = rng.gen();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    #[serde(rename = "K")]
    pub k: usize,
    /// Moment keys; `None` means `(k, l)` for `k = 1..=K`, `l = 1..=2K-1`.
    pub keys: Option<Vec<WheelSpec>>,
    /// Allowed gap between a stage's weights and `pi` during alignment.
    pub align_tol: f64,
    pub max_iter: usize,
    pub ftol: f64,
    pub multistart: usize,
    /// Per-key least-squares weights, in key order.
    pub weights: Option<Vec<f64>>,
    pub seed: u64,
    pub hankel_max_condition: f64,
    pub vandermonde_max_condition: f64,
    /// Smallest z-score of degree heterogeneity accepted for `K >= 2`.
    pub min_heterogeneity_z: f64,
    /// Use the falling-factorial degree formula instead of exact counts.
    pub degree_approx: bool,
    #[serde(skip)]
    pub limits: CountLimits,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            k: 2,
            keys: None,
            align_tol: 1e-2,
            max_iter: 200,
            ftol: 1e-15,
            multistart: 4,
            weights: None,
            seed: 0,
            hankel_max_condition: 1e12,
            vandermonde_max_condition: 1e10,
            min_heterogeneity_z: 1.0,
            degree_approx: false,
            limits: CountLimits::default(),
        }
    }
}

impl FitConfig {
    pub fn new(k: usize) -> Self {
        FitConfig { k, ..Default::default() }
    }

    pub fn key_set(&self) -> Vec<WheelSpec> {
        self.keys.clone().unwrap_or_else(|| default_keys(self.k))
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Domain("K must be at least 1".into()));
        }
        let keys = self.key_set();
        for k in 1..=self.k {
            for l in 1..=2 * self.k - 1 {
                let key = WheelSpec::simple(k, l)?;
                if self.k > 1 && !keys.contains(&key) {
                    return Err(Error::Domain(format!("key set lacks {key}")));
                }
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != keys.len() || w.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::Domain("weights must be nonnegative, one per key".into()));
            }
        }
        Ok(())
    }
}

/// `(k, l)` for `k = 1..=K`, `l = 1..=2K-1`.
pub fn default_keys(k: usize) -> Vec<WheelSpec> {
    (1..=k)
        .flat_map(|s| (1..=2 * k - 1).map(move |l| WheelSpec::simple(s, l).unwrap()))
        .collect()
}

/// Block parameters without an edge scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub pi: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
}

impl BlockParams {
    /// Normalizes `S`, clips it at zero and orders blocks canonically.
    fn canonical(pi: Vec<f64>, s: Vec<Vec<f64>>) -> Result<Self> {
        let s = s.into_iter().map(|r| r.into_iter().map(|x| x.max(0.0)).collect()).collect();
        let m = BlockModel::normalized(pi, s, 0.0)?.canonical();
        Ok(BlockParams { pi: m.pi().to_vec(), s: m.s_rows() })
    }

    pub fn model(&self, rho: f64) -> Result<BlockModel> {
        BlockModel::new(self.pi.clone(), self.s.clone(), rho)
    }
}

/// Atoms and weights of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSet {
    /// Ascending.
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
    pub hankel_condition: f64,
    /// Weights were clipped into `[1e-6, 1]` and renormalized.
    pub clipped: bool,
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn poly_eval(c: &[f64], x: f64) -> (f64, f64) {
    // monic polynomial x^K + c[K-1] x^(K-1) + ... + c[0] and its derivative
    let mut p = 1.0;
    let mut dp = 0.0;
    for &ci in c.iter().rev() {
        dp = dp * x + p;
        p = p * x + ci;
    }
    (p, dp)
}

/// Recovers a `K`-atom distribution from its power moments
/// `m_1, ..., m_{2K-1}` (with `m_0 = 1`).
pub fn atoms_from_moments(moments: &[f64], k: usize) -> Result<AtomSet> {
    atoms_from_moments_with(moments, k, 1e12)
}

pub fn atoms_from_moments_with(moments: &[f64], k: usize, max_condition: f64) -> Result<AtomSet> {
    if k == 0 || moments.len() < 2 * k - 1 {
        return Err(Error::Domain(format!("{k} atoms need {} moments", 2 * k - 1)));
    }
    if moments.iter().any(|m| !m.is_finite()) {
        return Err(Error::Domain("moments must be finite".into()));
    }
    if k == 1 {
        return Ok(AtomSet { atoms: vec![moments[0]], weights: vec![1.0], hankel_condition: 1.0, clipped: false });
    }
    let m: Vec<f64> = std::iter::once(1.0).chain(moments.iter().copied()).collect();
    let hankel = DMatrix::from_fn(k, k, |i, j| m[i + j]);
    let cond = condition_number(&hankel);
    if !(cond < 1e14) {
        return Err(Error::AtomSeparation(format!(
            "Hankel matrix is singular (condition {cond:.3e}): the moments carry fewer than {k} distinct atoms"
        )));
    }
    if cond > max_condition {
        return Err(Error::IllPosed(format!("Hankel condition number {cond:.3e} exceeds {max_condition:.1e}")));
    }
    let rhs = DVector::from_fn(k, |i, _| -m[i + k]);
    let c = hankel
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::IllPosed("Hankel system has no solution".into()))?;
    let c: Vec<f64> = c.iter().copied().collect();
    let companion = DMatrix::from_fn(k, k, |i, j| {
        if j == k - 1 {
            -c[i]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let eig = companion.complex_eigenvalues();
    let scale = eig.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut atoms = Vec::with_capacity(k);
    for z in eig.iter() {
        if z.im.abs() > 1e-7 * scale {
            return Err(Error::AtomSeparation(format!(
                "complex root {:.6}{:+.6}i: no real {k}-atom distribution has these moments",
                z.re, z.im
            )));
        }
        let mut x = z.re;
        for _ in 0..4 {
            let (p, dp) = poly_eval(&c, x);
            if dp == 0.0 {
                break;
            }
            let next = x - p / dp;
            if !next.is_finite() {
                break;
            }
            x = next;
        }
        atoms.push(x);
    }
    atoms.sort_by(f64::total_cmp);
    if atoms.windows(2).any(|w| w[1] - w[0] <= 1e-9 * scale) {
        return Err(Error::AtomSeparation("repeated atoms".into()));
    }
    let vander = DMatrix::from_fn(k, k, |l, a| atoms[a].powi(l as i32));
    let rhs = DVector::from_fn(k, |l, _| m[l]);
    let w = vander
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::AtomSeparation("singular Vandermonde system".into()))?;
    let mut weights: Vec<f64> = w.iter().copied().collect();
    let mut clipped = false;
    if weights.iter().any(|&x| !(1e-6..=1.0).contains(&x)) {
        clipped = true;
        for x in &mut weights {
            *x = x.clamp(1e-6, 1.0);
        }
        let total: f64 = weights.iter().sum();
        for x in &mut weights {
            *x /= total;
        }
    }
    Ok(AtomSet { atoms, weights, hankel_condition: cond, clipped })
}

/// Per-block iterates after cross-stage alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub pi: Vec<f64>,
    /// `iterates[k - 1][a]` is `v^(k)_a`.
    pub iterates: Vec<Vec<f64>>,
    /// More than one block assignment fit the weights at some stage.
    pub ambiguous: bool,
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

fn discordant_pairs(a: &[f64], b: &[f64]) -> usize {
    let mut d = 0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            if (a[i] - a[j]) * (b[i] - b[j]) < 0.0 {
                d += 1;
            }
        }
    }
    d
}

/// Assigns each stage's atoms to blocks. Stage 1 fixes the block order
/// (ascending atoms) and `pi`; later stages match their weights to `pi`
/// within `tol`, resolving ties by rank agreement with the previous stage.
pub fn align_stages(stages: &[AtomSet], tol: f64) -> Result<Alignment> {
    let first = stages.first().ok_or_else(|| Error::Domain("no stages".into()))?;
    let k = first.atoms.len();
    let pi = first.weights.clone();
    let mut iterates = vec![first.atoms.clone()];
    let mut ambiguous = false;
    let perms = permutations(k);
    for (s, stage) in stages.iter().enumerate().skip(1) {
        if stage.atoms.len() != k {
            return Err(Error::StageInconsistency(format!("stage {} has {} atoms", s + 1, stage.atoms.len())));
        }
        let prev = iterates.last().unwrap().clone();
        let mut feasible: Vec<(usize, f64, &Vec<usize>)> = perms
            .iter()
            .filter_map(|perm| {
                let gap = (0..k).map(|a| (stage.weights[perm[a]] - pi[a]).abs()).fold(0.0, f64::max);
                (gap <= tol).then(|| {
                    let cur: Vec<f64> = perm.iter().map(|&i| stage.atoms[i]).collect();
                    (discordant_pairs(&prev, &cur), gap, perm)
                })
            })
            .collect();
        if feasible.is_empty() {
            return Err(Error::StageInconsistency(format!(
                "stage {} weights {:?} do not match pi {:?} within {tol}",
                s + 1,
                stage.weights,
                pi
            )));
        }
        ambiguous |= feasible.len() > 1;
        feasible.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        let perm = feasible[0].2;
        iterates.push(perm.iter().map(|&i| stage.atoms[i]).collect());
    }
    Ok(Alignment { pi, iterates, ambiguous })
}

/// Monotone coupling: at every stage the block with the `r`-th smallest
/// previous value receives the `r`-th smallest atom.
pub fn align_by_rank(stages: &[AtomSet]) -> Result<Alignment> {
    let first = stages.first().ok_or_else(|| Error::Domain("no stages".into()))?;
    let k = first.atoms.len();
    let mut iterates = vec![first.atoms.clone()];
    for stage in &stages[1..] {
        if stage.atoms.len() != k {
            return Err(Error::StageInconsistency("atom counts differ across stages".into()));
        }
        let prev = iterates.last().unwrap();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| prev[a].total_cmp(&prev[b]));
        let mut cur = vec![0.0; k];
        for (r, &a) in order.iter().enumerate() {
            cur[a] = stage.atoms[r];
        }
        iterates.push(cur);
    }
    Ok(Alignment { pi: first.weights.clone(), iterates, ambiguous: true })
}

/// Output of [`recover_s`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredS {
    pub s: Vec<Vec<f64>>,
    /// Largest `|S_ab - S_ba|` before symmetrization.
    pub asymmetry: f64,
    pub v1_condition: f64,
}

/// `M = V2 V1^-1` with `V1 = [1, v1, ..., v^(K-1)]`, `V2 = [v1, ..., v^K]`,
/// then `S = M diag(pi)^-1`, symmetrized.
pub fn recover_s(pi: &[f64], iterates: &[Vec<f64>], max_condition: f64) -> Result<RecoveredS> {
    let k = pi.len();
    if iterates.len() < k || iterates.iter().take(k).any(|v| v.len() != k) {
        return Err(Error::Domain(format!("need {k} stages of {k} iterates")));
    }
    if k == 1 {
        return Ok(RecoveredS { s: vec![vec![1.0]], asymmetry: 0.0, v1_condition: 1.0 });
    }
    let v1 = DMatrix::from_fn(k, k, |a, j| if j == 0 { 1.0 } else { iterates[j - 1][a] });
    let v2 = DMatrix::from_fn(k, k, |a, j| iterates[j][a]);
    let cond = condition_number(&v1);
    if !(cond <= max_condition) {
        return Err(Error::Identifiability(format!(
            "iterates [1, v1, ..., v{}] are linearly dependent (condition {cond:.3e}); \
             the all-ones vector is (close to) an eigenvector of S diag(pi)",
            k - 1
        )));
    }
    let inv = v1
        .try_inverse()
        .ok_or_else(|| Error::Identifiability("singular iterate matrix".into()))?;
    let m = v2 * inv;
    let raw: Vec<Vec<f64>> = (0..k).map(|a| (0..k).map(|b| m[(a, b)] / pi[b]).collect()).collect();
    let mut asymmetry = 0.0f64;
    let s = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| {
                    asymmetry = asymmetry.max((raw[a][b] - raw[b][a]).abs());
                    0.5 * (raw[a][b] + raw[b][a])
                })
                .collect()
        })
        .collect();
    Ok(RecoveredS { s, asymmetry, v1_condition: cond })
}

/// Moments of the keys under `(pi, S)`, with `S` taken as given.
pub fn forward_moments(pi: &[f64], s: &[Vec<f64>], keys: &[WheelSpec]) -> Vec<f64> {
    let k = pi.len();
    let depth = keys.iter().map(|w| w.max_k()).max().unwrap_or(1);
    let mut iter = Vec::with_capacity(depth);
    let mut prev = vec![1.0; k];
    for _ in 0..depth {
        let next: Vec<f64> = (0..k).map(|a| (0..k).map(|b| s[a][b] * pi[b] * prev[b]).sum()).collect();
        iter.push(next.clone());
        prev = next;
    }
    keys.iter()
        .map(|key| {
            (0..k)
                .map(|a| pi[a] * key.classes().map(|(kk, l)| iter[kk - 1][a].powi(l as i32)).product::<f64>())
                .sum()
        })
        .collect()
}

/// Unconstrained coordinates: softmax logits for `pi` (first fixed at 0)
/// and logs of the upper triangle of `S`. `S` is renormalized on decoding.
struct Coordinates {
    k: usize,
}

impl Coordinates {
    fn len(&self) -> usize {
        self.k - 1 + self.k * (self.k + 1) / 2
    }

    fn encode(&self, pi: &[f64], s: &[Vec<f64>]) -> DVector<f64> {
        let k = self.k;
        let mut x = Vec::with_capacity(self.len());
        for a in 1..k {
            x.push((pi[a].max(1e-12) / pi[0].max(1e-12)).ln());
        }
        for a in 0..k {
            for b in a..k {
                x.push(s[a][b].max(1e-9).ln());
            }
        }
        DVector::from_vec(x)
    }

    fn decode(&self, x: &DVector<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let k = self.k;
        let logits: Vec<f64> = std::iter::once(0.0).chain(x.iter().take(k - 1).copied()).collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = ex.iter().sum();
        let pi: Vec<f64> = ex.iter().map(|e| e / total).collect();
        let mut s = vec![vec![0.0; k]; k];
        let mut idx = k - 1;
        for a in 0..k {
            for b in a..k {
                let v = x[idx].exp();
                s[a][b] = v;
                s[b][a] = v;
                idx += 1;
            }
        }
        let mut norm = 0.0;
        for a in 0..k {
            for b in 0..k {
                norm += pi[a] * pi[b] * s[a][b];
            }
        }
        for row in &mut s {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        (pi, s)
    }
}

/// Least-squares projection result.
#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub params: BlockParams,
    /// Weighted residual sum of squares at the solution.
    pub residual: f64,
    pub initial_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Minimizes `sum_i w_i (tau_hat_i - tau_i(pi, S))^2` from `init` and from
/// `cfg.multistart - 1` seeded perturbations of it; returns the best run.
pub fn nls_refine(targets: &[(WheelSpec, f64)], init: &BlockParams, cfg: &FitConfig) -> Result<Refined> {
    let k = init.pi.len();
    let keys: Vec<WheelSpec> = targets.iter().map(|t| t.0.clone()).collect();
    let values: Vec<f64> = targets.iter().map(|t| t.1).collect();
    let weights: Vec<f64> = match &cfg.weights {
        Some(w) if w.len() == keys.len() => w.iter().map(|x| x.sqrt()).collect(),
        Some(_) => return Err(Error::Domain("one weight per moment key required".into())),
        None => vec![1.0; keys.len()],
    };
    if k == 1 {
        let fit = forward_moments(&[1.0], &[vec![1.0]], &keys);
        let residual = fit.iter().zip(&values).zip(&weights).map(|((f, v), w)| (w * (f - v)).powi(2)).sum();
        return Ok(Refined {
            params: BlockParams { pi: vec![1.0], s: vec![vec![1.0]] },
            residual,
            initial_residual: residual,
            converged: true,
            iterations: 0,
        });
    }
    let coords = Coordinates { k };
    let residuals = |x: &DVector<f64>| {
        let (pi, s) = coords.decode(x);
        let fit = forward_moments(&pi, &s, &keys);
        DVector::from_iterator(keys.len(), (0..keys.len()).map(|i| weights[i] * (fit[i] - values[i])))
    };
    let opts = LmOptions { max_iter: cfg.max_iter, ftol: cfg.ftol, ..LmOptions::default() };
    let x0 = coords.encode(&init.pi, &init.s);
    let mut best = levenberg_marquardt(residuals, x0.clone(), &opts);
    let initial_residual = best.initial_cost;
    for start in 1..cfg.multistart.max(1) {
        let mut rng = rng_stream(cfg.seed, start as u64);
        let xs = DVector::from_iterator(x0.len(), x0.iter().map(|&v| v + 0.5 * normal(&mut rng)));
        let run = levenberg_marquardt(residuals, xs, &opts);
        if run.cost < best.cost {
            best = run;
        }
    }
    let (pi, s) = coords.decode(&best.x);
    Ok(Refined {
        params: BlockParams::canonical(pi, s)?,
        residual: best.cost,
        initial_residual,
        converged: best.converged,
        iterations: best.iterations,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub hankel_condition: Vec<f64>,
    pub v1_condition: Option<f64>,
    pub asymmetry: Option<f64>,
    /// `|tau_hat - tau(theta_hat)|`, unweighted.
    pub projection_distance: f64,
    pub weight_clipping: bool,
    pub alignment_ambiguous: bool,
    pub alignment_fallback: bool,
    pub multistart_fallback: bool,
    pub degree_approx: bool,
    pub heterogeneity_z: Option<f64>,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub schema: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub pi: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    pub rho_hat: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub residual: f64,
    pub converged: bool,
    /// Moment-inversion estimate before least squares.
    pub direct: Option<BlockParams>,
    /// Aligned atoms per stage, `atoms[k - 1][a] = v^(k)_a`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<Vec<f64>>,
    pub keys: Vec<String>,
    pub tau_hat: Vec<f64>,
    pub tau_fit: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl FitResult {
    pub fn params(&self) -> BlockParams {
        BlockParams { pi: self.pi.clone(), s: self.s.clone() }
    }
}

fn lookup(targets: &[(WheelSpec, f64)], k: usize, l: usize) -> Result<f64> {
    let key = WheelSpec::simple(k, l)?;
    targets
        .iter()
        .find(|t| t.0 == key)
        .map(|t| t.1)
        .ok_or_else(|| Error::Domain(format!("missing moment {key}")))
}

/// Rank-one starting point `S_ab ∝ v_a v_b` for when inversion fails.
fn rank_one_start(atoms: &AtomSet) -> BlockParams {
    let v = &atoms.atoms;
    let s = v.iter().map(|a| v.iter().map(|b| a * b).collect()).collect();
    BlockParams { pi: atoms.weights.clone(), s }
}

/// Full pipeline on a table of normalized wheel moments.
pub fn fit_from_moments(targets: &[(WheelSpec, f64)], cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let k = cfg.k;
    let mut diag = FitDiagnostics::default();
    let mut direct = None;
    let mut atoms_out = Vec::new();
    let init = if k == 1 {
        BlockParams { pi: vec![1.0], s: vec![vec![1.0]] }
    } else {
        let stage_moments = |s: usize| -> Result<Vec<f64>> { (1..=2 * k - 1).map(|l| lookup(targets, s, l)).collect() };
        let first = atoms_from_moments_with(&stage_moments(1)?, k, cfg.hankel_max_condition).map_err(|e| match e {
            Error::AtomSeparation(m) | Error::IllPosed(m) => Error::Identifiability(format!(
                "degree distribution does not resolve {k} blocks: {m}"
            )),
            other => other,
        })?;
        diag.hankel_condition.push(first.hankel_condition);
        diag.weight_clipping |= first.clipped;
        let mut stages = vec![first.clone()];
        let mut failure = None;
        for s in 2..=k {
            match atoms_from_moments_with(&stage_moments(s)?, k, cfg.hankel_max_condition) {
                Ok(a) => {
                    diag.hankel_condition.push(a.hankel_condition);
                    diag.weight_clipping |= a.clipped;
                    stages.push(a);
                }
                Err(e @ (Error::AtomSeparation(_) | Error::IllPosed(_))) => {
                    failure = Some(format!("stage {s}: {e}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        match failure {
            Some(msg) => {
                diag.multistart_fallback = true;
                diag.warnings.push(format!("moment inversion failed ({msg}); least squares from a rank-one start"));
                rank_one_start(&first)
            }
            None => {
                let aligned = match align_stages(&stages, cfg.align_tol) {
                    Ok(a) => a,
                    Err(Error::StageInconsistency(msg)) => {
                        diag.alignment_fallback = true;
                        diag.warnings.push(format!("{msg}; using monotone rank coupling"));
                        align_by_rank(&stages)?
                    }
                    Err(e) => return Err(e),
                };
                diag.alignment_ambiguous = aligned.ambiguous;
                let rec = recover_s(&aligned.pi, &aligned.iterates, cfg.vandermonde_max_condition)?;
                diag.v1_condition = Some(rec.v1_condition);
                diag.asymmetry = Some(rec.asymmetry);
                atoms_out = aligned.iterates.clone();
                let d = BlockParams::canonical(aligned.pi.clone(), rec.s)?;
                direct = Some(d.clone());
                d
            }
        }
    };
    let mut run_cfg = cfg.clone();
    if diag.multistart_fallback {
        run_cfg.multistart = cfg.multistart.max(12);
    }
    let refined = nls_refine(targets, &init, &run_cfg)?;
    let keys: Vec<WheelSpec> = targets.iter().map(|t| t.0.clone()).collect();
    let tau_hat: Vec<f64> = targets.iter().map(|t| t.1).collect();
    let tau_fit = forward_moments(&refined.params.pi, &refined.params.s, &keys);
    diag.projection_distance = tau_hat.iter().zip(&tau_fit).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    diag.iterations = refined.iterations;
    Ok(FitResult {
        schema: FIT_RESULT_SCHEMA.into(),
        k,
        pi: refined.params.pi,
        s: refined.params.s,
        rho_hat: None,
        lambda_hat: None,
        residual: refined.residual,
        converged: refined.converged,
        direct,
        atoms: atoms_out,
        keys: keys.iter().map(|w| w.name()).collect(),
        tau_hat,
        tau_fit,
        diagnostics: diag,
        manifest: None,
    })
}

/// Normalized wheel moments of a graph for the fit's key set, from exact
/// hub counts, falling back to the degree formula when counting exceeds its
/// budget. Returns the moments and whether the approximation was used.
pub fn graph_moments(g: &Graph, keys: &[WheelSpec], cfg: &FitConfig) -> Result<(Vec<(WheelSpec, f64)>, bool)> {
    let approx = |keys: &[WheelSpec]| -> Result<Vec<(WheelSpec, f64)>> {
        let t = moment_table_degree_approx(g, keys, cfg.limits.search_nodes)?;
        Ok(keys.iter().cloned().zip(t.entries.iter().map(|e| e.q_check.unwrap())).collect())
    };
    if cfg.degree_approx {
        return Ok((approx(keys)?, true));
    }
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        match wheel_qcheck(g, key, &cfg.limits) {
            Ok(v) => out.push((key.clone(), v)),
            Err(Error::Budget(_)) => return Ok((approx(keys)?, true)),
            Err(e) => return Err(e),
        }
    }
    Ok((out, false))
}

/// z-score of `tau_{1,2} - 1`, the variance of the normalized expected
/// degree, against its per-vertex standard error.
pub fn heterogeneity_z(g: &Graph) -> Result<f64> {
    let profile = m_degrees(g, 1, u64::MAX)?;
    let dbar = profile.mean_degree();
    if dbar <= 0.0 {
        return Err(Error::Normalization("graph has no edges".into()));
    }
    let n = g.n() as f64;
    let x: Vec<f64> = profile.counts[0]
        .iter()
        .map(|&d| (d as f64) * (d as f64 - 1.0) / (dbar * dbar))
        .collect();
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    Ok(if se > 0.0 { (mean - 1.0) / se } else { f64::INFINITY * (mean - 1.0).signum() })
}

/// Fits a `K`-block model to a graph.
pub fn fit_block_model(g: &Graph, cfg: &FitConfig) -> Result<FitResult> {
    let rho = g.rho_hat()?;
    if rho <= 0.0 {
        return Err(Error::Normalization("graph has no edges, rho_hat = 0".into()));
    }
    let mut z = None;
    if cfg.k >= 2 {
        let zz = heterogeneity_z(g)?;
        z = Some(zz);
        if !(zz >= cfg.min_heterogeneity_z) {
            return Err(Error::Identifiability(format!(
                "degree heterogeneity z = {zz:.2} is below {}: expected degrees look constant across blocks, \
                 so (1, S diag(pi) 1, ...) are not separable from this graph",
                cfg.min_heterogeneity_z
            )));
        }
    }
    let keys = cfg.key_set();
    let (targets, approx) = graph_moments(g, &keys, cfg)?;
    let mut fit = fit_from_moments(&targets, cfg)?;
    let lambda = g.lambda_hat();
    fit.rho_hat = Some(rho);
    fit.lambda_hat = Some(lambda);
    fit.diagnostics.heterogeneity_z = z;
    fit.diagnostics.degree_approx = approx;
    if approx {
        fit.diagnostics.warnings.push("moments from the falling-factorial degree formula".into());
    }
    let n = g.n() as f64;
    if lambda > n.sqrt() {
        fit.diagnostics.warnings.push(format!(
            "lambda_hat = {lambda:.1} exceeds sqrt(n) = {:.1}; checked moments may be biased",
            n.sqrt()
        ));
    }
    Ok(fit)
}

/// Draws a random well-conditioned model, for round-trip checks.
pub fn random_model<R: Rng>(rng: &mut R, k: usize) -> BlockModel {
    loop {
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = w.iter().sum();
        let pi: Vec<f64> = w.iter().map(|x| x / total).collect();
        let mut s = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in a..k {
                let v = if a == b { rng.gen_range(1.0..4.0) } else { rng.gen_range(0.1..1.0) };
                s[a][b] = v;
                s[b][a] = v;
            }
        }
        let m = match BlockModel::normalized(pi, s, 0.0) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let it = crate::theory::iterate_operator_block(&m, k);
        let mut v = it.values[0].clone();
        v.sort_by(f64::total_cmp);
        let sep = v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let v1 = DMatrix::from_fn(k, k, |a, j| if j == 0 { 1.0 } else { it.values[j - 1][a] });
        if sep > 0.05 && condition_number(&v1) < 1e4 && m.pi().iter().all(|&p| p > 0.1) {
            return m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::rng_from_seed;
    use crate::theory::{iterate_operator_block, tau_block};

    fn reference() -> BlockModel {
        BlockModel::new(vec![0.5, 0.5], vec![vec![2.0, 0.5], vec![0.5, 1.0]], 0.01).unwrap()
    }

    fn exact_targets(m: &BlockModel, keys: &[WheelSpec]) -> Vec<(WheelSpec, f64)> {
        keys.iter().map(|k| (k.clone(), tau_block(m, k))).collect()
    }

    #[test]
    fn single_atom() {
        let a = atoms_from_moments(&[1.7], 1).unwrap();
        assert_eq!(a.atoms, vec![1.7]);
        assert_eq!(a.weights, vec![1.0]);
    }

    #[test]
    fn reference_atoms() {
        let a = atoms_from_moments(&[1.0, 1.0625, 1.1875], 2).unwrap();
        assert!((a.atoms[0] - 0.75).abs() < 1e-12 && (a.atoms[1] - 1.25).abs() < 1e-12, "{:?}", a.atoms);
        assert!(a.weights.iter().all(|w| (w - 0.5).abs() < 1e-12));
        assert!(!a.clipped);
    }

    #[test]
    fn point_mass_fails_separation() {
        let err = atoms_from_moments(&[1.3, 1.69, 2.197], 2).unwrap_err();
        assert!(matches!(err, Error::AtomSeparation(_)), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn inconsistent_moments_are_clipped() {
        // m2 < m1^2 has no distribution behind it; one weight goes negative
        let a = atoms_from_moments(&[1.0, 0.9, 1.0], 2).unwrap();
        assert!(a.clipped);
        assert!(a.weights.iter().all(|&w| w > 0.0));
        assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recover_reference_s() {
        let m = reference();
        let it = iterate_operator_block(&m, 2);
        let r = recover_s(m.pi(), &it.values, 1e10).unwrap();
        let expected = [[2.0, 0.5], [0.5, 1.0]];
        for a in 0..2 {
            for b in 0..2 {
                assert!((r.s[a][b] - expected[a][b]).abs() < 1e-10);
            }
        }
        assert!(r.asymmetry < 1e-12);
    }

    #[test]
    fn flat_degrees_are_not_identifiable() {
        let err = recover_s(&[0.5, 0.5], &[vec![1.0, 1.0], vec![1.2, 0.8]], 1e10).unwrap_err();
        assert!(matches!(err, Error::Identifiability(_)));
        let one = recover_s(&[1.0], &[vec![1.0]], 1e10).unwrap();
        assert_eq!(one.s, vec![vec![1.0]]);
    }

    #[test]
    fn alignment_cases() {
        let stage = |atoms: Vec<f64>, weights: Vec<f64>| AtomSet { atoms, weights, hankel_condition: 1.0, clipped: false };
        // distinct weights pin the assignment even against the rank order
        let s1 = stage(vec![0.8, 1.4], vec![0.3, 0.7]);
        let s2 = stage(vec![0.9, 1.1], vec![0.7, 0.3]);
        let a = align_stages(&[s1, s2], 1e-2).unwrap();
        assert_eq!(a.iterates[1], vec![1.1, 0.9]);
        assert!(!a.ambiguous);
        // equal weights fall back to monotone coupling
        let m = reference();
        let it = iterate_operator_block(&m, 2);
        let s1 = stage(vec![0.75, 1.25], vec![0.5, 0.5]);
        let s2 = stage(vec![0.6875, 1.4375], vec![0.5, 0.5]);
        let a = align_stages(&[s1.clone(), s2], 1e-2).unwrap();
        assert!(a.ambiguous);
        assert_eq!(a.iterates[1], vec![it.values[1][1], it.values[1][0]]);
        let single = align_stages(&[stage(vec![1.0], vec![1.0])], 1e-2).unwrap();
        assert_eq!(single.iterates, vec![vec![1.0]]);
        let bad = stage(vec![0.5, 2.0], vec![0.1, 0.9]);
        assert!(matches!(align_stages(&[s1, bad], 1e-2), Err(Error::StageInconsistency(_))));
    }

    #[test]
    fn reference_round_trip() {
        let m = reference();
        let fit = fit_from_moments(&exact_targets(&m, &default_keys(2)), &FitConfig::new(2)).unwrap();
        let c = m.canonical();
        for a in 0..2 {
            assert!((fit.pi[a] - c.pi()[a]).abs() < 1e-9);
            for b in 0..2 {
                assert!((fit.s[a][b] - c.s(a, b)).abs() < 1e-8);
            }
        }
        assert!(fit.residual < 1e-20);
    }

    #[test]
    fn exact_moments_fixed_point() {
        let m = reference().canonical();
        let init = BlockParams { pi: m.pi().to_vec(), s: m.s_rows() };
        let r = nls_refine(&exact_targets(&m, &default_keys(2)), &init, &FitConfig::new(2)).unwrap();
        assert!(r.residual < 1e-28);
        for a in 0..2 {
            assert!((r.params.pi[a] - init.pi[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn nls_never_increases_residual() {
        let m = reference();
        let mut targets = exact_targets(&m, &default_keys(2));
        for (i, t) in targets.iter_mut().enumerate() {
            t.1 *= 1.0 + 0.03 * ((i as f64) * 1.7).sin();
        }
        let init = BlockParams { pi: vec![0.4, 0.6], s: vec![vec![1.8, 0.6], vec![0.6, 1.1]] };
        let r = nls_refine(&targets, &init, &FitConfig::new(2)).unwrap();
        assert!(r.residual <= r.initial_residual);
    }

    #[test]
    fn random_round_trips() {
        let mut rng = rng_from_seed(77);
        for k in [2, 3] {
            for _ in 0..10 {
                let m = random_model(&mut rng, k);
                let fit = fit_from_moments(&exact_targets(&m, &default_keys(k)), &FitConfig::new(k)).unwrap();
                let c = m.canonical();
                for a in 0..k {
                    assert!((fit.pi[a] - c.pi()[a]).abs() < 1e-6, "{:?} vs {:?}", fit.pi, c.pi());
                    for b in 0..k {
                        assert!((fit.s[a][b] - c.s(a, b)).abs() < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_row_sums_are_rejected() {
        // S = [[1.5, 0.5], [0.5, 1.5]] with equal blocks has flat degrees
        let m = BlockModel::new(vec![0.5, 0.5], vec![vec![1.5, 0.5], vec![0.5, 1.5]], 0.01).unwrap();
        let err = fit_from_moments(&exact_targets(&m, &default_keys(2)), &FitConfig::new(2)).unwrap_err();
        assert!(matches!(err, Error::Identifiability(_)), "{err}");
    }

    #[test]
    fn one_block_fit_is_trivial() {
        let g = Graph::cycle(10);
        let fit = fit_block_model(&g, &FitConfig::new(1)).unwrap();
        assert_eq!(fit.pi, vec![1.0]);
        assert_eq!(fit.s, vec![vec![1.0]]);
        assert!((fit.rho_hat.unwrap() - 10.0 / 45.0).abs() < 1e-15);
    }

    #[test]
    fn fit_json_round_trip() {
        let m = reference();
        let fit = fit_from_moments(&exact_targets(&m, &default_keys(2)), &FitConfig::new(2)).unwrap();
        let s = serde_json::to_string(&fit).unwrap();
        let back: FitResult = serde_json::from_str(&s).unwrap();
        assert_eq!(back, fit);
    }
}
