//! Vertex-subsampling bootstrap for wheel moment estimators.
//!
//! Each replicate keeps `m` distinct vertices, rescales their hub counts to
//! a full-graph count and renormalizes by the subsample's edge density.
//! `sigma2_hat = (m/n) * (1/B) * sum_b (P*_b - mean)^2` then estimates the
//! variance of the full-sample estimator.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::count::{wheel_counts_per_hub, CountLimits};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::moments::{binomial_f64, normalize_count};
use crate::pattern::WheelSpec;
use crate::sampler::rng_stream;

pub const BOOTSTRAP_SCHEMA: &str = "netmoments/bootstrap-result/v1";

/// Per-vertex wheel counts for a set of keys, plus degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct HubCountCache {
    keys: Vec<WheelSpec>,
    /// `counts[key][vertex]`.
    counts: Vec<Vec<u128>>,
    degrees: Vec<u64>,
}

impl HubCountCache {
    pub fn build(g: &Graph, keys: &[WheelSpec], limits: &CountLimits) -> Result<Self> {
        let counts = keys.iter().map(|k| wheel_counts_per_hub(g, k, limits)).collect::<Result<_>>()?;
        Ok(HubCountCache { keys: keys.to_vec(), counts, degrees: g.degrees() })
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn keys(&self) -> &[WheelSpec] {
        &self.keys
    }

    pub fn degrees(&self) -> &[u64] {
        &self.degrees
    }

    pub fn hub_counts(&self, key: &WheelSpec) -> Option<&[u128]> {
        self.keys.iter().position(|k| k == key).map(|i| self.counts[i].as_slice())
    }

    /// Total count over all hubs.
    pub fn total(&self, key: &WheelSpec) -> Option<u128> {
        self.hub_counts(key).map(|c| c.iter().sum())
    }
}

/// How a replicate's edge density is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `rho* = Dbar* / (n - 1)`; reproduces the full-sample estimate at `m = n`.
    #[default]
    Rho,
    /// `rho* = Dbar* / m`, the formula taken literally.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Subsample size; `None` means `ceil(n^0.7)`.
    pub m: Option<usize>,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub normalization: Normalization,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { m: None, b: 500, seed: 0, normalization: Normalization::Rho }
    }
}

pub fn default_subsample(n: usize) -> usize {
    ((n as f64).powf(0.7).ceil() as usize).clamp(1, n.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub mean: f64,
    pub sd: f64,
    /// At probabilities 0.025, 0.25, 0.5, 0.75, 0.975.
    pub quantiles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub schema: String,
    pub key: String,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub normalization: Normalization,
    /// Full-sample checked estimate.
    pub estimate: f64,
    pub sigma2_hat: f64,
    pub replicates_summary: ReplicateSummary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replicates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    // linear interpolation between order statistics
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(values: &[f64]) -> ReplicateSummary {
    let b = values.len() as f64;
    let mean = values.iter().sum::<f64>() / b;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantiles = [0.025, 0.25, 0.5, 0.75, 0.975].iter().map(|&p| quantile(&sorted, p)).collect();
    ReplicateSummary { mean, sd, quantiles }
}

/// Draws `m` of `n` vertices by a partial Fisher-Yates shuffle of `perm`,
/// calls `f` on the sample, then undoes the swaps so `perm` is restored.
fn with_subsample<R: Rng, T>(perm: &mut [u32], m: usize, rng: &mut R, f: impl FnOnce(&[u32]) -> T) -> T {
    let n = perm.len();
    let mut swaps = Vec::with_capacity(m);
    for i in 0..m {
        let j = rng.gen_range(i..n);
        perm.swap(i, j);
        swaps.push(j);
    }
    let out = f(&perm[..m]);
    for (i, &j) in swaps.iter().enumerate().rev() {
        perm.swap(i, j);
    }
    out
}

/// Subsampling bootstrap variance of the checked estimator of `key`.
pub fn bootstrap_variance(cache: &HubCountCache, key: &WheelSpec, cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    let n = cache.n();
    let counts = cache
        .hub_counts(key)
        .ok_or_else(|| Error::Domain(format!("{key} is not in the hub-count cache")))?;
    let m = cfg.m.unwrap_or_else(|| default_subsample(n));
    if m == 0 || m > n {
        return Err(Error::Domain(format!("subsample size m = {m} must lie in 1..={n}")));
    }
    if cfg.b < 2 {
        return Err(Error::Domain("at least two replicates are required".into()));
    }
    if n < 2 {
        return Err(Error::Domain("graph needs at least two vertices".into()));
    }
    let p = key.p();
    let q = key.q() as i32;
    let n_r = key.isomorphism_count();
    let degrees = cache.degrees();
    let total_degree: u64 = degrees.iter().sum();
    if total_degree == 0 {
        return Err(Error::Normalization("graph has no edges, rho_hat = 0".into()));
    }
    let rho_full = total_degree as f64 / (n as f64 * (n as f64 - 1.0));
    let estimate = normalize_count(counts.iter().sum(), n, p, n_r) / rho_full.powi(q);
    let denom = binomial_f64(n, p) * n_r as f64;
    let replicate = |sample: &[u32]| -> f64 {
        let c: u128 = sample.iter().map(|&i| counts[i as usize]).sum();
        let d: u64 = sample.iter().map(|&i| degrees[i as usize]).sum();
        let dbar = d as f64 / m as f64;
        let rho = match cfg.normalization {
            Normalization::Rho => dbar / (n as f64 - 1.0),
            Normalization::Literal => dbar / m as f64,
        };
        let p_hat = (n as f64 / m as f64) * c as f64 / denom;
        p_hat / rho.powi(q)
    };
    let replicates: Vec<f64> = (0..cfg.b)
        .into_par_iter()
        .map_init(
            || (0..n as u32).collect::<Vec<u32>>(),
            |perm, b| {
                let mut rng = rng_stream(cfg.seed, b as u64);
                with_subsample(perm, m, &mut rng, |s| replicate(s))
            },
        )
        .collect();
    if replicates.iter().any(|v| !v.is_finite()) {
        return Err(Error::Normalization(
            "a subsample has no edges; increase m or use a denser graph".into(),
        ));
    }
    let sigma2_hat = if replicates.iter().all(|&v| v == replicates[0]) {
        0.0
    } else {
        let mean = replicates.iter().sum::<f64>() / cfg.b as f64;
        (m as f64 / n as f64) * replicates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cfg.b as f64
    };
    Ok(BootstrapResult {
        schema: BOOTSTRAP_SCHEMA.into(),
        key: key.name(),
        n,
        m,
        b: cfg.b,
        seed: cfg.seed,
        normalization: cfg.normalization,
        estimate,
        sigma2_hat,
        replicates_summary: summarize(&replicates),
        replicates,
        manifest: None,
    })
}

/// Builds the cache for one key and runs the bootstrap.
pub fn bootstrap_graph(g: &Graph, key: &WheelSpec, cfg: &BootstrapConfig, limits: &CountLimits) -> Result<BootstrapResult> {
    let cache = HubCountCache::build(g, std::slice::from_ref(key), limits)?;
    bootstrap_variance(&cache, key, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::count::count_wheel;
    use crate::model::BlockModel;
    use crate::moments::wheel_qcheck;
    use crate::sampler::{rng_from_seed, sample_block_model};

    fn er(n: usize, lambda: f64, seed: u64) -> Graph {
        let m = BlockModel::erdos_renyi(lambda / (n as f64 - 1.0)).unwrap();
        sample_block_model(&m, n, seed, false).unwrap().into_graph()
    }

    #[test]
    fn cache_totals_match_counts() {
        let g = er(300, 6.0, 3);
        let keys = vec![WheelSpec::simple(2, 1).unwrap(), WheelSpec::simple(1, 3).unwrap()];
        let limits = CountLimits::default();
        let cache = HubCountCache::build(&g, &keys, &limits).unwrap();
        for k in &keys {
            assert_eq!(cache.total(k).unwrap(), count_wheel(&g, k, &limits).unwrap());
        }
        assert_eq!(cache.degrees(), g.degrees().as_slice());
    }

    #[test]
    fn full_subsample_has_zero_variance() {
        let g = er(200, 8.0, 5);
        let key = WheelSpec::simple(2, 1).unwrap();
        let cfg = BootstrapConfig { m: Some(200), b: 20, seed: 1, ..Default::default() };
        let r = bootstrap_graph(&g, &key, &cfg, &CountLimits::default()).unwrap();
        assert_eq!(r.sigma2_hat, 0.0);
        let full = wheel_qcheck(&g, &key, &CountLimits::default()).unwrap();
        assert!(r.replicates.iter().all(|&v| v == r.replicates[0]));
        assert!((r.replicates[0] - full).abs() <= 1e-12 * full);
        assert!((r.estimate - full).abs() <= 1e-12 * full);
    }

    #[test]
    fn oversized_subsample_is_rejected() {
        let g = er(50, 5.0, 1);
        let key = WheelSpec::simple(1, 1).unwrap();
        let cfg = BootstrapConfig { m: Some(51), ..Default::default() };
        let err = bootstrap_graph(&g, &key, &cfg, &CountLimits::default()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let g = er(400, 10.0, 9);
        let key = WheelSpec::simple(2, 1).unwrap();
        let cache = HubCountCache::build(&g, std::slice::from_ref(&key), &CountLimits::default()).unwrap();
        let cfg = BootstrapConfig { b: 64, seed: 42, ..Default::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| bootstrap_variance(&cache, &key, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.sigma2_hat > 0.0);
    }

    #[test]
    fn literal_normalization_differs() {
        let g = er(400, 10.0, 2);
        let key = WheelSpec::simple(2, 1).unwrap();
        let mut cfg = BootstrapConfig { m: Some(100), b: 10, seed: 3, ..Default::default() };
        let a = bootstrap_graph(&g, &key, &cfg, &CountLimits::default()).unwrap();
        cfg.normalization = Normalization::Literal;
        let b = bootstrap_graph(&g, &key, &cfg, &CountLimits::default()).unwrap();
        // rho* differs by the factor (n - 1) / m, so checked values scale by its q-th power
        let f = (100.0f64 / 399.0).powi(2);
        for (x, y) in a.replicates.iter().zip(&b.replicates) {
            assert!((y - x * f).abs() <= 1e-12 * x);
        }
    }

    #[test]
    fn subsample_restores_permutation() {
        let mut perm: Vec<u32> = (0..30).collect();
        let mut rng = rng_from_seed(4);
        let picked = with_subsample(&mut perm, 10, &mut rng, |s| s.to_vec());
        let mut uniq = picked.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 10);
        assert_eq!(perm, (0..30).collect::<Vec<u32>>());
    }

    #[test]
    fn quantiles_interpolate() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.quantiles[2], 3.0);
        assert_eq!(s.quantiles[1], 2.0);
        assert!((s.sd - 2.5f64.sqrt()).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn variance_is_nonnegative(seed in 0u64..1000, m in 5usize..60, b in 2usize..20) {
                let g = er(60, 6.0, seed);
                let key = WheelSpec::simple(1, 2).unwrap();
                let cfg = BootstrapConfig { m: Some(m), b, seed, ..Default::default() };
                match bootstrap_graph(&g, &key, &cfg, &CountLimits::default()) {
                    Ok(r) => {
                        prop_assert!(r.sigma2_hat >= 0.0);
                        let same = r.replicates.iter().all(|&v| v == r.replicates[0]);
                        prop_assert_eq!(same, r.sigma2_hat == 0.0);
                    }
                    Err(e) => prop_assert!(matches!(e, Error::Normalization(_))),
                }
            }
        }
    }
}
