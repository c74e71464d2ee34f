//! Normalized empirical moments.
//!
//! For a pattern `R` on `p` vertices with `q` edges,
//! `P_hat = induced / (C(n, p) N(R))`, `Q_hat = noninduced / (C(n, p) N(R))`,
//! and the checked versions divide by `rho_hat^q`.

use serde::{Deserialize, Serialize};

use crate::count::{count_induced_with, count_noninduced_with, count_wheel, CountLimits};
use crate::degrees::{degree_moment_approx, exact_numerator, m_degrees};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::pattern::{factorial, PatternGraph, PatternSpec, WheelSpec};

pub const MOMENT_TABLE_SCHEMA: &str = "netmoments/moment-table/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    Induced,
    Noninduced,
    #[default]
    Both,
}

impl CountMode {
    fn induced(self) -> bool {
        matches!(self, CountMode::Induced | CountMode::Both)
    }

    fn noninduced(self) -> bool {
        matches!(self, CountMode::Noninduced | CountMode::Both)
    }
}

/// Which checked moment is reported as the headline estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Pcheck,
    Qcheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    DegreeApprox,
    Theory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub pattern: String,
    pub p: usize,
    pub q: usize,
    #[serde(rename = "N_R")]
    pub n_r: u128,
    /// Noninduced count.
    pub raw_count: Option<u128>,
    pub raw_count_induced: Option<u128>,
    pub p_hat: Option<f64>,
    pub q_hat: Option<f64>,
    pub p_check: Option<f64>,
    pub q_check: Option<f64>,
    /// Population moment (theoretical tables).
    pub tau: Option<f64>,
    /// Headline value under the table's estimator.
    pub estimate: Option<f64>,
}

impl MomentEntry {
    fn blank(spec: &PatternSpec) -> Self {
        let n_r = match spec {
            PatternSpec::Graph(r) => r.isomorphism_count(),
            PatternSpec::Wheel(w) => w.isomorphism_count(),
        };
        MomentEntry {
            pattern: spec.name(),
            p: spec.p(),
            q: spec.q(),
            n_r,
            raw_count: None,
            raw_count_induced: None,
            p_hat: None,
            q_hat: None,
            p_check: None,
            q_check: None,
            tau: None,
            estimate: None,
        }
    }

    pub fn theoretical(spec: &PatternSpec, tau: f64) -> Self {
        MomentEntry { tau: Some(tau), estimate: Some(tau), ..Self::blank(spec) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub schema: String,
    pub method: Method,
    pub n: Option<usize>,
    pub rho_hat: Option<f64>,
    pub lambda_hat: Option<f64>,
    /// Model edge scale (theoretical tables).
    pub rho: Option<f64>,
    pub mode: Option<CountMode>,
    pub estimator: Option<Estimator>,
    pub entries: Vec<MomentEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl MomentTable {
    pub fn theoretical(rho: f64, entries: Vec<MomentEntry>) -> Self {
        MomentTable {
            schema: MOMENT_TABLE_SCHEMA.into(),
            method: Method::Theory,
            n: None,
            rho_hat: None,
            lambda_hat: None,
            rho: Some(rho),
            mode: None,
            estimator: None,
            entries,
            manifest: None,
        }
    }

    pub fn get(&self, pattern: &str) -> Option<&MomentEntry> {
        self.entries.iter().find(|e| e.pattern == pattern)
    }

    /// Headline value for a wheel key.
    pub fn value(&self, key: &WheelSpec) -> Option<f64> {
        self.get(&key.name()).and_then(|e| e.estimate)
    }

    /// Picks the headline column of every entry.
    pub fn with_estimator(mut self, est: Estimator) -> Self {
        for e in &mut self.entries {
            let v = match est {
                Estimator::Pcheck => e.p_check.or(e.q_check),
                Estimator::Qcheck => e.q_check.or(e.p_check),
            };
            e.estimate = v.or(e.tau);
        }
        self.estimator = Some(est);
        self
    }
}

/// `C(n, p)` in floating point.
pub fn binomial_f64(n: usize, p: usize) -> f64 {
    if p > n {
        return 0.0;
    }
    (0..p).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

/// `count / (C(n, p) N(R))`.
pub fn normalize_count(count: u128, n: usize, p: usize, n_r: u128) -> f64 {
    let denom = binomial_f64(n, p);
    if denom == 0.0 {
        return 0.0;
    }
    count as f64 / n_r as f64 / denom
}

fn positive_rho(g: &Graph) -> Result<f64> {
    let rho = g.rho_hat()?;
    if rho <= 0.0 {
        return Err(Error::Normalization("graph has no edges, rho_hat = 0".into()));
    }
    Ok(rho)
}

fn noninduced_count(g: &Graph, spec: &PatternSpec, limits: &CountLimits) -> Result<u128> {
    match spec {
        PatternSpec::Graph(r) => count_noninduced_with(g, r, limits),
        PatternSpec::Wheel(w) => count_wheel(g, w, limits),
    }
}

fn induced_count(g: &Graph, spec: &PatternSpec, limits: &CountLimits) -> Result<u128> {
    match spec {
        PatternSpec::Graph(r) => count_induced_with(g, r, limits),
        PatternSpec::Wheel(w) => count_induced_with(g, &w.to_pattern()?, limits),
    }
}

/// Exact moment table. Wheels are counted hub-rooted, consistently with
/// their `N(R) = p! / prod l_j!`.
pub fn moment_table(g: &Graph, patterns: &[PatternSpec], mode: CountMode, limits: &CountLimits) -> Result<MomentTable> {
    let rho = positive_rho(g)?;
    let n = g.n();
    let mut entries = Vec::with_capacity(patterns.len());
    for spec in patterns {
        let mut e = MomentEntry::blank(spec);
        let scale = rho.powi(e.q as i32);
        if mode.noninduced() {
            let c = noninduced_count(g, spec, limits)?;
            let hat = normalize_count(c, n, e.p, e.n_r);
            e.raw_count = Some(c);
            e.q_hat = Some(hat);
            e.q_check = Some(hat / scale);
        }
        if mode.induced() {
            let c = induced_count(g, spec, limits)?;
            let hat = normalize_count(c, n, e.p, e.n_r);
            e.raw_count_induced = Some(c);
            e.p_hat = Some(hat);
            e.p_check = Some(hat / scale);
        }
        entries.push(e);
    }
    let table = MomentTable {
        schema: MOMENT_TABLE_SCHEMA.into(),
        method: Method::Exact,
        n: Some(n),
        rho_hat: Some(rho),
        lambda_hat: Some(g.lambda_hat()),
        rho: None,
        mode: Some(mode),
        estimator: None,
        entries,
        manifest: None,
    };
    let est = if mode.induced() { Estimator::Pcheck } else { Estimator::Qcheck };
    Ok(table.with_estimator(est))
}

/// `Q_check` of a wheel from exact hub counts.
pub fn wheel_qcheck(g: &Graph, key: &WheelSpec, limits: &CountLimits) -> Result<f64> {
    let rho = positive_rho(g)?;
    let c = count_wheel(g, key, limits)?;
    Ok(normalize_count(c, g.n(), key.p(), key.isomorphism_count()) / rho.powi(key.q() as i32))
}

/// Wheel moments through the falling-factorial degree formula; the values
/// land in the `q_check` column.
pub fn moment_table_degree_approx(g: &Graph, keys: &[WheelSpec], path_budget: u64) -> Result<MomentTable> {
    let rho = positive_rho(g)?;
    let depth = keys.iter().map(|k| k.max_k()).max().unwrap_or(1);
    let profile = m_degrees(g, depth, path_budget)?;
    let mut entries = Vec::with_capacity(keys.len());
    for key in keys {
        let spec = PatternSpec::Wheel(key.clone());
        let mut e = MomentEntry::blank(&spec);
        let v = degree_moment_approx(&profile, key)?;
        // each falling-factorial term is divisible by prod l_j!, giving the
        // implied number of hub-rooted copies
        let fact: u128 = key.ls().iter().map(|&l| factorial(l)).product();
        e.raw_count = exact_numerator(&profile, key).map(|num| num / fact);
        e.q_check = Some(v);
        e.q_hat = Some(v * rho.powi(e.q as i32));
        entries.push(e);
    }
    let table = MomentTable {
        schema: MOMENT_TABLE_SCHEMA.into(),
        method: Method::DegreeApprox,
        n: Some(g.n()),
        rho_hat: Some(rho),
        lambda_hat: Some(g.lambda_hat()),
        rho: None,
        mode: Some(CountMode::Noninduced),
        estimator: None,
        entries,
        manifest: None,
    };
    Ok(table.with_estimator(Estimator::Qcheck))
}

/// Convenience for the three named small patterns.
pub fn named_patterns() -> Vec<PatternSpec> {
    vec![
        PatternSpec::Graph(PatternGraph::edge()),
        PatternSpec::Graph(PatternGraph::two_star()),
        PatternSpec::Graph(PatternGraph::triangle()),
    ]
}
