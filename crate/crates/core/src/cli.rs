//! Command-line front end.
//!
//! Every command that writes to a file also writes `<file>.manifest.json`
//! describing the run, and the output records the manifest's file name.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::blockfit::{fit_block_model, FitConfig, FitResult};
use crate::bootstrap::{bootstrap_variance, BootstrapConfig, HubCountCache, Normalization};
use crate::count::CountLimits;
use crate::degrees::{joint_coupling_error, m_degrees, theta_profile, DegreeProfile, LatentModel};
use crate::error::{Error, Result};
use crate::graph::{load_edge_list, Graph, IdMode};
use crate::model::{BlockModel, Graphon};
use crate::moments::{moment_table, moment_table_degree_approx, named_patterns, wheel_qcheck, CountMode, Estimator};
use crate::pattern::{PatternSpec, WheelSpec};
use crate::sampler::{rng_stream, sample_block_model, sample_graphon, SampleOutput};
use crate::theory::{tau_block, tau_graphon, theoretical_table};

pub const MANIFEST_SCHEMA: &str = "netmoments/run-manifest/v1";
pub const DEGREE_SUMMARY_SCHEMA: &str = "netmoments/degree-summary/v1";
pub const SWEEP_LINE_SCHEMA: &str = "netmoments/sweep-line/v1";
pub const THREADS_ENV: &str = "NETMOMENTS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "netmoments", version, about = "Moment estimation for sparse exchangeable networks")]
pub struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// Search-node budget for pattern counting and path enumeration.
    #[arg(long, global = true)]
    pub budget: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a graph from a block model or graphon.
    Gen(GenArgs),
    /// Estimate normalized pattern moments of a graph, or tabulate a model's.
    Moments(MomentsArgs),
    /// Fit a K-block model to a graph.
    Fit(FitArgs),
    /// Compute m-degrees.
    Degrees(DegreesArgs),
    /// Subsampling bootstrap variance of a wheel moment.
    Bootstrap(BootstrapArgs),
    /// Run a simulation grid, one JSON line per cell and replicate.
    Sweep(SweepArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Model JSON (block model or graphon).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub n: usize,
    /// Edge scale; overrides the model file.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Edge-list output (stdout if absent).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Also write latent positions to `<out>.latents`.
    #[arg(long, requires = "out")]
    pub latents: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorArg {
    Pcheck,
    Qcheck,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Induced,
    Noninduced,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxArg {
    Degree,
}

#[derive(Debug, Args, Serialize)]
pub struct MomentsArgs {
    /// Edge list.
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    pub graph: Option<PathBuf>,
    /// Block model JSON; emits the population table instead.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Pattern: edge, 2-star, triangle, wheel:k=..,l=.. or edges:a-b,...
    /// Repeatable; defaults to a standard set.
    #[arg(short, long = "pattern")]
    pub patterns: Vec<String>,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Pcheck)]
    pub estimator: EstimatorArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    /// Approximate wheel moments from m-degrees.
    #[arg(long, value_enum)]
    pub approx: Option<ApproxArg>,
    /// Vertex ids are arbitrary labels rather than integers.
    #[arg(long)]
    pub labels: bool,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightsArg {
    Uniform,
    Bootstrap,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Number of blocks.
    #[arg(short = 'k', long = "k", visible_alias = "K")]
    pub k: usize,
    /// Least-squares weights: uniform, or inverse bootstrap variances.
    #[arg(long, value_enum, default_value_t = WeightsArg::Uniform)]
    pub weights: WeightsArg,
    /// Include the aligned per-stage atoms.
    #[arg(long)]
    pub report_stages: bool,
    #[arg(long, value_enum)]
    pub approx: Option<ApproxArg>,
    #[arg(long, default_value_t = 4)]
    pub multistart: usize,
    /// Replicates per key for --weights bootstrap.
    #[arg(long, default_value_t = 200)]
    pub bootstrap_b: usize,
    #[arg(long)]
    pub labels: bool,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DegreesArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Largest path length.
    #[arg(short, long)]
    pub m: usize,
    /// Per-vertex CSV output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Model JSON, with --latents, for the coupling error.
    #[arg(long, requires = "latents")]
    pub model: Option<PathBuf>,
    /// Latent sidecar written by `gen --latents`.
    #[arg(long, requires = "model")]
    pub latents: Option<PathBuf>,
    #[arg(long)]
    pub labels: bool,
    /// Summary JSON output.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationArg {
    Rho,
    Literal,
}

#[derive(Debug, Args, Serialize)]
pub struct BootstrapArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Wheel key, e.g. wheel:k=2,l=1.
    #[arg(long)]
    pub key: String,
    /// Subsample size (default ceil(n^0.7)).
    #[arg(short, long)]
    pub m: Option<usize>,
    /// Replicates.
    #[arg(short = 'b', long = "b", visible_alias = "B", visible_short_alias = 'B', default_value_t = 500)]
    pub b: usize,
    #[arg(long, value_enum, default_value_t = NormalizationArg::Rho)]
    pub normalization: NormalizationArg,
    /// Keep every replicate value in the output.
    #[arg(long)]
    pub replicates: bool,
    #[arg(long)]
    pub labels: bool,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Sweep configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// JSONL output (stdout if absent).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub params: Value,
    pub seed: u64,
    pub threads: usize,
    pub budget: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub wall_clock_seconds: f64,
}

/// A model file: block model, or graphon with an optional `rho` field.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Block(BlockModel),
    Graphon { w: Graphon, rho: Option<f64> },
}

impl ModelFile {
    pub fn parse(value: Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidModel("expected a JSON object".into()))?;
        let bad = |e: serde_json::Error| Error::InvalidModel(e.to_string());
        if obj.contains_key("resolution") || obj.contains_key("grid") {
            let rho = obj.get("rho").and_then(Value::as_f64);
            let w = serde_json::from_value(value).map_err(bad)?;
            Ok(ModelFile::Graphon { w, rho })
        } else {
            Ok(ModelFile::Block(serde_json::from_value(value).map_err(bad)?))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let value: Value = serde_json::from_reader(BufReader::new(open(path)?))
            .map_err(|e| Error::InvalidModel(format!("{}: {e}", path.display())))?;
        Self::parse(value).map_err(|e| match e {
            Error::InvalidModel(m) => Error::InvalidModel(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn rho(&self) -> Option<f64> {
        match self {
            ModelFile::Block(m) => Some(m.rho()),
            ModelFile::Graphon { rho, .. } => *rho,
        }
    }

    pub fn sample(&self, n: usize, rho: Option<f64>, seed: u64, keep_latents: bool) -> Result<SampleOutput> {
        match self {
            ModelFile::Block(m) => {
                let m = match rho {
                    Some(r) => m.with_rho(r)?,
                    None => m.clone(),
                };
                sample_block_model(&m, n, seed, keep_latents)
            }
            ModelFile::Graphon { w, rho: own } => {
                let r = rho.or(*own).ok_or_else(|| Error::InvalidModel("graphon model needs a \"rho\" field or --rho".into()))?;
                sample_graphon(w, r, n, seed, keep_latents)
            }
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Domain(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::Domain(format!("{}: {e}", path.display())))?))
}

pub fn load_graph(path: &Path, labels: bool) -> Result<Graph> {
    let mode = if labels { IdMode::Label } else { IdMode::Integer };
    load_edge_list(BufReader::new(open(path)?), mode)
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, value)?;
            writeln!(lock)?;
        }
    }
    Ok(())
}

struct Ctx {
    seed: u64,
    threads: usize,
    budget: Option<u64>,
    limits: CountLimits,
    start: Instant,
}

impl Ctx {
    fn path_budget(&self) -> u64 {
        self.budget.unwrap_or(u64::MAX)
    }

    fn write_manifest<P: Serialize>(&self, command: &str, params: &P, inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
        let Some(first) = outputs.first() else { return Ok(()) };
        let m = RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            command: command.into(),
            params: serde_json::to_value(params)?,
            seed: self.seed,
            threads: self.threads,
            budget: self.budget,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
        };
        write_json(Some(&manifest_path(first)), &m)
    }
}

fn parse_patterns(names: &[String]) -> Result<Vec<PatternSpec>> {
    if names.is_empty() {
        return Ok(named_patterns());
    }
    names.iter().map(|s| s.parse()).collect()
}

fn cmd_gen(ctx: &Ctx, a: &GenArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let sample = model.sample(a.n, a.rho, ctx.seed, a.latents)?;
    let g = sample.graph();
    match &a.out {
        Some(out) => {
            let mp = manifest_path(out);
            let mut w = create(out)?;
            writeln!(w, "# manifest: {}", file_name(&mp))?;
            g.write_edge_list(&mut w)?;
            w.flush()?;
            let mut outputs = vec![out.as_path()];
            let lat_path = latents_path(out);
            if a.latents {
                let mut lw = create(&lat_path)?;
                writeln!(lw, "# manifest: {}", file_name(&mp))?;
                for x in sample.xi.as_deref().unwrap_or_default() {
                    writeln!(lw, "{x}")?;
                }
                lw.flush()?;
                outputs.push(&lat_path);
            }
            ctx.write_manifest("gen", a, &[&a.model], &outputs)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            g.write_edge_list(&mut lock)
        }
    }
}

pub fn latents_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".latents");
    PathBuf::from(s)
}

pub fn load_latents(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Domain(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        let x: f64 = t.parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("bad latent value {t:?}") })?;
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::Parse { line: i + 1, msg: format!("latent {x} outside (0, 1)") });
        }
        out.push(x);
    }
    Ok(out)
}

fn cmd_moments(ctx: &Ctx, a: &MomentsArgs) -> Result<()> {
    let patterns = parse_patterns(&a.patterns)?;
    let est = match a.estimator {
        EstimatorArg::Pcheck => Estimator::Pcheck,
        EstimatorArg::Qcheck => Estimator::Qcheck,
    };
    let mut inputs: Vec<&Path> = Vec::new();
    let mut table = if let Some(mp) = &a.model {
        inputs.push(mp);
        match ModelFile::load(mp)? {
            ModelFile::Block(m) => theoretical_table(&m, &patterns),
            ModelFile::Graphon { .. } => {
                return Err(Error::Domain("population tables need a block model".into()));
            }
        }
    } else {
        let gp = a.graph.as_ref().expect("clap enforces --graph or --model");
        inputs.push(gp);
        let g = load_graph(gp, a.labels)?;
        if a.approx.is_some() {
            let keys = patterns
                .iter()
                .map(|p| match p {
                    PatternSpec::Wheel(w) => Ok(w.clone()),
                    PatternSpec::Graph(_) => Err(Error::Domain(format!("--approx degree supports wheels only, got {}", p.name()))),
                })
                .collect::<Result<Vec<_>>>()?;
            moment_table_degree_approx(&g, &keys, ctx.path_budget())?
        } else {
            let mode = match a.mode {
                ModeArg::Induced => CountMode::Induced,
                ModeArg::Noninduced => CountMode::Noninduced,
                ModeArg::Both => CountMode::Both,
            };
            moment_table(&g, &patterns, mode, &ctx.limits)?.with_estimator(est)
        }
    };
    table.manifest = a.out.as_deref().map(|o| file_name(&manifest_path(o)));
    write_json(a.out.as_deref(), &table)?;
    if let Some(o) = &a.out {
        ctx.write_manifest("moments", a, &inputs, &[o])?;
    }
    Ok(())
}

/// Inverse bootstrap variances, scaled to mean one.
fn bootstrap_weights(g: &Graph, keys: &[WheelSpec], b: usize, seed: u64, limits: &CountLimits) -> Result<Vec<f64>> {
    let cache = HubCountCache::build(g, keys, limits)?;
    let mut w = Vec::with_capacity(keys.len());
    for (i, key) in keys.iter().enumerate() {
        let cfg = BootstrapConfig { m: None, b, seed: seed.wrapping_add(i as u64), normalization: Normalization::Rho };
        let r = bootstrap_variance(&cache, key, &cfg)?;
        if !(r.sigma2_hat > 0.0) {
            return Err(Error::IllPosed(format!("bootstrap variance of {key} is zero; cannot weight by it")));
        }
        w.push(1.0 / r.sigma2_hat);
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    Ok(w.into_iter().map(|x| x / mean).collect())
}

fn cmd_fit(ctx: &Ctx, a: &FitArgs) -> Result<()> {
    let g = load_graph(&a.graph, a.labels)?;
    let mut cfg = FitConfig::new(a.k);
    cfg.seed = ctx.seed;
    cfg.multistart = a.multistart;
    cfg.degree_approx = a.approx.is_some();
    cfg.limits = ctx.limits.clone();
    if let WeightsArg::Bootstrap = a.weights {
        if a.k > 1 {
            cfg.weights = Some(bootstrap_weights(&g, &cfg.key_set(), a.bootstrap_b, ctx.seed, &ctx.limits)?);
        }
    }
    let mut fit: FitResult = fit_block_model(&g, &cfg)?;
    if !a.report_stages {
        fit.atoms.clear();
    }
    fit.manifest = a.out.as_deref().map(|o| file_name(&manifest_path(o)));
    write_json(a.out.as_deref(), &fit)?;
    if let Some(o) = &a.out {
        ctx.write_manifest("fit", a, &[&a.graph], &[o])?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub order: usize,
    pub mean: f64,
    pub probabilities: Vec<f64>,
    pub quantiles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeSummary {
    pub schema: String,
    pub n: usize,
    pub m: usize,
    pub mean_degree: f64,
    /// Quantiles of each normalized column `D^(j) / Dbar^j`.
    pub columns: Vec<ColumnSummary>,
    pub coupling_error: Option<f64>,
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

pub fn summarize_degrees(profile: &DegreeProfile) -> DegreeSummary {
    let probs = vec![0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];
    let columns = (1..=profile.m)
        .map(|j| {
            let mut v = profile.normalized(j);
            v.sort_by(f64::total_cmp);
            let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
            let quantiles = probs
                .iter()
                .map(|&p| {
                    if v.is_empty() {
                        return f64::NAN;
                    }
                    let h = p * (v.len() - 1) as f64;
                    let lo = h.floor() as usize;
                    v[lo] + (h - lo as f64) * (v[h.ceil() as usize] - v[lo])
                })
                .collect();
            ColumnSummary { order: j, mean, probabilities: probs.clone(), quantiles }
        })
        .collect();
    DegreeSummary {
        schema: DEGREE_SUMMARY_SCHEMA.into(),
        n: profile.n(),
        m: profile.m,
        mean_degree: profile.mean_degree(),
        columns,
        coupling_error: None,
        csv: None,
        manifest: None,
    }
}

/// Coupling error of a profile against a model at the given latents.
pub fn coupling_error_for(model: &ModelFile, profile: &DegreeProfile, xi: &[f64]) -> Result<f64> {
    if xi.len() != profile.n() {
        return Err(Error::Domain(format!("{} latents for {} vertices", xi.len(), profile.n())));
    }
    let theta = match model {
        ModelFile::Block(m) => {
            let loc = crate::model::BlockLocator::new(m);
            let blocks: Vec<usize> = xi.iter().map(|&x| loc.block_of(x)).collect();
            theta_profile(LatentModel::Block(m, &blocks), profile.m)
        }
        ModelFile::Graphon { w, .. } => theta_profile(LatentModel::Graphon(w, xi), profile.m),
    };
    joint_coupling_error(profile, &theta)
}

fn cmd_degrees(ctx: &Ctx, a: &DegreesArgs) -> Result<()> {
    if a.m == 0 {
        return Err(Error::Domain("m must be at least 1".into()));
    }
    let g = load_graph(&a.graph, a.labels)?;
    let profile = m_degrees(&g, a.m, ctx.path_budget())?;
    let mut summary = summarize_degrees(&profile);
    let mut inputs: Vec<&Path> = vec![&a.graph];
    if let (Some(mp), Some(lp)) = (&a.model, &a.latents) {
        inputs.push(mp);
        inputs.push(lp);
        let model = ModelFile::load(mp)?;
        let xi = load_latents(lp)?;
        summary.coupling_error = Some(coupling_error_for(&model, &profile, &xi)?);
    }
    if let Some(c) = &a.csv {
        let mut w = create(c)?;
        w.write_all(profile.to_csv().as_bytes())?;
        w.flush()?;
        summary.csv = Some(c.display().to_string());
    }
    summary.manifest = a.out.as_deref().map(|o| file_name(&manifest_path(o)));
    write_json(a.out.as_deref(), &summary)?;
    if let Some(o) = &a.out {
        let mut outs: Vec<&Path> = vec![o];
        if let Some(c) = &a.csv {
            outs.push(c);
        }
        ctx.write_manifest("degrees", a, &inputs, &outs)?;
    }
    Ok(())
}

fn cmd_bootstrap(ctx: &Ctx, a: &BootstrapArgs) -> Result<()> {
    let key: WheelSpec = a.key.parse()?;
    let g = load_graph(&a.graph, a.labels)?;
    let cache = HubCountCache::build(&g, std::slice::from_ref(&key), &ctx.limits)?;
    let cfg = BootstrapConfig {
        m: a.m,
        b: a.b,
        seed: ctx.seed,
        normalization: match a.normalization {
            NormalizationArg::Rho => Normalization::Rho,
            NormalizationArg::Literal => Normalization::Literal,
        },
    };
    let mut r = bootstrap_variance(&cache, &key, &cfg)?;
    if !a.replicates {
        r.replicates.clear();
    }
    r.manifest = a.out.as_deref().map(|o| file_name(&manifest_path(o)));
    write_json(a.out.as_deref(), &r)?;
    if let Some(o) = &a.out {
        ctx.write_manifest("bootstrap", a, &[&a.graph], &[o])?;
    }
    Ok(())
}

/// Mean degree per cell: a constant, or `c * n^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaRule {
    Fixed(f64),
    Power { c: f64, exponent: f64 },
}

impl LambdaRule {
    pub fn lambda(&self, n: usize) -> f64 {
        match self {
            LambdaRule::Fixed(l) => *l,
            LambdaRule::Power { c, exponent } => c * (n as f64).powf(*exponent),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `rho_hat` and `lambda_hat`.
    RhoHat,
    /// Checked noninduced wheel moments for `keys`.
    Qcheck,
    /// Checked induced wheel moments for `keys`.
    Pcheck,
    /// Falling-factorial degree approximation for `keys`.
    DegreeApprox,
    /// Population moments for `keys`.
    Tau,
    /// Block-model fit with `K` blocks.
    Fit,
    /// m-degree coupling error with `degree_m`.
    CouplingError,
    /// Bootstrap variance for `keys`.
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepModel {
    pub name: String,
    #[serde(default)]
    pub block: Option<BlockModel>,
    #[serde(default)]
    pub graphon: Option<Graphon>,
    /// Edge scale for graphons when no lambda rule is given.
    #[serde(default)]
    pub rho: Option<f64>,
}

impl SweepModel {
    fn model_file(&self) -> Result<ModelFile> {
        match (&self.block, &self.graphon) {
            (Some(b), None) => Ok(ModelFile::Block(b.clone())),
            (None, Some(w)) => Ok(ModelFile::Graphon { w: w.clone(), rho: self.rho }),
            _ => Err(Error::InvalidModel(format!("sweep model {:?} needs exactly one of \"block\", \"graphon\"", self.name))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub models: Vec<SweepModel>,
    pub n: Vec<usize>,
    /// Lambda rules; cells multiply over them. Empty uses the model's rho.
    #[serde(default)]
    pub lambda: Vec<LambdaRule>,
    pub replicates: usize,
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub keys: Vec<String>,
    #[serde(default, rename = "K")]
    pub k: Option<usize>,
    #[serde(default)]
    pub degree_m: Option<usize>,
    #[serde(default)]
    pub bootstrap_m: Option<usize>,
    #[serde(default, rename = "bootstrap_B")]
    pub bootstrap_b: Option<usize>,
    /// Overrides the global --seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub cell: usize,
    pub model: String,
    pub n: usize,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepError {
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLine {
    pub schema: String,
    pub cell: usize,
    pub model: String,
    pub n: usize,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub replicate: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Map<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<SweepError>,
}

/// Seed of one replicate, derived from the base seed, cell and replicate.
pub fn derive_seed(base: u64, cell: usize, replicate: usize) -> u64 {
    rng_stream(base, ((cell as u64) << 32) | replicate as u64).gen()
}

pub fn sweep_cells(cfg: &SweepConfig) -> Vec<SweepCell> {
    let lambdas: Vec<Option<&LambdaRule>> = if cfg.lambda.is_empty() { vec![None] } else { cfg.lambda.iter().map(Some).collect() };
    let mut cells = Vec::new();
    for m in &cfg.models {
        for &n in &cfg.n {
            for l in &lambdas {
                cells.push(SweepCell { cell: cells.len(), model: m.name.clone(), n, lambda: l.map(|r| r.lambda(n)) });
            }
        }
    }
    cells
}

fn sweep_metrics(cfg: &SweepConfig, model: &ModelFile, n: usize, rho: Option<f64>, seed: u64, limits: &CountLimits) -> Result<serde_json::Map<String, Value>> {
    let keys: Vec<WheelSpec> = cfg.keys.iter().map(|k| k.parse()).collect::<Result<_>>()?;
    let want_latents = cfg.metrics.contains(&Metric::CouplingError);
    let sample = model.sample(n, rho, seed, want_latents)?;
    let g = sample.graph();
    let mut out = serde_json::Map::new();
    let keyed = |f: &dyn Fn(&WheelSpec) -> Result<f64>| -> Result<Value> {
        let mut o = serde_json::Map::new();
        for k in &keys {
            o.insert(k.name(), json!(f(k)?));
        }
        Ok(Value::Object(o))
    };
    for metric in &cfg.metrics {
        let (name, value) = match metric {
            Metric::RhoHat => {
                out.insert("lambda_hat".into(), json!(g.lambda_hat()));
                ("rho_hat", json!(g.rho_hat()?))
            }
            Metric::Qcheck => ("qcheck", keyed(&|k| wheel_qcheck(g, k, limits))?),
            Metric::Pcheck => {
                let specs: Vec<PatternSpec> = keys.iter().cloned().map(PatternSpec::Wheel).collect();
                let t = moment_table(g, &specs, CountMode::Induced, limits)?;
                let mut o = serde_json::Map::new();
                for e in &t.entries {
                    o.insert(e.pattern.clone(), json!(e.p_check));
                }
                ("pcheck", Value::Object(o))
            }
            Metric::DegreeApprox => {
                let t = moment_table_degree_approx(g, &keys, limits.search_nodes)?;
                let mut o = serde_json::Map::new();
                for e in &t.entries {
                    o.insert(e.pattern.clone(), json!(e.q_check));
                }
                ("degree_approx", Value::Object(o))
            }
            Metric::Tau => match model {
                ModelFile::Block(m) => ("tau", keyed(&|k| Ok(tau_block(m, k)))?),
                ModelFile::Graphon { w, .. } => ("tau", keyed(&|k| Ok(tau_graphon(w, k).value))?),
            },
            Metric::Fit => {
                let mut fc = FitConfig::new(cfg.k.unwrap_or(2));
                fc.seed = seed;
                fc.limits = limits.clone();
                let f = fit_block_model(g, &fc)?;
                ("fit", json!({ "pi": f.pi, "S": f.s, "residual": f.residual, "converged": f.converged }))
            }
            Metric::CouplingError => {
                let m = cfg.degree_m.unwrap_or(2);
                let profile = m_degrees(g, m, limits.search_nodes)?;
                let xi = sample.xi.as_deref().unwrap_or_default();
                ("coupling_error", json!(coupling_error_for(model, &profile, xi)?))
            }
            Metric::Bootstrap => {
                let cache = HubCountCache::build(g, &keys, limits)?;
                let mut o = serde_json::Map::new();
                for (i, k) in keys.iter().enumerate() {
                    let bc = BootstrapConfig {
                        m: cfg.bootstrap_m,
                        b: cfg.bootstrap_b.unwrap_or(500),
                        seed: seed.wrapping_add(i as u64),
                        normalization: Normalization::Rho,
                    };
                    o.insert(k.name(), json!(bootstrap_variance(&cache, k, &bc)?.sigma2_hat));
                }
                ("bootstrap_sigma2", Value::Object(o))
            }
        };
        out.insert(name.into(), value);
    }
    Ok(out)
}

/// Runs every (cell, replicate) of a sweep. Lines come back in cell-major
/// order regardless of scheduling; failures are recorded, not raised.
pub fn run_sweep(cfg: &SweepConfig, base_seed: u64, limits: &CountLimits) -> Result<Vec<SweepLine>> {
    if cfg.models.is_empty() || cfg.n.is_empty() {
        return Err(Error::Domain("sweep needs at least one model and one n".into()));
    }
    let models: Vec<ModelFile> = cfg.models.iter().map(|m| m.model_file()).collect::<Result<_>>()?;
    let base = cfg.seed.unwrap_or(base_seed);
    let cells = sweep_cells(cfg);
    let per_model = cells.len() / models.len();
    let tasks: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.replicates).map(move |r| (c, r))).collect();
    Ok(tasks
        .par_iter()
        .map(|&(c, r)| {
            let cell = &cells[c];
            let model = &models[c / per_model];
            let seed = derive_seed(base, c, r);
            let rho = match cell.lambda {
                Some(l) => Some(l / (cell.n as f64 - 1.0)),
                None => model.rho(),
            };
            let (metrics, error) = match sweep_metrics(cfg, model, cell.n, rho, seed, limits) {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(SweepError { message: e.to_string(), exit_code: e.exit_code() })),
            };
            SweepLine {
                schema: SWEEP_LINE_SCHEMA.into(),
                cell: c,
                model: cell.model.clone(),
                n: cell.n,
                lambda: cell.lambda,
                rho,
                replicate: r,
                seed,
                metrics,
                error,
            }
        })
        .collect())
}

fn cmd_sweep(ctx: &Ctx, a: &SweepArgs) -> Result<()> {
    let cfg: SweepConfig = serde_json::from_reader(BufReader::new(open(&a.config)?))
        .map_err(|e| Error::InvalidModel(format!("{}: {e}", a.config.display())))?;
    let lines = run_sweep(&cfg, ctx.seed, &ctx.limits)?;
    let mut sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for line in &lines {
        serde_json::to_writer(&mut sink, line)?;
        writeln!(sink)?;
    }
    sink.flush()?;
    drop(sink);
    if let Some(o) = &a.out {
        ctx.write_manifest("sweep", a, &[&a.config], &[o])?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    let threads = match cli.threads {
        Some(0) => return Err(Error::Domain("--threads must be at least 1".into())),
        Some(t) => t,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let mut limits = CountLimits::default();
    if let Some(b) = cli.budget {
        limits.search_nodes = b;
    }
    let ctx = Ctx { seed: cli.seed, threads, budget: cli.budget, limits, start: Instant::now() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a),
        Command::Moments(a) => cmd_moments(&ctx, a),
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::Degrees(a) => cmd_degrees(&ctx, a),
        Command::Bootstrap(a) => cmd_bootstrap(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
    })
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
