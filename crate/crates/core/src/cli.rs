//! Batch experiment runner behind the `hoelderflow` binary.
//!
//! A run reads one JSON document, fans the `(seed, replica)` pairs out over a
//! thread pool, writes per-instance files plus aggregates under the output
//! directory, and finishes with `manifest.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{config, Error, Result};
use crate::fields::{split_linearization, CutoffKit, FieldSpec};
use crate::fraccalc::{
    young_bound, young_integral_fracrep, young_integral_rs, FracOrder, MatrixPath, QuadratureConfig, RsIntegral,
};
use crate::paths::{fbm_sample, FbmConfig, FbmMethod, SampledPath};
use crate::solver::{
    doss_bound_check, doss_solve, solve_euler, solve_mild, wong_zakai_check, DossBoundReport, DossProblem,
    SolveOptions, Trajectory, WongZakaiReport, YoungProblem,
};
use crate::stability::{
    gronwall_check, GronwallVerdict, NeighborhoodReport, StabilityExperiment, StabilityParams, StabilityReport,
    UncutReport,
};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    SampleFbm,
    Integrate,
    Solve,
    Doss,
    Stability,
    Gronwall,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SampleFbm => "sample-fbm",
            Command::Integrate => "integrate",
            Command::Solve => "solve",
            Command::Doss => "doss",
            Command::Stability => "stability",
            Command::Gronwall => "gronwall",
            Command::Report => "report",
        }
    }
}

/// Driving path: a fresh fBm sample per seed, or a fixed CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverSpec {
    /// The config's `seed` field is replaced by the run seed.
    Fbm(FbmConfig),
    Csv { path: PathBuf, beta_prime: f64 },
}

impl DriverSpec {
    fn stochastic(&self) -> bool {
        matches!(self, DriverSpec::Fbm(_))
    }

    fn validate(&self) -> Result<()> {
        match self {
            DriverSpec::Fbm(c) => c.validate(),
            DriverSpec::Csv { beta_prime, .. } => {
                if !(*beta_prime > 0.5 && *beta_prime < 1.0) {
                    return Err(config(format!("beta_prime must lie in (1/2, 1), got {beta_prime}")));
                }
                Ok(())
            }
        }
    }

    fn sample(&self, seed: u64, base: &Path) -> Result<SampledPath> {
        match self {
            DriverSpec::Fbm(c) => fbm_sample(&FbmConfig { seed, ..c.clone() }),
            DriverSpec::Csv { path, beta_prime } => SampledPath::read_csv(base.join(path), *beta_prime),
        }
    }
}

/// Scalar functions `f` applied entrywise to the driver to form the integrand `g = f(ω)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrandSpec {
    Identity,
    One,
    Sin,
    Cos,
    Exp,
    Square,
}

impl IntegrandSpec {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            IntegrandSpec::Identity => x,
            IntegrandSpec::One => 1.0,
            IntegrandSpec::Sin => x.sin(),
            IntegrandSpec::Cos => x.cos(),
            IntegrandSpec::Exp => x.exp(),
            IntegrandSpec::Square => x * x,
        }
    }

    /// The `1 × m` row path `f(ω)`, declared with the driver's exponent.
    pub fn integrand(self, omega: &SampledPath) -> Result<MatrixPath> {
        let data = omega.values().iter().map(|&x| self.apply(x)).collect();
        MatrixPath::new(omega.t0(), omega.dt(), 1, omega.dim(), data, omega.beta_prime())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrateSpec {
    pub integrand: IntegrandSpec,
    pub driver: DriverSpec,
    pub s: f64,
    pub t: f64,
    /// Fractional order; defaults to the centre of the admissible window.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub quadrature: Option<QuadratureConfig>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    #[default]
    Euler,
    Mild,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSpec {
    pub field: FieldSpec,
    pub driver: DriverSpec,
    pub u0: Vec<f64>,
    pub horizon: f64,
    /// Solution exponent; defaults to the midpoint of `(1/2, β′)`.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub scheme: SchemeChoice,
    #[serde(default)]
    pub wong_zakai_levels: Option<usize>,
    /// Treat a blow-up as a result instead of a numeric failure.
    #[serde(default)]
    pub allow_blow_up: bool,
}

/// `F̂` for the scalar linear-noise problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DossNonlinearity {
    /// `μ sin x`.
    Sine,
    /// `μ tanh x`.
    Tanh,
    Zero,
}

impl DossNonlinearity {
    fn functions(self, mu: f64) -> (Arc<dyn Fn(f64) -> f64 + Send + Sync>, Arc<dyn Fn(f64) -> f64 + Send + Sync>) {
        match self {
            DossNonlinearity::Sine => (Arc::new(move |x: f64| mu * x.sin()), Arc::new(move |x: f64| mu * x.cos())),
            DossNonlinearity::Tanh => (
                Arc::new(move |x: f64| mu * x.tanh()),
                Arc::new(move |x: f64| mu / x.cosh().powi(2)),
            ),
            DossNonlinearity::Zero => (Arc::new(|_| 0.0), Arc::new(|_| 0.0)),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DossSpec {
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: DossNonlinearity,
    pub hurst: f64,
    pub horizon: f64,
    pub steps: usize,
    pub u0: f64,
    #[serde(default)]
    pub method: FbmMethod,
    /// Also solve with the Euler scheme and report the sup-distance.
    #[serde(default = "default_true")]
    pub compare_euler: bool,
}

fn default_nonlinearity() -> DossNonlinearity {
    DossNonlinearity::Sine
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialValueChoice {
    /// Use `params.u0`.
    #[default]
    Given,
    /// Scale `params.u0` to the admissible-neighborhood radius.
    Neighborhood,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySpec {
    pub field: FieldSpec,
    pub params: StabilityParams,
    pub hurst: f64,
    #[serde(default)]
    pub method: FbmMethod,
    #[serde(default)]
    pub initial_value: InitialValueChoice,
    #[serde(default = "default_true")]
    pub uncut_check: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallSpec {
    /// One value per line, or a CSV whose last column holds the values.
    pub sequence_file: PathBuf,
    pub zeta0: f64,
    pub k: f64,
    pub lambda: f64,
    pub eps: f64,
    pub eps_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    /// Report files or directories holding them.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    SampleFbm(FbmConfig),
    Integrate(IntegrateSpec),
    Solve(SolveSpec),
    Doss(DossSpec),
    Stability(StabilitySpec),
    Gronwall(GronwallSpec),
    Report(ReportSpec),
}

impl Experiment {
    pub fn command(&self) -> Command {
        match self {
            Experiment::SampleFbm(_) => Command::SampleFbm,
            Experiment::Integrate(_) => Command::Integrate,
            Experiment::Solve(_) => Command::Solve,
            Experiment::Doss(_) => Command::Doss,
            Experiment::Stability(_) => Command::Stability,
            Experiment::Gronwall(_) => Command::Gronwall,
            Experiment::Report(_) => Command::Report,
        }
    }

    fn stochastic(&self) -> bool {
        match self {
            Experiment::SampleFbm(_) | Experiment::Doss(_) | Experiment::Stability(_) => true,
            Experiment::Integrate(s) => s.driver.stochastic(),
            Experiment::Solve(s) => s.driver.stochastic(),
            Experiment::Gronwall(_) | Experiment::Report(_) => false,
        }
    }
}

fn default_replicas() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Relative paths are resolved against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
}

impl ExperimentConfig {
    pub fn parse(raw: &str) -> std::result::Result<Self, CliError> {
        serde_json::from_str(raw).map_err(|e| CliError::config(format!("line {}: {e}", e.line())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Failure of a run, carrying the process exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Io(_) | Error::Csv(_) => EXIT_OTHER,
        _ => EXIT_CONFIG,
    }
}

/// The first line of `raw` mentioning `"key"`, if any.
pub fn locate_key(raw: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    raw.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

fn keyed(raw: &str, key: &str, err: Error) -> CliError {
    let code = exit_code(&err);
    let message = match locate_key(raw, key) {
        Some(line) => format!("line {line} (`{key}`): {err}"),
        None => format!("`{key}`: {err}"),
    };
    CliError { code, message }
}

/// Parses `1,2,7..10` (half-open) and `3..=5` (inclusive) seed lists.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, CliError> {
    let bad = |p: &str| CliError::config(format!("invalid seed list entry `{p}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..=") {
            let (a, b): (u64, u64) = (a.parse().map_err(|_| bad(part))?, b.parse().map_err(|_| bad(part))?);
            out.extend(a..=b);
        } else if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.parse().map_err(|_| bad(part))?, b.parse().map_err(|_| bad(part))?);
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    if out.is_empty() {
        return Err(CliError::config("seed list is empty"));
    }
    Ok(out)
}

/// Seed of replica `r` of `seed`; replica 0 uses the seed itself.
pub fn replica_seed(seed: u64, replica: usize) -> u64 {
    if replica == 0 {
        seed
    } else {
        seed ^ (replica as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub output_dir: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub jobs: Option<usize>,
    /// Directory against which relative paths in the config resolve.
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub replicas: usize,
    /// File name to SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
    /// Seconds since the Unix epoch; the only non-reproducible field.
    pub created_unix: u64,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
    pub manifest: Manifest,
}

/// Files created by the current run, removed again if the run fails.
struct Outputs {
    dir: PathBuf,
    created: Mutex<Vec<String>>,
    created_dir: bool,
}

impl Outputs {
    fn path(&self, name: &str) -> PathBuf {
        self.created.lock().unwrap().push(name.to_string());
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.path(name), bytes)?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn names(&self) -> Vec<String> {
        let mut v = self.created.lock().unwrap().clone();
        v.sort();
        v.dedup();
        v
    }

    fn cleanup(&self) {
        for name in self.names() {
            let _ = fs::remove_file(self.dir.join(name));
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs the experiment in `raw` as `command`.
pub fn run(command: Command, raw: &str, opts: &RunOptions) -> std::result::Result<RunSummary, CliError> {
    let mut cfg = ExperimentConfig::parse(raw)?;
    if cfg.experiment.command() != command {
        return Err(CliError::config(format!(
            "line {}: config describes `{}` but the subcommand is `{}`",
            locate_key(raw, "experiment").unwrap_or(1),
            cfg.experiment.command().name(),
            command.name()
        )));
    }
    if let Some(seeds) = &opts.seeds {
        cfg.seeds = seeds.clone();
    }
    if cfg.replicas == 0 {
        return Err(keyed(raw, "replicas", config("replicas must be at least 1")));
    }
    if cfg.experiment.stochastic() && cfg.seeds.is_empty() {
        return Err(keyed(raw, "seeds", config("seeds must be non-empty for this subcommand")));
    }
    validate_experiment(&cfg.experiment, raw)?;

    let dir = match (&opts.output_dir, &cfg.output_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => opts.base_dir.join(d),
        (None, None) => return Err(CliError::config("no output directory given (config `output_dir` or --output-dir)")),
    };
    let created_dir = !dir.exists();
    fs::create_dir_all(&dir).map_err(|e| CliError { code: EXIT_OTHER, message: format!("{}: {e}", dir.display()) })?;
    let out = Outputs { dir: dir.clone(), created: Mutex::new(Vec::new()), created_dir };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError { code: EXIT_OTHER, message: e.to_string() })?;
    let result = pool.install(|| execute(&cfg, &out, &opts.base_dir));
    if let Err(e) = result {
        out.cleanup();
        return Err(CliError { code: exit_code(&e), message: e.to_string() });
    }

    let files = out.names();
    let mut hashes = BTreeMap::new();
    for name in &files {
        let bytes = fs::read(dir.join(name)).map_err(|e| CliError { code: EXIT_OTHER, message: e.to_string() })?;
        hashes.insert(name.clone(), sha256_hex(&bytes));
    }
    let manifest = Manifest {
        tool: "hoelderflow".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: command.name().into(),
        config_sha256: sha256_hex(cfg.to_json().as_bytes()),
        seeds: cfg.seeds.clone(),
        replicas: cfg.replicas,
        files: hashes,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(dir.join(MANIFEST), text).map_err(|e| {
        out.cleanup();
        CliError { code: EXIT_OTHER, message: e.to_string() }
    })?;
    Ok(RunSummary { output_dir: dir, files, manifest })
}

fn validate_experiment(exp: &Experiment, raw: &str) -> std::result::Result<(), CliError> {
    match exp {
        Experiment::SampleFbm(c) => c.validate().map_err(|e| keyed(raw, "sample-fbm", e)),
        Experiment::Integrate(s) => {
            s.driver.validate().map_err(|e| keyed(raw, "driver", e))?;
            if !(s.t > s.s) {
                return Err(keyed(raw, "t", config("t must exceed s")));
            }
            Ok(())
        }
        Experiment::Solve(s) => {
            s.driver.validate().map_err(|e| keyed(raw, "driver", e))?;
            s.field.build().map_err(|e| keyed(raw, "field", e))?;
            Ok(())
        }
        Experiment::Doss(s) => {
            FbmConfig { method: s.method, ..FbmConfig::scalar(s.hurst, s.horizon, s.steps, 0) }
                .validate()
                .map_err(|e| keyed(raw, "hurst", e))
        }
        Experiment::Stability(s) => {
            s.params.validate().map_err(|e| keyed(raw, "params", e))?;
            let pair = s.field.build().map_err(|e| keyed(raw, "field", e))?;
            pair.check_origin_assumptions().map_err(|e| keyed(raw, "field", e))?;
            if !(s.hurst > s.params.beta_prime && s.hurst < 1.0) {
                return Err(keyed(raw, "hurst", config("hurst must lie in (beta_prime, 1)")));
            }
            Ok(())
        }
        Experiment::Gronwall(_) | Experiment::Report(_) => Ok(()),
    }
}

fn instances(cfg: &ExperimentConfig) -> Vec<(u64, usize)> {
    let seeds = if cfg.seeds.is_empty() { vec![0] } else { cfg.seeds.clone() };
    seeds.iter().flat_map(|&s| (0..cfg.replicas).map(move |r| (s, r))).collect()
}

fn tag(seed: u64, replica: usize, replicas: usize) -> String {
    if replicas > 1 {
        format!("seed{seed}_r{replica}")
    } else {
        format!("seed{seed}")
    }
}

fn execute(cfg: &ExperimentConfig, out: &Outputs, base: &Path) -> Result<()> {
    let inst = instances(cfg);
    let reps = cfg.replicas;
    match &cfg.experiment {
        Experiment::SampleFbm(c) => inst.par_iter().try_for_each(|&(s, r)| {
            let path = fbm_sample(&FbmConfig { seed: replica_seed(s, r), ..c.clone() })?;
            let t = tag(s, r, reps);
            path.write_csv(out.path(&format!("fbm_{t}.csv")))?;
            path.write_metadata(out.path(&format!("fbm_{t}.json")))
        }),
        Experiment::Integrate(spec) => inst.par_iter().try_for_each(|&(s, r)| {
            let rec = integrate_one(spec, replica_seed(s, r), base)?;
            out.write_json(&format!("integrate_{}.json", tag(s, r, reps)), &rec)
        }),
        Experiment::Solve(spec) => inst.par_iter().try_for_each(|&(s, r)| solve_one(spec, s, r, reps, out, base)),
        Experiment::Doss(spec) => inst.par_iter().try_for_each(|&(s, r)| doss_one(spec, s, r, reps, out)),
        Experiment::Stability(spec) => {
            let rows: Vec<StabilityRecord> =
                inst.par_iter().map(|&(s, r)| stability_one(spec, s, r)).collect::<Result<_>>()?;
            for rec in &rows {
                out.write_json(&format!("stability_{}.json", tag(rec.seed, rec.replica, reps)), rec)?;
            }
            write_stability_aggregate(&rows, &out.path("stability.csv"))
        }
        Experiment::Gronwall(spec) => {
            let v = read_sequence(&base.join(&spec.sequence_file))?;
            let verdict = gronwall_check(&v, spec.zeta0, spec.k, spec.lambda, spec.eps, spec.eps_hat);
            out.write_json("gronwall.json", &GronwallRecord { length: v.len(), verdict })
        }
        Experiment::Report(spec) => {
            let inputs: Vec<PathBuf> = spec.inputs.iter().map(|p| base.join(p)).collect();
            emit_plot_data(&inputs, out)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegrateRecord {
    pub seed: u64,
    pub alpha: f64,
    pub rs: RsIntegral,
    pub rs_extrapolated: Vec<f64>,
    pub fracrep: Vec<f64>,
    /// Only for windows of length at most 1.
    pub young_bound: Option<f64>,
}

fn integrate_one(spec: &IntegrateSpec, seed: u64, base: &Path) -> Result<IntegrateRecord> {
    let omega = spec.driver.sample(seed, base)?;
    let g = spec.integrand.integrand(&omega)?;
    let alpha = match spec.alpha {
        Some(a) => FracOrder::new(a)?,
        None => FracOrder::center(g.beta(), omega.beta_prime())?,
    };
    let rs = young_integral_rs(&g, &omega, spec.s, spec.t)?;
    let quad = spec.quadrature.unwrap_or_default();
    let fr = young_integral_fracrep(&g, &omega, spec.s, spec.t, alpha, &quad)?;
    let bound = if spec.t - spec.s <= 1.0 { Some(young_bound(&g, &omega, spec.s, spec.t, alpha)?) } else { None };
    Ok(IntegrateRecord {
        seed,
        alpha: alpha.value(),
        rs_extrapolated: rs.extrapolated(2.0 * omega.beta_prime() - 1.0),
        rs,
        fracrep: fr.as_slice().to_vec(),
        young_bound: bound,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveRecord {
    pub seed: u64,
    pub replica: usize,
    pub beta: f64,
    pub euler_blow_up: Option<usize>,
    pub mild_blow_up: Option<usize>,
    pub euler_final: Option<Vec<f64>>,
    pub mild_final: Option<Vec<f64>>,
    pub euler_mild_distance: Option<f64>,
    pub wong_zakai: Option<WongZakaiReport>,
}

fn solve_one(spec: &SolveSpec, seed: u64, replica: usize, reps: usize, out: &Outputs, base: &Path) -> Result<()> {
    let omega = spec.driver.sample(replica_seed(seed, replica), base)?;
    let pair = spec.field.build()?;
    let beta = spec.beta.unwrap_or(0.5 * (0.5 + omega.beta_prime()));
    let problem = YoungProblem { pair, omega, u0: DVector::from_column_slice(&spec.u0), horizon: spec.horizon, beta };
    let t = tag(seed, replica, reps);
    let mut rec = SolveRecord {
        seed,
        replica,
        beta,
        euler_blow_up: None,
        mild_blow_up: None,
        euler_final: None,
        mild_final: None,
        euler_mild_distance: None,
        wong_zakai: None,
    };
    let check = |tr: &Trajectory, name: &str| -> Result<()> {
        match tr.blow_up {
            Some(i) if !spec.allow_blow_up => Err(Error::Numeric(format!(
                "{name} solution exceeded the blow-up threshold after step {i} (seed {seed})"
            ))),
            _ => Ok(()),
        }
    };
    let mut euler = None;
    if matches!(spec.scheme, SchemeChoice::Euler | SchemeChoice::Both) {
        let tr = solve_euler(&problem, SolveOptions::default())?;
        check(&tr, "euler")?;
        tr.write_csv(out.path(&format!("solve_{t}_euler.csv")))?;
        tr.write_norms_csv(out.path(&format!("solve_{t}_euler_norms.csv")))?;
        rec.euler_blow_up = tr.blow_up;
        rec.euler_final = Some(tr.last().as_slice().to_vec());
        euler = Some(tr);
    }
    if matches!(spec.scheme, SchemeChoice::Mild | SchemeChoice::Both) {
        let lin = split_linearization(&problem.pair)?;
        let tr = solve_mild(&lin, &problem, SolveOptions::default())?;
        check(&tr, "mild")?;
        tr.write_csv(out.path(&format!("solve_{t}_mild.csv")))?;
        tr.write_norms_csv(out.path(&format!("solve_{t}_mild_norms.csv")))?;
        rec.mild_blow_up = tr.blow_up;
        rec.mild_final = Some(tr.last().as_slice().to_vec());
        rec.euler_mild_distance = euler.as_ref().map(|e| e.sup_distance(&tr));
    }
    if let Some(levels) = spec.wong_zakai_levels {
        rec.wong_zakai = Some(wong_zakai_check(&problem, levels)?);
    }
    out.write_json(&format!("solve_{t}.json"), &rec)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DossRecord {
    pub seed: u64,
    pub replica: usize,
    pub bound: DossBoundReport,
    /// `log|u(T)| / T`.
    pub log_rate: f64,
    pub euler_distance: Option<f64>,
}

fn doss_one(spec: &DossSpec, seed: u64, replica: usize, reps: usize, out: &Outputs) -> Result<()> {
    let omega = fbm_sample(&FbmConfig {
        method: spec.method,
        ..FbmConfig::scalar(spec.hurst, spec.horizon, spec.steps, replica_seed(seed, replica))
    })?;
    let (f, df) = spec.nonlinearity.functions(spec.mu);
    let problem = DossProblem::new(spec.lambda, spec.gamma, spec.mu, f, omega, spec.u0, spec.horizon)?;
    let tr = doss_solve(&problem)?;
    let bound = doss_bound_check(&tr, &problem);
    let logs = tr.log_abs.as_ref().expect("doss trajectories carry log magnitudes");
    let euler_distance = if spec.compare_euler {
        let pair = problem.field_pair(move |x| df(x), 10.0)?;
        let yp = YoungProblem {
            pair,
            omega: problem.omega.clone(),
            u0: DVector::from_element(1, spec.u0),
            horizon: spec.horizon,
            beta: 0.5 * (0.5 + problem.omega.beta_prime()),
        };
        Some(solve_euler(&yp, SolveOptions { unit_norms: false })?.sup_distance(&tr))
    } else {
        None
    };
    let t = tag(seed, replica, reps);
    let mut w = csv::Writer::from_path(out.path(&format!("doss_{t}.csv")))?;
    w.write_record(["t", "u", "log_abs", "bound"])?;
    let w0 = problem.omega.point(0)[0];
    for i in 0..tr.len() {
        let time = tr.time(i);
        let b = (spec.gamma * (problem.omega.point(i)[0] - w0).abs() + (spec.mu - spec.lambda) * time).exp()
            * spec.u0.abs();
        w.write_record([format!("{time}"), format!("{}", tr.values[i]), format!("{}", logs[i]), format!("{b}")])?;
    }
    w.flush()?;
    let rec = DossRecord { seed, replica, bound, log_rate: logs[logs.len() - 1] / spec.horizon, euler_distance };
    out.write_json(&format!("doss_{t}.json"), &rec)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub seed: u64,
    pub replica: usize,
    pub u0: Vec<f64>,
    pub neighborhood: Option<NeighborhoodReport>,
    pub uncut: Option<UncutReport>,
    pub report: StabilityReport,
}

fn stability_one(spec: &StabilitySpec, seed: u64, replica: usize) -> Result<StabilityRecord> {
    let p = &spec.params;
    let n = p.n_intervals + 1;
    let omega = fbm_sample(&FbmConfig {
        method: spec.method,
        beta_prime: Some(p.beta_prime),
        ..FbmConfig::scalar(spec.hurst, n as f64, n * p.steps_per_unit, replica_seed(seed, replica))
    })?;
    let pair = spec.field.build()?;
    let lin = split_linearization(&pair)?;
    let exp = StabilityExperiment::prepare(&lin, &pair, &CutoffKit::quintic(), p, &omega)?;
    let (u0, neighborhood) = match spec.initial_value {
        InitialValueChoice::Given => (DVector::from_column_slice(&p.u0), None),
        InitialValueChoice::Neighborhood => {
            let nb = exp.admissible_neighborhood()?;
            let dir = DVector::from_column_slice(&p.u0);
            let dir = if dir.norm() > 0.0 { dir.normalize() } else { DVector::from_fn(lin.dim(), |i, _| f64::from(i == 0)) };
            (dir * nb.radius, Some(nb))
        }
    };
    let report = exp.run(&u0)?;
    let uncut = if spec.uncut_check { Some(exp.uncut_consistency(&omega, &report)?) } else { None };
    Ok(StabilityRecord { seed, replica, u0: u0.as_slice().to_vec(), neighborhood, uncut, report })
}

fn write_stability_aggregate(rows: &[StabilityRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed",
        "replica",
        "u0_norm",
        "fitted_rate",
        "fit_residual",
        "theorem_rate",
        "escaped",
        "flags_all_false",
        "gronwall_hypothesis",
        "gronwall_conclusion",
        "uncut_distance",
    ])?;
    for r in rows {
        let rep = &r.report;
        w.write_record([
            r.seed.to_string(),
            r.replica.to_string(),
            format!("{}", rep.u0_norm),
            format!("{}", rep.fitted_rate),
            format!("{}", rep.fit_residual),
            format!("{}", rep.theorem_rate),
            rep.escaped.to_string(),
            rep.all_flags_false().to_string(),
            rep.gronwall.hypothesis_holds.to_string(),
            rep.gronwall.conclusion_holds.map(|b| b.to_string()).unwrap_or_default(),
            r.uncut.and_then(|u| u.distance).map(|d| format!("{d}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GronwallRecord {
    pub length: usize,
    pub verdict: GronwallVerdict,
}

/// One number per line, or the last column of a CSV with a header.
pub fn read_sequence(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() && i == 0 => continue,
            Err(_) => return Err(config(format!("{}:{}: `{field}` is not a number", path.display(), i + 1))),
        }
    }
    if out.is_empty() {
        return Err(config(format!("{}: empty sequence", path.display())));
    }
    if out.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(config(format!("{}: sequence values must be finite and non-negative", path.display())));
    }
    Ok(out)
}

const PLOT_SCRIPT: &str = "\
# Plot stubs for the data files in this directory.
# stability_*.dat: n  log_norm  reference   (reference: log(k|u0|) - n * theorem_rate)
# doss_*.dat:      t  |u|  bound
set key left bottom
files = system('ls stability_*.dat 2>/dev/null')
plot for [f in files] f using 1:2 with linespoints title f, \\
     for [f in files] f using 1:3 with lines dashtype 2 notitle
pause -1
files = system('ls doss_*.dat 2>/dev/null')
set logscale y
plot for [f in files] f using 1:2 with lines title f, \\
     for [f in files] f using 1:3 with lines dashtype 2 notitle
pause -1
";

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Converts stability reports and Doss trajectories into whitespace-delimited
/// data files plus a gnuplot stub. Missing or unrecognised inputs are skipped
/// with a warning.
fn emit_plot_data(inputs: &[PathBuf], out: &Outputs) -> Result<()> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
            entries.sort();
            files.extend(entries);
        } else if p.exists() {
            files.push(p.clone());
        } else {
            log::warn!("report input {} does not exist; skipped", p.display());
        }
    }
    let mut written = 0;
    for f in &files {
        let name = stem(f);
        let ext = f.extension().and_then(|e| e.to_str()).unwrap_or("");
        if name.starts_with("stability_") && ext == "json" {
            let v: Value = serde_json::from_str(&fs::read_to_string(f)?)?;
            let rep = &v["report"];
            let (Some(norms), Some(k), Some(u0), Some(rate)) = (
                rep["norms"].as_array(),
                rep["k_used"].as_f64(),
                rep["u0_norm"].as_f64(),
                rep["theorem_rate"].as_f64(),
            ) else {
                log::warn!("{} is not a stability report; skipped", f.display());
                continue;
            };
            let mut s = String::from("# n log_norm reference\n");
            for (n, v) in norms.iter().enumerate() {
                let lv = v.as_f64().map(f64::ln).unwrap_or(f64::NAN);
                s.push_str(&format!("{n} {lv} {}\n", (k * u0).ln() - n as f64 * rate));
            }
            out.write(&format!("{name}.dat"), s.as_bytes())?;
            written += 1;
        } else if name.starts_with("doss_") && ext == "csv" {
            let mut rdr = csv::Reader::from_path(f)?;
            let mut s = String::from("# t abs_u bound\n");
            for rec in rdr.records() {
                let rec = rec?;
                let (Some(t), Some(u), Some(b)) = (rec.get(0), rec.get(1), rec.get(3)) else {
                    continue;
                };
                let u: f64 = u.parse().map_err(|_| config(format!("{}: bad value `{u}`", f.display())))?;
                s.push_str(&format!("{t} {} {b}\n", u.abs()));
            }
            out.write(&format!("{name}.dat"), s.as_bytes())?;
            written += 1;
        } else if !(name == "manifest" || ext == "dat" || ext == "gp") {
            log::warn!("{} is not a recognised report; skipped", f.display());
        }
    }
    if written == 0 {
        log::warn!("no reports found; nothing to plot");
        return Ok(());
    }
    out.write("plot.gp", PLOT_SCRIPT.as_bytes())
}
