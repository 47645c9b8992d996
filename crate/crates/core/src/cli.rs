//! Command-line front end: `simulate`, `test` and `montecarlo`.
//!
//! Exit codes: 0 no rejection, 3 rejection, 64 usage error or missing
//! config, 65 bad config or data, 70 numerical failure, 73 output file
//! could not be written. Errors print one line to standard error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Error;
use crate::expr::Expr;
use crate::harness::{self, Dynamics, ObserverChoice, Scenario, ScenarioResult};
use crate::model::{
    constant_fn, JumpSpec, ModelKind, NoiseDist, NoiseSpec, ObservationSeries, ParamBounds, ParametricVolModel, SdeSpec,
    UniformGrid,
};
use crate::sim::{derive_seed, DEFAULT_EULER_SUBSTEPS};
use crate::testing::{asymptotic_test, bootstrap_test, TestReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECT: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_SOFTWARE: i32 = 70;
pub const EXIT_CANT_CREATE: i32 = 73;

pub const SEED_ENV: &str = "SMGOF_SEED";

#[derive(Debug, Parser)]
#[command(name = "smgof", version, about = "Wavelet goodness-of-fit tests for volatility-like processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed. Falls back to $SMGOF_SEED, then the config's `seed`, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads: a positive integer or "auto".
    #[arg(long, default_value = "auto")]
    pub parallelism: String,
    /// Record wall-clock times in the output (makes output non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Asymptotic,
    Bootstrap,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a path (or its observations) and write it as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write the observation series (t, Y, Xhat...) instead of the path.
        #[arg(long)]
        observations: bool,
    },
    /// Run goodness-of-fit tests on observed or simulated data.
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = MethodArg::Both)]
        method: MethodArg,
        #[arg(long, default_value_t = 200)]
        bootstrap_reps: usize,
    },
    /// Run rejection-rate experiments: the built-in table or the config's scenarios.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Fraction of the 1000 x 1000 replication design.
        #[arg(long, default_value_t = 0.2)]
        scale: f64,
        /// Also write a formatted text table to this file.
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

/// Error carrying its exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    fn data(message: impl Into<String>) -> Self {
        Self::new(EXIT_DATA, message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_numeric() { EXIT_SOFTWARE } else { EXIT_DATA };
        Self::new(code, e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn default_kind() -> ModelKind {
    ModelKind::LocalVol
}
fn default_n() -> usize {
    200
}
fn default_x0() -> f64 {
    1.0
}
fn default_substeps() -> usize {
    DEFAULT_EULER_SUBSTEPS
}
fn zero() -> String {
    "0".into()
}
fn one() -> String {
    "1".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedModel {
    Constant,
    Proportional,
}

/// Null model: a named model, a linear model `theta . basis` given by basis
/// expressions, or a general mean expression in `theta0, theta1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NullModelConfig {
    Named(NamedModel),
    Linear {
        linear: Vec<String>,
    },
    Expression {
        mu: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upper: Option<Vec<f64>>,
    },
}

impl Default for NullModelConfig {
    fn default() -> Self {
        Self::Named(NamedModel::Constant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Noise variance as an expression in `t` and `x`.
    pub variance: String,
    #[serde(default = "gaussian")]
    pub dist: NoiseDist,
}

fn gaussian() -> NoiseDist {
    NoiseDist::Gaussian
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolConfig {
    #[serde(default = "zero")]
    pub drift: String,
    pub diffusion: String,
    pub x0: f64,
}

/// Model, dynamics and sample size of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_kind")]
    pub kind: ModelKind,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default = "default_substeps")]
    pub euler_substeps: usize,
    /// Price drift, an expression in `t` and `x`.
    #[serde(default = "zero")]
    pub drift: String,
    /// Brownian loading `sqrt(mu_t)` of the price. Unused for `stoch_vol`.
    #[serde(default = "one")]
    pub diffusion: String,
    #[serde(default)]
    pub jumps: Option<JumpSpec>,
    /// Required for `microstructure`.
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    /// Spot-variance dynamics, required for `stoch_vol`; state is `[x1, x2]`.
    #[serde(default)]
    pub vol: Option<VolConfig>,
    #[serde(default)]
    pub null_model: NullModelConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub row: String,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub mc_reps: Option<usize>,
    #[serde(default)]
    pub bootstrap_reps: Option<usize>,
    #[serde(default)]
    pub alpha_levels: Option<Vec<f64>>,
}

/// Top-level configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    /// Observation CSV for `test`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Custom scenario list for `montecarlo`; the built-in table otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<Vec<ScenarioConfig>>,
}

fn parse_expr(what: &str, src: &str, max_state: usize, params_allowed: bool) -> CliResult<Expr> {
    let e = Expr::parse(src).map_err(|e| CliError::data(format!("{what}: {e} in '{src}'")))?;
    if e.state_dim() > max_state {
        return Err(CliError::data(format!(
            "{what}: '{src}' uses state component {} but only {max_state} available",
            e.state_dim()
        )));
    }
    if !params_allowed && e.param_dim() > 0 {
        return Err(CliError::data(format!("{what}: '{src}' may not reference theta")));
    }
    Ok(e)
}

impl ModelConfig {
    pub fn null_model(&self) -> CliResult<ParametricVolModel> {
        let kind = self.kind;
        let q = kind.covariate_dim();
        match &self.null_model {
            NullModelConfig::Named(NamedModel::Constant) => Ok(ParametricVolModel::constant(kind)),
            NullModelConfig::Named(NamedModel::Proportional) => Ok(ParametricVolModel::proportional(kind)),
            NullModelConfig::Linear { linear } => {
                if linear.is_empty() {
                    return Err(CliError::data("null_model.linear needs at least one basis expression"));
                }
                let basis: Vec<Expr> = linear
                    .iter()
                    .map(|s| parse_expr("null_model.linear", s, q, false))
                    .collect::<CliResult<_>>()?;
                let p = basis.len();
                Ok(ParametricVolModel::linear(
                    "linear",
                    kind,
                    p,
                    Arc::new(move |t, x, out| {
                        for (o, e) in out.iter_mut().zip(&basis) {
                            *o = e.eval(t, x, &[]);
                        }
                    }),
                ))
            }
            NullModelConfig::Expression { mu, lower, upper } => {
                let e = parse_expr("null_model.mu", mu, q, true)?;
                let p = e.param_dim();
                if p == 0 {
                    return Err(CliError::data("null_model.mu must reference at least one parameter"));
                }
                let model = ParametricVolModel::with_mean("expression", kind, p, e.param_fn());
                match (lower, upper) {
                    (None, None) => Ok(model),
                    (l, u) => {
                        let b = crate::model::DEFAULT_PARAM_BOUND;
                        let lower = l.clone().unwrap_or_else(|| vec![-b; p]);
                        let upper = u.clone().unwrap_or_else(|| vec![b; p]);
                        Ok(model.with_bounds(ParamBounds::new(lower, upper)?)?)
                    }
                }
            }
        }
    }

    pub fn dynamics(&self) -> CliResult<Dynamics> {
        let drift = parse_expr("drift", &self.drift, 1, false)?.scalar_fn();
        let diffusion = parse_expr("diffusion", &self.diffusion, 1, false)?.scalar_fn();
        let mut price = SdeSpec::new(drift, diffusion, self.x0);
        if let Some(j) = self.jumps {
            price = price.with_jumps(j);
        }
        Ok(match self.kind {
            ModelKind::LocalVol | ModelKind::Jumps => Dynamics::Diffusion(price),
            ModelKind::Microstructure => {
                let noise = self
                    .noise
                    .as_ref()
                    .ok_or_else(|| CliError::data("microstructure model needs a `noise` section"))?;
                let variance = parse_expr("noise.variance", &noise.variance, 1, false)?.scalar_fn();
                Dynamics::Noisy {
                    price,
                    noise: NoiseSpec {
                        variance,
                        dist: noise.dist,
                    },
                }
            }
            ModelKind::StochVol => {
                let vol = self
                    .vol
                    .as_ref()
                    .ok_or_else(|| CliError::data("stoch_vol model needs a `vol` section"))?;
                let drift = parse_expr("drift", &self.drift, 2, false)?.scalar_fn();
                let mut price = SdeSpec::new(drift, constant_fn(0.0), self.x0);
                price.jumps = self.jumps;
                let vol = SdeSpec::new(
                    parse_expr("vol.drift", &vol.drift, 2, false)?.scalar_fn(),
                    parse_expr("vol.diffusion", &vol.diffusion, 2, false)?.scalar_fn(),
                    vol.x0,
                );
                Dynamics::LatentVol { price, vol }
            }
        })
    }

    /// Scenario for this model with the given replication counts.
    pub fn scenario(&self, name: &str, row: &str, mc_reps: usize, bootstrap_reps: usize, base_seed: u64, alphas: Vec<f64>) -> CliResult<Scenario> {
        Ok(Scenario {
            name: name.to_string(),
            row: row.to_string(),
            kind: self.kind,
            observer: ObserverChoice::for_kind(self.kind),
            null_model: self.null_model()?,
            dynamics: self.dynamics()?,
            n: self.n,
            alpha_levels: alphas,
            mc_reps,
            bootstrap_reps,
            base_seed,
            euler_substeps: self.euler_substeps,
        })
    }
}

/// Reads and parses a config file. A missing file is a usage error.
pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("bad config {}: {e}", path.display())))
}

/// Observation CSV: header `t,Y,Xhat1[,Xhat2]`, 17 significant digits.
pub fn write_observations<W: Write>(series: &ObservationSeries, mut w: W) -> io::Result<()> {
    write!(w, "t,Y")?;
    for k in 0..series.covariate_dim() {
        write!(w, ",Xhat{}", k + 1)?;
    }
    writeln!(w)?;
    let grid = series.grid();
    for i in 0..series.n() {
        write!(w, "{:.16e},{:.16e}", grid.time(i), series.y()[i])?;
        for v in series.xhat(i) {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parses an observation CSV for a model of kind `kind`. Lines starting with
/// `#` are ignored. Times must be `i / n`.
pub fn read_observations<R: io::Read>(r: R, kind: ModelKind) -> CliResult<ObservationSeries> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers().map_err(|e| CliError::data(format!("observation CSV: {e}")))?.clone();
    let q = kind.covariate_dim();
    let names: Vec<&str> = header.iter().collect();
    let ok = names.len() == 2 + q
        && names[0] == "t"
        && names[1] == "Y"
        && names[2..].iter().all(|h| h.starts_with("Xhat"));
    if !ok {
        return Err(CliError::data(format!(
            "observation CSV header must be t,Y followed by {q} Xhat column(s), got '{}'",
            names.join(",")
        )));
    }
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut xhat = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::data(format!("observation CSV: {e}")))?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CliError::data(format!("observation CSV row {}: {e}", line + 1)))?;
        t.push(vals[0]);
        y.push(vals[1]);
        xhat.extend_from_slice(&vals[2..]);
    }
    let grid = UniformGrid::new(y.len())?;
    for (i, &ti) in t.iter().enumerate() {
        if (ti - grid.time(i)).abs() > 1e-9 {
            return Err(CliError::data(format!(
                "observation CSV row {}: time {ti} is not {i}/{}",
                i + 1,
                y.len()
            )));
        }
    }
    Ok(ObservationSeries::new(grid, y, xhat, q, kind)?)
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        return v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("{SEED_ENV} must be an unsigned 64-bit integer, got '{v}'")));
    }
    Ok(config.unwrap_or(0))
}

fn comment_header(command: &str, seed: u64, resolved: &serde_json::Value) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# smgof {command} {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# seed: {seed}");
    let _ = writeln!(s, "# config: {resolved}");
    s
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::new(EXIT_CANT_CREATE, format!("cannot write {}: {e}", p.display()))),
        None => io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::new(EXIT_CANT_CREATE, format!("cannot write standard output: {e}"))),
    }
}

fn parallelism(spec: &str) -> CliResult<Option<usize>> {
    if spec == "auto" {
        return Ok(None);
    }
    match spec.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(Some(k)),
        _ => Err(CliError::usage(format!("--parallelism must be a positive integer or 'auto', got '{spec}'"))),
    }
}

fn require_config(common: &Common) -> CliResult<(RunConfig, PathBuf)> {
    let path = common.config.clone().ok_or_else(|| CliError::usage("--config is required"))?;
    Ok((load_config(&path)?, path))
}

fn run_simulate(common: &Common, observations: bool) -> CliResult<i32> {
    let (cfg, _) = require_config(common)?;
    let seed = resolve_seed(common.seed, cfg.seed)?;
    let scenario = cfg.model.scenario("simulate", "", 1, harness::MIN_BOOTSTRAP_REPS, seed, vec![0.05])?;
    let path = scenario.simulate_path(seed)?;
    let resolved = json!({ "config": cfg, "observations": observations });
    let mut buf = comment_header("simulate", seed, &resolved).into_bytes();
    if observations {
        write_observations(&scenario.observe_path(&path)?, &mut buf).expect("write to memory");
    } else {
        path.write_csv(&mut buf).expect("write to memory");
    }
    emit(common.out.as_deref(), &buf)?;
    Ok(EXIT_OK)
}

fn run_test(common: &Common, alpha: f64, method: MethodArg, bootstrap_reps: usize) -> CliResult<i32> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::usage(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    if method != MethodArg::Asymptotic && bootstrap_reps < harness::MIN_BOOTSTRAP_REPS {
        return Err(CliError::usage(format!(
            "--bootstrap-reps must be at least {}, got {bootstrap_reps}",
            harness::MIN_BOOTSTRAP_REPS
        )));
    }
    let (cfg, cfg_path) = require_config(common)?;
    let seed = resolve_seed(common.seed, cfg.seed)?;
    let start = Instant::now();
    let scenario = cfg.model.scenario("test", "", 1, bootstrap_reps.max(harness::MIN_BOOTSTRAP_REPS), seed, vec![alpha])?;
    let series = match &cfg.data {
        Some(rel) => {
            let p = cfg_path.parent().unwrap_or(Path::new(".")).join(rel);
            let f = fs::File::open(&p).map_err(|e| CliError::data(format!("cannot read data {}: {e}", p.display())))?;
            read_observations(io::BufReader::new(f), cfg.model.kind)?
        }
        None => scenario.observe(seed)?,
    };
    let mut reports: Vec<TestReport> = Vec::new();
    if method != MethodArg::Bootstrap {
        reports.push(asymptotic_test(&series, &scenario.null_model, alpha)?);
    }
    if method != MethodArg::Asymptotic {
        let null = scenario.null_simulator(&series);
        reports.push(bootstrap_test(&series, &scenario.null_model, &null, alpha, bootstrap_reps, derive_seed(seed, 1))?);
    }
    let reject = reports.iter().any(|r| r.reject);
    let mut doc = json!({
        "command": "test",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": cfg,
        "options": { "alpha": alpha, "method": method, "bootstrap_reps": bootstrap_reps },
        "null_simulation": {
            "drift": "0",
            "jumps": "none",
            "euler_substeps": scenario.euler_substeps,
            "observer": format!("{:?}", scenario.observer),
        },
        "reports": reports,
        "reject": reject,
    });
    if common.timing {
        doc["wall_time_sec"] = json!(start.elapsed().as_secs_f64());
    }
    let mut text = serde_json::to_string_pretty(&doc).expect("serialisable");
    text.push('\n');
    emit(common.out.as_deref(), text.as_bytes())?;
    Ok(if reject { EXIT_REJECT } else { EXIT_OK })
}

fn run_montecarlo(common: &Common, scale: f64, table: Option<&Path>) -> CliResult<i32> {
    let cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let seed = resolve_seed(common.seed, cfg.seed)?;
    let (mc, boot) = harness::scaled_reps(scale).map_err(|e| CliError::usage(e.to_string()))?;
    let scenarios: Vec<Scenario> = match &cfg.scenarios {
        None => harness::table1_scenarios(scale, seed)?,
        Some(list) => list
            .iter()
            .enumerate()
            .map(|(k, s)| {
                s.model.scenario(
                    &s.name,
                    &s.row,
                    s.mc_reps.unwrap_or(mc),
                    s.bootstrap_reps.unwrap_or(boot),
                    derive_seed(seed, k as u64),
                    s.alpha_levels.clone().unwrap_or_else(|| harness::TABLE1_ALPHAS.to_vec()),
                )
            })
            .collect::<CliResult<_>>()?,
    };
    let results: Vec<ScenarioResult> = scenarios.iter().map(harness::run_scenario).collect::<Result<_, _>>()?;
    let resolved = json!({
        "config": cfg,
        "scale": scale,
        "suite": if cfg.scenarios.is_some() { "custom" } else { "table1" },
    });
    let header = comment_header("montecarlo", seed, &resolved);
    let mut buf = header.clone().into_bytes();
    harness::write_results_csv(&results, &mut buf, common.timing)?;
    emit(common.out.as_deref(), &buf)?;
    if let Some(p) = table {
        let text = format!("{header}{}", harness::format_table(&results));
        fs::write(p, text).map_err(|e| CliError::new(EXIT_CANT_CREATE, format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(EXIT_OK)
}

fn dispatch(cmd: &Command) -> CliResult<i32> {
    match cmd {
        Command::Simulate { common, observations } => run_simulate(common, *observations),
        Command::Test {
            common,
            alpha,
            method,
            bootstrap_reps,
        } => run_test(common, *alpha, *method, *bootstrap_reps),
        Command::Montecarlo { common, scale, table } => run_montecarlo(common, *scale, table.as_deref()),
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Simulate { common, .. } | Command::Test { common, .. } | Command::Montecarlo { common, .. } => common,
    }
}

/// Parses `argv` and runs the command, returning the exit code.
pub fn run<I, T>(argv: I) -> std::result::Result<i32, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(EXIT_OK);
            }
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid usage");
            return Err(CliError::usage(line.trim_start_matches("error: ").to_string()));
        }
    };
    match parallelism(&common(&cli.command).parallelism)? {
        None => dispatch(&cli.command),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::new(EXIT_SOFTWARE, format!("cannot start worker pool: {e}")))?
            .install(|| dispatch(&cli.command)),
    }
}

/// Entry point used by the binary: runs and reports errors on one line.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run(argv) {
        Ok(code) => code,
        Err(e) => {
            let msg = e.message.replace(['\n', '\r'], " ");
            eprintln!("smgof: error {}: {msg}", e.code);
            e.code
        }
    }
}
