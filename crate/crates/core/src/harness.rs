//! Monte Carlo driver: rejection-rate experiments for the bootstrap test and
//! detection-rate sweeps for the asymptotic test.

use std::fmt::Write as _;
use std::io;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    constant_fn, FineGrid, ModelKind, NoiseSpec, NormalisedSeries, ObservationSeries, ParametricVolModel, ScalarFn,
    SdeSpec, UniformGrid,
};
use crate::observers::{self, TruncationRule};
use crate::sim::{self, derive_seed, SimConfig};
use crate::testing::{asymptotic_test_normalised, bootstrap_distribution, NullModelSimulator};
use crate::wavelet::resolution_level;

pub const MIN_BOOTSTRAP_REPS: usize = 50;

/// Data-generating process of a scenario.
#[derive(Debug, Clone)]
pub enum Dynamics {
    /// Scalar (jump-)diffusion on the uniform grid.
    Diffusion(SdeSpec),
    /// Price on the fine grid observed with additive noise.
    Noisy { price: SdeSpec, noise: NoiseSpec },
    /// Price driven by a latent spot-variance process, on the fine grid.
    LatentVol { price: SdeSpec, vol: SdeSpec },
}

/// How observations are built from a simulated path.
#[derive(Debug, Clone)]
pub enum ObserverChoice {
    RealisedVol,
    Truncated(TruncationRule),
    PreAveraged,
    StochVol,
}

impl ObserverChoice {
    /// The observer matching a model kind, with the default truncation rule.
    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::LocalVol => Self::RealisedVol,
            ModelKind::Jumps => Self::Truncated(TruncationRule::default()),
            ModelKind::Microstructure => Self::PreAveraged,
            ModelKind::StochVol => Self::StochVol,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    /// Block heading, e.g. "Constant volatility, null, mu_t = 1".
    pub name: String,
    /// Row label within the block, e.g. "b_t = 0".
    pub row: String,
    pub kind: ModelKind,
    pub observer: ObserverChoice,
    pub null_model: ParametricVolModel,
    pub dynamics: Dynamics,
    pub n: usize,
    pub alpha_levels: Vec<f64>,
    pub mc_reps: usize,
    pub bootstrap_reps: usize,
    pub base_seed: u64,
    pub euler_substeps: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.mc_reps == 0 {
            return Err(Error::InvalidArgument("mc_reps must be >= 1".into()));
        }
        if self.bootstrap_reps < MIN_BOOTSTRAP_REPS {
            return Err(Error::InvalidArgument(format!(
                "bootstrap_reps must be >= {MIN_BOOTSTRAP_REPS}, got {}",
                self.bootstrap_reps
            )));
        }
        if self.alpha_levels.is_empty() || self.alpha_levels.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::InvalidArgument("alpha levels must be non-empty and lie in (0, 1)".into()));
        }
        if self.euler_substeps == 0 {
            return Err(Error::InvalidArgument("euler_substeps must be >= 1".into()));
        }
        if self.null_model.param_dim() == 0 {
            return Err(Error::InvalidArgument("null model has no parameters".into()));
        }
        resolution_level(self.n)?;
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("{}: {}", self.name, self.row)
    }

    fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            euler_substeps: self.euler_substeps,
            ..SimConfig::default()
        }
    }

    /// Simulates the scenario's true dynamics.
    pub fn simulate_path(&self, seed: u64) -> Result<sim::PathRecord> {
        let cfg = self.sim_config(seed);
        match &self.dynamics {
            Dynamics::Diffusion(spec) => simulate_scalar(spec, UniformGrid::new(self.n)?, &cfg),
            Dynamics::Noisy { price, noise } => {
                let path = simulate_scalar(price, FineGrid::new(self.n)?, &cfg)?;
                sim::add_microstructure_noise(&path, noise, &cfg)
            }
            Dynamics::LatentVol { price, vol } => sim::simulate_latent_vol_pair(price, vol, FineGrid::new(self.n)?, &cfg),
        }
    }

    /// Applies the scenario's observer to a simulated path.
    pub fn observe_path(&self, path: &sim::PathRecord) -> Result<ObservationSeries> {
        match &self.observer {
            ObserverChoice::RealisedVol => observers::local_vol_observer(path),
            ObserverChoice::Truncated(rule) => observers::jump_robust_observer(path, rule),
            ObserverChoice::PreAveraged => observers::microstructure_observer(path),
            ObserverChoice::StochVol => observers::stoch_vol_observer(path),
        }
    }

    /// Simulates one observation series of the scenario's true dynamics.
    pub fn observe(&self, seed: u64) -> Result<ObservationSeries> {
        self.observe_path(&self.simulate_path(seed)?)
    }

    /// Bootstrap null simulator for observed `series`, sharing the scenario's
    /// observer and Euler settings.
    pub fn null_simulator(&self, series: &ObservationSeries) -> NullModelSimulator {
        let sim = NullModelSimulator::for_series(series, &self.null_model).with_euler_substeps(self.euler_substeps);
        match &self.observer {
            ObserverChoice::Truncated(rule) => sim.with_truncation(rule.clone()),
            _ => sim,
        }
    }

    /// Decisions of replication `r` at each alpha level.
    pub fn replicate(&self, r: u64) -> Result<Vec<bool>> {
        let seed = derive_seed(self.base_seed, r);
        let series = self.observe(seed)?;
        let null = self.null_simulator(&series);
        let dist = bootstrap_distribution(&series, &self.null_model, &null, self.bootstrap_reps, derive_seed(seed, 1))?;
        self.alpha_levels.iter().map(|&a| Ok(dist.report(a)?.reject)).collect()
    }
}

fn simulate_scalar(spec: &SdeSpec, grid: impl Into<sim::PathGrid>, cfg: &SimConfig) -> Result<sim::PathRecord> {
    if spec.jumps.is_some() {
        sim::simulate_jump_diffusion(spec, grid, cfg)
    } else {
        sim::simulate_diffusion(spec, grid, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelResult {
    pub alpha: f64,
    pub rejection_rate: f64,
    pub mc_standard_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub row: String,
    pub n: usize,
    pub levels: Vec<LevelResult>,
    /// Replications that completed, i.e. `mc_reps - fail_count`.
    pub completed: usize,
    pub fail_count: usize,
    /// Per-replication decisions (one per alpha level), `None` for failures.
    #[serde(skip)]
    pub decisions: Vec<Option<Vec<bool>>>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl ScenarioResult {
    pub fn label(&self) -> String {
        format!("{}: {}", self.scenario, self.row)
    }

    pub fn rate(&self, alpha: f64) -> Option<f64> {
        self.levels.iter().find(|l| l.alpha == alpha).map(|l| l.rejection_rate)
    }
}

/// Rejection rate and standard error `sqrt(r (1 - r) / m)` over the
/// completed replications.
pub fn aggregate(decisions: &[Option<Vec<bool>>], alphas: &[f64]) -> Vec<LevelResult> {
    let done: Vec<&Vec<bool>> = decisions.iter().flatten().collect();
    let m = done.len();
    alphas
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            let rejected = done.iter().filter(|d| d[k]).count();
            let (rate, se) = if m == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let r = rejected as f64 / m as f64;
                (r, (r * (1.0 - r) / m as f64).sqrt())
            };
            LevelResult {
                alpha,
                rejection_rate: rate,
                mc_standard_error: se,
            }
        })
        .collect()
}

/// Runs every replication of a scenario. Replication `r` draws its path with
/// seed `derive_seed(base_seed, r)`; a replication whose simulation or
/// estimation fails is counted in `fail_count` and excluded from the rates.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioResult> {
    s.validate()?;
    let start = Instant::now();
    let decisions: Vec<Option<Vec<bool>>> =
        (0..s.mc_reps as u64).into_par_iter().map(|r| s.replicate(r).ok()).collect();
    let fail_count = decisions.iter().filter(|d| d.is_none()).count();
    Ok(ScenarioResult {
        scenario: s.name.clone(),
        row: s.row.clone(),
        n: s.n,
        levels: aggregate(&decisions, &s.alpha_levels),
        completed: s.mc_reps - fail_count,
        fail_count,
        decisions,
        wall_time: start.elapsed(),
    })
}

/// One hypothesis row of the rejection-probability table.
#[derive(Clone)]
pub struct CatalogueRow {
    pub block: &'static str,
    pub row: &'static str,
    pub proportional: bool,
    pub drift: ScalarFn,
    pub diffusion: ScalarFn,
}

/// A row label with its `(t, x)` expression.
type Labelled = (&'static str, fn(f64, f64) -> f64);

fn handle(f: fn(f64, f64) -> f64) -> ScalarFn {
    Arc::new(move |t, s: &[f64]| f(t, s[0]))
}

pub const TABLE1_NS: [usize; 3] = [100, 200, 500];
pub const TABLE1_ALPHAS: [f64; 2] = [0.05, 0.10];
pub const DEFAULT_X0: f64 = 1.0;

/// The twenty hypothesis rows, in table order. Diffusion handles are the
/// Brownian loading `sqrt(mu_t)`.
pub fn table1_catalogue() -> Vec<CatalogueRow> {
    const CN: &str = "Constant volatility, null, mu_t = 1";
    const CA: &str = "Constant volatility, alternative, b_t = X_t";
    const PN: &str = "Proportional volatility, null, mu_t = X_t^2";
    const PA: &str = "Proportional volatility, alternative, b_t = 2 - X_t";
    let drifts: [Labelled; 5] = [
        ("b_t = 0", |_, _| 0.0),
        ("b_t = 2", |_, _| 2.0),
        ("b_t = X_t", |_, x| x),
        ("b_t = 2 - X_t", |_, x| 2.0 - x),
        ("b_t = tX_t", |t, x| t * x),
    ];
    let mut rows = Vec::with_capacity(20);
    for &(label, b) in &drifts {
        rows.push(CatalogueRow { block: CN, row: label, proportional: false, drift: handle(b), diffusion: constant_fn(1.0) });
    }
    let const_alt: [Labelled; 5] = [
        ("sqrt(mu_t) = 1 + X_t", |_, x| 1.0 + x),
        ("sqrt(mu_t) = 1 + sin(5X_t)", |_, x| 1.0 + (5.0 * x).sin()),
        ("sqrt(mu_t) = 1 + X_t exp(t)", |t, x| 1.0 + x * t.exp()),
        ("sqrt(mu_t) = 1 + X_t sin(5t)", |t, x| 1.0 + x * (5.0 * t).sin()),
        ("sqrt(mu_t) = 1 + tX_t", |t, x| 1.0 + t * x),
    ];
    for &(label, sig) in &const_alt {
        rows.push(CatalogueRow { block: CA, row: label, proportional: false, drift: handle(|_, x| x), diffusion: handle(sig) });
    }
    for &(label, b) in &drifts {
        rows.push(CatalogueRow { block: PN, row: label, proportional: true, drift: handle(b), diffusion: handle(|_, x| x.abs()) });
    }
    let prop_alt: [Labelled; 5] = [
        ("mu_t = 1 + X_t^2", |_, x| (1.0 + x * x).sqrt()),
        ("mu_t = 1", |_, _| 1.0),
        ("mu_t = 5|X_t|^(3/2)", |_, x| (5.0 * x.abs().powf(1.5)).sqrt()),
        ("mu_t = 5|X_t|", |_, x| (5.0 * x.abs()).sqrt()),
        ("mu_t = (1 + X_t)^2", |_, x| (1.0 + x).abs()),
    ];
    for &(label, sig) in &prop_alt {
        rows.push(CatalogueRow { block: PA, row: label, proportional: true, drift: handle(|_, x| 2.0 - x), diffusion: handle(sig) });
    }
    rows
}

/// Looks up a catalogue row by its block and row label.
pub fn catalogue_row(block: &str, row: &str) -> Option<CatalogueRow> {
    table1_catalogue().into_iter().find(|r| r.block == block && r.row == row)
}

impl CatalogueRow {
    /// Builds the scenario for this row at sample size `n`.
    pub fn scenario(&self, n: usize, mc_reps: usize, bootstrap_reps: usize, base_seed: u64) -> Scenario {
        let null_model = if self.proportional {
            ParametricVolModel::proportional(ModelKind::LocalVol)
        } else {
            ParametricVolModel::constant(ModelKind::LocalVol)
        };
        Scenario {
            name: self.block.to_string(),
            row: self.row.to_string(),
            kind: ModelKind::LocalVol,
            observer: ObserverChoice::RealisedVol,
            null_model,
            dynamics: Dynamics::Diffusion(SdeSpec::new(self.drift.clone(), self.diffusion.clone(), DEFAULT_X0)),
            n,
            alpha_levels: TABLE1_ALPHAS.to_vec(),
            mc_reps,
            bootstrap_reps,
            base_seed,
            euler_substeps: sim::DEFAULT_EULER_SUBSTEPS,
        }
    }
}

/// Replication counts at a given scale of the full 1000 x 1000 design.
pub fn scaled_reps(scale: f64) -> Result<(usize, usize)> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::InvalidArgument(format!("scale must lie in (0, 1], got {scale}")));
    }
    let mc = ((1000.0 * scale).round() as usize).max(1);
    let boot = ((1000.0 * scale).round() as usize).max(MIN_BOOTSTRAP_REPS);
    Ok((mc, boot))
}

/// All table scenarios: 20 rows x n in {100, 200, 500}. Scenario `k` uses
/// base seed `derive_seed(base_seed, k)`.
pub fn table1_scenarios(scale: f64, base_seed: u64) -> Result<Vec<Scenario>> {
    let (mc, boot) = scaled_reps(scale)?;
    let mut out = Vec::with_capacity(60);
    for row in table1_catalogue() {
        for &n in &TABLE1_NS {
            let k = out.len() as u64;
            out.push(row.scenario(n, mc, boot, derive_seed(base_seed, k)));
        }
    }
    Ok(out)
}

pub fn table1_suite(scale: f64, base_seed: u64) -> Result<Vec<ScenarioResult>> {
    table1_scenarios(scale, base_seed)?.iter().map(run_scenario).collect()
}

/// CSV with columns `scenario,n,alpha,rejectionRate,mcStandardError,failCount`
/// and, when `timing` is set, `wallTimeSec`.
pub fn write_results_csv<W: io::Write>(results: &[ScenarioResult], out: W, timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["scenario", "n", "alpha", "rejectionRate", "mcStandardError", "failCount"];
    if timing {
        header.push("wallTimeSec");
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in results {
        for l in &r.levels {
            let mut rec = vec![
                r.label(),
                r.n.to_string(),
                format!("{}", l.alpha),
                format!("{:.6}", l.rejection_rate),
                format!("{:.6}", l.mc_standard_error),
                r.fail_count.to_string(),
            ];
            if timing {
                rec.push(format!("{:.3}", r.wall_time.as_secs_f64()));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(e.to_string())
}

/// Text table with one line per hypothesis row and one column per
/// `(n, alpha)`, grouped under block headings in first-seen order.
pub fn format_table(results: &[ScenarioResult]) -> String {
    let mut ns: Vec<usize> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut rows: Vec<(&str, &str)> = Vec::new();
    for r in results {
        if !ns.contains(&r.n) {
            ns.push(r.n);
        }
        for l in &r.levels {
            if !alphas.contains(&l.alpha) {
                alphas.push(l.alpha);
            }
        }
        if !rows.contains(&(r.scenario.as_str(), r.row.as_str())) {
            rows.push((&r.scenario, &r.row));
        }
    }
    let width = rows.iter().map(|(_, r)| r.len()).max().unwrap_or(0).max(1) + 4;
    let mut s = String::new();
    let _ = write!(s, "{:<width$}", "n");
    for n in &ns {
        for _ in &alphas {
            let _ = write!(s, "{n:>8}");
        }
    }
    s.push('\n');
    let _ = write!(s, "{:<width$}", "alpha");
    for _ in &ns {
        for a in &alphas {
            let _ = write!(s, "{:>7}%", format!("{}", a * 100.0));
        }
    }
    s.push('\n');
    let mut block = "";
    for (b, row) in rows {
        if b != block {
            let _ = writeln!(s, "\n{b}");
            block = b;
        }
        let _ = write!(s, "{:<width$}", format!("    {row}"));
        for &n in &ns {
            let r = results.iter().find(|r| r.scenario == b && r.row == row && r.n == n);
            for &a in &alphas {
                match r.and_then(|r| r.rate(a)) {
                    Some(v) => {
                        let _ = write!(s, "{v:>8.3}");
                    }
                    None => {
                        let _ = write!(s, "{:>8}", "-");
                    }
                }
            }
        }
        s.push('\n');
    }
    s
}

/// Power of the asymptotic test against the signal `A 1{t in [1/2, 1/2 + 2^-J)}`
/// with `A = c n^(-1/4) sqrt(log n)` in Gaussian noise. The bump sits on one
/// finest-level dyadic bin, so its shape is fixed relative to the resolution.
pub fn detection_rate_sweep(c: f64, ns: &[usize], reps: usize, seed: u64, alpha: f64) -> Result<Vec<(usize, f64)>> {
    if ns.len() < 2 {
        return Err(Error::InvalidArgument("detection sweep needs at least two sample sizes".into()));
    }
    if !(c >= 0.0 && c.is_finite()) || reps == 0 {
        return Err(Error::InvalidArgument("detection sweep needs c >= 0 and reps >= 1".into()));
    }
    ns.iter()
        .enumerate()
        .map(|(k, &n)| {
            let grid = UniformGrid::new(n)?;
            let level = resolution_level(n)?;
            let amp = c * (n as f64).powf(-0.25) * (n as f64).ln().sqrt();
            let bins = 1usize << level;
            let seed_n = derive_seed(seed, k as u64);
            let rejections: Result<Vec<bool>> = (0..reps as u64)
                .into_par_iter()
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed_n, r));
                    let z: Vec<f64> = (0..n)
                        .map(|i| {
                            let noise: f64 = StandardNormal.sample(&mut rng);
                            let in_bump = bins * i / n == bins / 2;
                            noise + if in_bump { amp } else { 0.0 }
                        })
                        .collect();
                    let zs = NormalisedSeries::from_values(grid, z)?;
                    Ok(asymptotic_test_normalised(&zs, alpha)?.reject)
                })
                .collect();
            let hits = rejections?.into_iter().filter(|&b| b).count();
            Ok((n, hits as f64 / reps as f64))
        })
        .collect()
}
