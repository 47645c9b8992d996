//! Goodness-of-fit tests built on the wavelet max statistic: the asymptotic
//! Gumbel test and the parametric bootstrap test.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::fit_least_squares;
use crate::model::{
    constant_fn, FineGrid, ModelKind, NoiseSpec, NormalisedSeries, ObservationSeries, ParametricVolModel, SdeSpec,
    UniformGrid,
};
use crate::observers::{self, TruncationRule};
use crate::sim::{self, derive_seed, SimConfig};
use crate::wavelet::{gumbel_constants, max_statistic, resolution_level, WaveletDecomposition};

/// Smallest series length accepted by the asymptotic test.
pub const MIN_ASYMPTOTIC_N: usize = 16;

/// Largest share of bootstrap replications allowed to fail estimation.
pub const MAX_BOOTSTRAP_FAILURE_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Asymptotic,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: TestMethod,
    pub n: usize,
    /// Resolution level `J`.
    pub level: u32,
    pub alpha: f64,
    /// `T(theta_hat)`.
    pub statistic: f64,
    /// `sqrt(n) T(theta_hat)`.
    pub scaled_statistic: f64,
    /// Gumbel quantile for the asymptotic test, bootstrap quantile of the
    /// unscaled statistic otherwise.
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub theta_hat: Vec<f64>,
    pub seeds: Vec<u64>,
    pub bootstrap_reps: usize,
    pub failed_replications: usize,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Fits theta, normalises and returns `(T(theta_hat), theta_hat)`.
pub fn fitted_statistic(series: &ObservationSeries, model: &ParametricVolModel) -> Result<(f64, Vec<f64>)> {
    let fit = fit_least_squares(series, model)?;
    let zs = crate::model::normalise(series, model, &fit.theta)?;
    let level = resolution_level(series.n())?;
    let dec = WaveletDecomposition::new(&zs, level)?;
    Ok((max_statistic(&dec), fit.theta))
}

/// Asymptotic test: reject when `sqrt(n) T(theta_hat)` exceeds the Gumbel
/// quantile `q = -a log(-log(1 - alpha)) + b` at `m = 2^J`.
pub fn asymptotic_test(series: &ObservationSeries, model: &ParametricVolModel, alpha: f64) -> Result<TestReport> {
    check_alpha(alpha)?;
    check_asymptotic_n(series.n())?;
    let (stat, theta) = fitted_statistic(series, model)?;
    asymptotic_report(stat, series.n(), alpha, theta)
}

/// Asymptotic test on already normalised observations.
pub fn asymptotic_test_normalised(zs: &NormalisedSeries, alpha: f64) -> Result<TestReport> {
    check_alpha(alpha)?;
    let n = zs.grid().n();
    check_asymptotic_n(n)?;
    let dec = WaveletDecomposition::new(zs, resolution_level(n)?)?;
    asymptotic_report(max_statistic(&dec), n, alpha, zs.theta().to_vec())
}

fn check_asymptotic_n(n: usize) -> Result<()> {
    if n < MIN_ASYMPTOTIC_N {
        return Err(Error::InvalidArgument(format!(
            "asymptotic test needs n >= {MIN_ASYMPTOTIC_N}, got {n}"
        )));
    }
    Ok(())
}

fn asymptotic_report(stat: f64, n: usize, alpha: f64, theta_hat: Vec<f64>) -> Result<TestReport> {
    let level = resolution_level(n)?;
    let g = gumbel_constants(level)?;
    let scaled = (n as f64).sqrt() * stat;
    let q = g.quantile(alpha);
    Ok(TestReport {
        method: TestMethod::Asymptotic,
        n,
        level,
        alpha,
        statistic: stat,
        scaled_statistic: scaled,
        critical_value: q,
        p_value: g.p_value(scaled),
        reject: scaled > q,
        theta_hat,
        seeds: Vec::new(),
        bootstrap_reps: 0,
        failed_replications: 0,
    })
}

/// Generates observation series under the fitted null.
pub trait NullSimulator: Sync {
    fn simulate(&self, theta: &[f64], seed: u64) -> Result<ObservationSeries>;
}

impl<F> NullSimulator for F
where
    F: Fn(&[f64], u64) -> Result<ObservationSeries> + Sync,
{
    fn simulate(&self, theta: &[f64], seed: u64) -> Result<ObservationSeries> {
        self(theta, seed)
    }
}

/// Simulates the null model class with every component not described by
/// theta removed: zero drift, no jumps. The fine-grid models keep their
/// nuisance variance process, frozen at the level estimated from the data.
#[derive(Debug, Clone)]
pub struct NullModelSimulator {
    kind: ModelKind,
    model: ParametricVolModel,
    n: usize,
    x0: f64,
    /// Noise variance (microstructure) or initial spot variance (stochastic volatility).
    nuisance: f64,
    truncation: TruncationRule,
    euler_substeps: usize,
}

impl NullModelSimulator {
    pub fn for_series(series: &ObservationSeries, model: &ParametricVolModel) -> Self {
        let n = series.n();
        let nuisance = match series.kind() {
            ModelKind::Microstructure => (0..n).map(|j| series.xhat(j)[1]).sum::<f64>() / n as f64,
            ModelKind::StochVol => series.xhat(0)[1],
            ModelKind::LocalVol | ModelKind::Jumps => 0.0,
        };
        Self {
            kind: series.kind(),
            model: model.clone(),
            n,
            x0: series.xhat(0)[0],
            nuisance: nuisance.max(0.0),
            truncation: TruncationRule::default(),
            euler_substeps: sim::DEFAULT_EULER_SUBSTEPS,
        }
    }

    pub fn with_truncation(mut self, rule: TruncationRule) -> Self {
        self.truncation = rule;
        self
    }

    pub fn with_euler_substeps(mut self, substeps: usize) -> Self {
        self.euler_substeps = substeps;
        self
    }

    fn loading(&self, theta: &[f64], extra: Option<f64>) -> crate::model::ScalarFn {
        let model = self.model.clone();
        let theta = theta.to_vec();
        match extra {
            None => Arc::new(move |t, s| model.mu(&theta, t, s).max(0.0).sqrt()),
            Some(v) => Arc::new(move |t, s| model.mu(&theta, t, &[s[0], v]).max(0.0).sqrt()),
        }
    }
}

impl NullSimulator for NullModelSimulator {
    fn simulate(&self, theta: &[f64], seed: u64) -> Result<ObservationSeries> {
        let cfg = SimConfig {
            seed,
            euler_substeps: self.euler_substeps,
            ..SimConfig::default()
        };
        match self.kind {
            ModelKind::LocalVol | ModelKind::Jumps => {
                let spec = SdeSpec::new(constant_fn(0.0), self.loading(theta, None), self.x0);
                let path = sim::simulate_diffusion(&spec, UniformGrid::new(self.n)?, &cfg)?;
                if self.kind == ModelKind::Jumps {
                    observers::jump_robust_observer(&path, &self.truncation)
                } else {
                    observers::local_vol_observer(&path)
                }
            }
            ModelKind::Microstructure => {
                let spec = SdeSpec::new(constant_fn(0.0), self.loading(theta, Some(self.nuisance)), self.x0);
                let path = sim::simulate_diffusion(&spec, FineGrid::new(self.n)?, &cfg)?;
                let noisy = sim::add_microstructure_noise(&path, &NoiseSpec::constant(self.nuisance), &cfg)?;
                observers::microstructure_observer(&noisy)
            }
            ModelKind::StochVol => {
                let price = SdeSpec::new(constant_fn(0.0), constant_fn(0.0), self.x0);
                let model = self.model.clone();
                let th = theta.to_vec();
                let vol = SdeSpec::new(
                    constant_fn(0.0),
                    Arc::new(move |t, s| model.mu(&th, t, s).max(0.0).sqrt()),
                    self.nuisance,
                );
                let path = sim::simulate_latent_vol_pair(&price, &vol, FineGrid::new(self.n)?, &cfg)?;
                observers::stoch_vol_observer(&path)
            }
        }
    }
}

/// Statistic of the data together with its bootstrap replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapDistribution {
    pub statistic: f64,
    pub theta_hat: Vec<f64>,
    pub n: usize,
    /// Successful replicate statistics, ascending.
    pub replicates: Vec<f64>,
    pub requested: usize,
    pub failed: usize,
    pub seed: u64,
}

impl BootstrapDistribution {
    /// Empirical `(1 - alpha)`-quantile: the `ceil((1 - alpha) B)`-th order
    /// statistic of the `B` replicates.
    pub fn quantile(&self, alpha: f64) -> f64 {
        let b = self.replicates.len();
        // guard against (1 - alpha) * B landing a rounding error above an integer
        let k = (((1.0 - alpha) * b as f64) - 1e-9).ceil().clamp(1.0, b as f64) as usize;
        self.replicates[k - 1]
    }

    /// `(1 + #{T_j >= T}) / (B + 1)`.
    pub fn p_value(&self) -> f64 {
        let exceed = self.replicates.len() - self.replicates.partition_point(|&v| v < self.statistic);
        (1 + exceed) as f64 / (self.replicates.len() + 1) as f64
    }

    pub fn report(&self, alpha: f64) -> Result<TestReport> {
        check_alpha(alpha)?;
        let q = self.quantile(alpha);
        Ok(TestReport {
            method: TestMethod::Bootstrap,
            n: self.n,
            level: resolution_level(self.n)?,
            alpha,
            statistic: self.statistic,
            scaled_statistic: (self.n as f64).sqrt() * self.statistic,
            critical_value: q,
            p_value: self.p_value(),
            reject: self.statistic > q,
            theta_hat: self.theta_hat.clone(),
            seeds: vec![self.seed],
            bootstrap_reps: self.replicates.len(),
            failed_replications: self.failed,
        })
    }
}

/// Fits the data, then for `j < B` simulates a null series at `theta_hat`
/// with seed `derive_seed(seed, j)`, refits and records `T^(j)(theta_hat^(j))`.
/// Replications whose estimation fails are dropped.
pub fn bootstrap_distribution<S: NullSimulator + ?Sized>(
    series: &ObservationSeries,
    model: &ParametricVolModel,
    simulator: &S,
    reps: usize,
    seed: u64,
) -> Result<BootstrapDistribution> {
    if reps == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one replication".into()));
    }
    let (statistic, theta_hat) = fitted_statistic(series, model)?;
    let outcomes: Vec<Option<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|j| {
            let sim = simulator.simulate(&theta_hat, derive_seed(seed, j)).ok()?;
            fitted_statistic(&sim, model).ok().map(|(t, _)| t)
        })
        .collect();
    let mut replicates: Vec<f64> = outcomes.into_iter().flatten().collect();
    let failed = reps - replicates.len();
    if replicates.is_empty() || failed as f64 > MAX_BOOTSTRAP_FAILURE_RATE * reps as f64 {
        return Err(Error::BootstrapDegenerate { failed, total: reps });
    }
    replicates.sort_by(f64::total_cmp);
    Ok(BootstrapDistribution {
        statistic,
        theta_hat,
        n: series.n(),
        replicates,
        requested: reps,
        failed,
        seed,
    })
}

/// Bootstrap test: reject when `T(theta_hat)` exceeds the bootstrap
/// `(1 - alpha)`-quantile.
pub fn bootstrap_test<S: NullSimulator + ?Sized>(
    series: &ObservationSeries,
    model: &ParametricVolModel,
    simulator: &S,
    alpha: f64,
    reps: usize,
    seed: u64,
) -> Result<TestReport> {
    check_alpha(alpha)?;
    bootstrap_distribution(series, model, simulator, reps, seed)?.report(alpha)
}
