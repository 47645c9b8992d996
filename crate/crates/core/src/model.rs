//! Domain types shared across the crate: observation grids, parametric
//! volatility models, SDE descriptions and observation series.
//!
//! Everything here is immutable after construction. Function handles are
//! reference-counted trait objects so models and specs can be cloned into
//! parallel Monte Carlo workers cheaply.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(t, state) -> value`, used for drifts, diffusion loadings and noise variances.
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// `(theta, t, x) -> value`, used for the model mean and variance.
pub type ParamFn = Arc<dyn Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync>;

/// `(t, x, out)`: writes the regressors of a model that is linear in theta.
pub type BasisFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Default half-width of the parameter box when none is given.
pub const DEFAULT_PARAM_BOUND: f64 = 1e6;

pub fn constant_fn(c: f64) -> ScalarFn {
    Arc::new(move |_, _| c)
}

/// Uniform observation grid `t_i = i/n`, `i = 0..=n`, on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformGrid {
    n: usize,
}

impl UniformGrid {
    pub const MIN_INTERVALS: usize = 4;

    pub fn new(n: usize) -> Result<Self> {
        if n < Self::MIN_INTERVALS {
            return Err(Error::GridTooSmall {
                n,
                min: Self::MIN_INTERVALS,
            });
        }
        Ok(Self { n })
    }

    /// Number of intervals.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of grid points, `n + 1`.
    pub fn points(&self) -> usize {
        self.n + 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(move |i| self.time(i))
    }
}

/// Fine grid `t'_i = i/n^2`, `i = 0..=n^2`, refining a [`UniformGrid`] by
/// a factor `n`. Outer time `t_j` coincides with fine time `t'_{nj}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineGrid {
    n: usize,
}

impl FineGrid {
    pub fn new(n: usize) -> Result<Self> {
        UniformGrid::new(n)?;
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of fine intervals, `n^2`.
    pub fn intervals(&self) -> usize {
        self.n * self.n
    }

    /// Number of fine points, `n^2 + 1`.
    pub fn points(&self) -> usize {
        self.intervals() + 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.intervals() as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.intervals() as f64
    }

    pub fn outer(&self) -> UniformGrid {
        UniformGrid { n: self.n }
    }

    /// Fine index of outer time `t_j`.
    pub fn outer_index(&self, j: usize) -> usize {
        self.n * j
    }
}

/// Which observation construction produced a series. Determines the
/// covariate dimension and the variance function paired with the mean model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LocalVol,
    Jumps,
    Microstructure,
    StochVol,
}

impl ModelKind {
    /// Covariate dimension `q`: price only for the two coarse-grid models,
    /// (price, spot variance) for the two fine-grid models.
    pub fn covariate_dim(self) -> usize {
        match self {
            ModelKind::LocalVol | ModelKind::Jumps => 1,
            ModelKind::Microstructure | ModelKind::StochVol => 2,
        }
    }

    /// Conditional variance of `Y` given the model mean `mu` and covariates `x`.
    pub fn variance(self, mu: f64, x: &[f64]) -> f64 {
        match self {
            ModelKind::LocalVol | ModelKind::Jumps => 2.0 * mu * mu,
            ModelKind::Microstructure => {
                let s = mu + PI * PI * x[1];
                2.0 * s * s
            }
            ModelKind::StochVol => {
                let s = mu + 2.0 * PI * PI * x[1] * x[1];
                2.0 * s * s
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LocalVol => "local_vol",
            ModelKind::Jumps => "jumps",
            ModelKind::Microstructure => "microstructure",
            ModelKind::StochVol => "stoch_vol",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Closed box in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::LengthMismatch {
                what: "upper bounds",
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if let Some(k) = (0..lower.len()).find(|&k| !(lower[k] <= upper[k])) {
            return Err(Error::InvalidArgument(format!(
                "empty bound interval [{}, {}] for parameter {k}",
                lower[k], upper[k]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        Self {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::LengthMismatch {
                what: "parameters",
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        for (k, &v) in theta.iter().enumerate() {
            if !(self.lower[k] <= v && v <= self.upper[k]) {
                return Err(Error::ParamOutOfBounds {
                    index: k,
                    value: v,
                    lo: self.lower[k],
                    hi: self.upper[k],
                });
            }
        }
        Ok(())
    }

    pub fn project(&self, theta: &mut [f64]) {
        for (k, v) in theta.iter_mut().enumerate() {
            *v = v.clamp(self.lower[k], self.upper[k]);
        }
    }
}

/// Parametric null model `mu(theta, t, x)` with paired variance
/// `sigma2(theta, t, x)`.
#[derive(Clone)]
pub struct ParametricVolModel {
    name: String,
    mu: ParamFn,
    sigma2: ParamFn,
    param_dim: usize,
    bounds: ParamBounds,
    basis: Option<BasisFn>,
}

impl ParametricVolModel {
    /// A general (possibly nonlinear) model.
    pub fn new(name: impl Into<String>, param_dim: usize, mu: ParamFn, sigma2: ParamFn) -> Self {
        Self {
            name: name.into(),
            mu,
            sigma2,
            param_dim,
            bounds: ParamBounds::symmetric(param_dim, DEFAULT_PARAM_BOUND),
            basis: None,
        }
    }

    /// A mean model paired with the variance function of `kind`.
    pub fn with_mean(name: impl Into<String>, kind: ModelKind, param_dim: usize, mu: ParamFn) -> Self {
        let m = mu.clone();
        let sigma2: ParamFn = Arc::new(move |th, t, x| kind.variance(m(th, t, x), x));
        Self::new(name, param_dim, mu, sigma2)
    }

    /// `mu(theta, t, x) = theta . basis(t, x)`, paired with the variance
    /// function of `kind`. Fitted by linear least squares.
    pub fn linear(name: impl Into<String>, kind: ModelKind, param_dim: usize, basis: BasisFn) -> Self {
        let b = basis.clone();
        let mu: ParamFn = Arc::new(move |th, t, x| {
            let mut buf = [0.0f64; 8];
            if th.len() <= buf.len() {
                let row = &mut buf[..th.len()];
                b(t, x, row);
                dot(th, row)
            } else {
                let mut row = vec![0.0; th.len()];
                b(t, x, &mut row);
                dot(th, &row)
            }
        });
        let mut model = Self::with_mean(name, kind, param_dim, mu);
        model.basis = Some(basis);
        model
    }

    /// `mu = theta`.
    pub fn constant(kind: ModelKind) -> Self {
        Self::linear("constant", kind, 1, Arc::new(|_, _, out| out[0] = 1.0))
    }

    /// `mu = theta * x^2`, with `x` the price covariate.
    pub fn proportional(kind: ModelKind) -> Self {
        Self::linear("proportional", kind, 1, Arc::new(|_, x, out| out[0] = x[0] * x[0]))
    }

    pub fn with_bounds(mut self, bounds: ParamBounds) -> Result<Self> {
        if bounds.dim() != self.param_dim {
            return Err(Error::LengthMismatch {
                what: "bound dimensions",
                expected: self.param_dim,
                actual: bounds.dim(),
            });
        }
        self.bounds = bounds;
        Ok(self)
    }

    /// Drops the linear basis so the model is fitted iteratively.
    pub fn without_basis(mut self) -> Self {
        self.basis = None;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    pub fn basis(&self) -> Option<&BasisFn> {
        self.basis.as_ref()
    }

    pub fn mu(&self, theta: &[f64], t: f64, x: &[f64]) -> f64 {
        (self.mu)(theta, t, x)
    }

    pub fn sigma2(&self, theta: &[f64], t: f64, x: &[f64]) -> f64 {
        (self.sigma2)(theta, t, x)
    }
}

impl fmt::Debug for ParametricVolModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricVolModel")
            .field("name", &self.name)
            .field("param_dim", &self.param_dim)
            .field("bounds", &self.bounds)
            .field("linear", &self.basis.is_some())
            .finish()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Distribution of compound-Poisson jump sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpSizes {
    Fixed(f64),
    /// `+c` or `-c` with equal probability.
    Symmetric(f64),
    Gaussian { mean: f64, std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    /// Expected number of jumps per unit time.
    pub intensity: f64,
    pub sizes: JumpSizes,
}

/// Shape of the microstructure noise, rescaled to the requested variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDist {
    Gaussian,
    /// Student t with `dof > 8` degrees of freedom, so moments beyond the
    /// eighth exist.
    StudentT { dof: f64 },
}

#[derive(Clone)]
pub struct NoiseSpec {
    /// Noise variance `X_2` as a function of `(t, state)`.
    pub variance: ScalarFn,
    pub dist: NoiseDist,
}

impl NoiseSpec {
    pub fn gaussian(variance: ScalarFn) -> Self {
        Self {
            variance,
            dist: NoiseDist::Gaussian,
        }
    }

    pub fn constant(v: f64) -> Self {
        Self::gaussian(constant_fn(v))
    }
}

impl fmt::Debug for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseSpec").field("dist", &self.dist).finish()
    }
}

/// Scalar SDE `dX = b(t, s) dt + c(t, s) dB (+ jumps)`.
///
/// `s` is the full simulated state: `[x]` for a single diffusion and
/// `[x1, x2]` when simulated as part of a latent-volatility pair.
#[derive(Clone)]
pub struct SdeSpec {
    pub drift: ScalarFn,
    /// Brownian loading, i.e. `sqrt(mu_t)` for the local-volatility model.
    pub diffusion: ScalarFn,
    pub jumps: Option<JumpSpec>,
    pub x0: f64,
}

impl SdeSpec {
    pub fn new(drift: ScalarFn, diffusion: ScalarFn, x0: f64) -> Self {
        Self {
            drift,
            diffusion,
            jumps: None,
            x0,
        }
    }

    pub fn with_jumps(mut self, jumps: JumpSpec) -> Self {
        self.jumps = Some(jumps);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.x0.is_finite() {
            return Err(Error::InvalidArgument("initial state is not finite".into()));
        }
        if let Some(j) = &self.jumps {
            if !(j.intensity >= 0.0 && j.intensity.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "jump intensity must be finite and >= 0, got {}",
                    j.intensity
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSpec")
            .field("jumps", &self.jumps)
            .field("x0", &self.x0)
            .finish()
    }
}

/// Volatility proxies `Y_i` with covariate estimates `Xhat_i`, `i < n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservationSeries {
    grid: UniformGrid,
    y: Vec<f64>,
    /// Row-major `n x q`.
    xhat: Vec<f64>,
    covariate_dim: usize,
    kind: ModelKind,
}

impl ObservationSeries {
    pub fn new(grid: UniformGrid, y: Vec<f64>, xhat: Vec<f64>, covariate_dim: usize, kind: ModelKind) -> Result<Self> {
        let n = grid.n();
        if y.len() != n {
            return Err(Error::LengthMismatch {
                what: "observations",
                expected: n,
                actual: y.len(),
            });
        }
        if covariate_dim == 0 || xhat.len() != n * covariate_dim {
            return Err(Error::LengthMismatch {
                what: "covariate entries",
                expected: n * covariate_dim.max(1),
                actual: xhat.len(),
            });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "Y", index: i });
        }
        if let Some(i) = xhat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "Xhat",
                index: i / covariate_dim,
            });
        }
        Ok(Self {
            grid,
            y,
            xhat,
            covariate_dim,
            kind,
        })
    }

    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn xhat(&self, i: usize) -> &[f64] {
        let q = self.covariate_dim;
        &self.xhat[i * q..(i + 1) * q]
    }

    pub fn xhat_flat(&self) -> &[f64] {
        &self.xhat
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Same series with `Y` replaced.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.grid, y, self.xhat.clone(), self.covariate_dim, self.kind)
    }
}

/// Normalised observations `Z_i = (Y_i - mu) / sigma` at a fixed theta.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalisedSeries {
    grid: UniformGrid,
    z: Vec<f64>,
    theta: Vec<f64>,
}

impl NormalisedSeries {
    /// Wraps externally generated `Z` values (e.g. for calibration studies).
    pub fn from_values(grid: UniformGrid, z: Vec<f64>) -> Result<Self> {
        if z.len() != grid.n() {
            return Err(Error::LengthMismatch {
                what: "normalised observations",
                expected: grid.n(),
                actual: z.len(),
            });
        }
        Ok(Self {
            grid,
            z,
            theta: Vec::new(),
        })
    }

    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
}

/// Computes `Z_i(theta) = (Y_i - mu(theta, t_i, Xhat_i)) / sigma(theta, t_i, Xhat_i)`.
pub fn normalise(series: &ObservationSeries, model: &ParametricVolModel, theta: &[f64]) -> Result<NormalisedSeries> {
    model.bounds().check(theta)?;
    let grid = series.grid();
    let mut z = Vec::with_capacity(series.n());
    for (i, &y) in series.y().iter().enumerate() {
        let t = grid.time(i);
        let x = series.xhat(i);
        let mu = model.mu(theta, t, x);
        let s2 = model.sigma2(theta, t, x);
        if !mu.is_finite() {
            return Err(Error::NonFinite { what: "mu", index: i });
        }
        if s2.is_nan() || s2 == f64::INFINITY {
            return Err(Error::NonFinite { what: "sigma2", index: i });
        }
        if s2 <= 0.0 {
            return Err(Error::NonPositiveVariance { index: i, value: s2 });
        }
        z.push((y - mu) / s2.sqrt());
    }
    Ok(NormalisedSeries {
        grid,
        z,
        theta: theta.to_vec(),
    })
}
