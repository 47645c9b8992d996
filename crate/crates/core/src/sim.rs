//! Euler–Maruyama path simulation for the diffusion, jump-diffusion,
//! latent-volatility and noisy-observation models.
//!
//! Every simulation is a pure function of `(spec, grid, cfg)`. Randomness
//! comes from ChaCha8 streams keyed by `cfg.seed`; each source of
//! randomness (Brownian drivers, jumps, noise) has its own stream so that
//! switching one source off leaves the draws of the others untouched.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FineGrid, JumpSizes, JumpSpec, NoiseDist, NoiseSpec, SdeSpec, UniformGrid};

const STREAM_BROWNIAN: u64 = 0;
const STREAM_JUMPS: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_BROWNIAN_VOL: u64 = 3;
const STREAM_JUMPS_VOL: u64 = 4;

pub const DEFAULT_EULER_SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Euler steps per grid interval.
    pub euler_substeps: usize,
    #[serde(default)]
    pub scheme: Scheme,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            euler_substeps: DEFAULT_EULER_SUBSTEPS,
            scheme: Scheme::EulerMaruyama,
        }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.euler_substeps == 0 {
            return Err(Error::InvalidArgument("euler_substeps must be >= 1".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finaliser applied to `base + (index + 1) * golden gamma`.
/// Gives well-separated seeds for replication `index` of a run keyed by `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathGrid {
    Uniform(UniformGrid),
    Fine(FineGrid),
}

impl PathGrid {
    pub fn points(&self) -> usize {
        match self {
            PathGrid::Uniform(g) => g.points(),
            PathGrid::Fine(g) => g.points(),
        }
    }

    pub fn intervals(&self) -> usize {
        self.points() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        match self {
            PathGrid::Uniform(g) => g.time(i),
            PathGrid::Fine(g) => g.time(i),
        }
    }
}

impl From<UniformGrid> for PathGrid {
    fn from(g: UniformGrid) -> Self {
        PathGrid::Uniform(g)
    }
}

impl From<FineGrid> for PathGrid {
    fn from(g: FineGrid) -> Self {
        PathGrid::Fine(g)
    }
}

/// Discrete path: one state vector per grid time, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    grid: PathGrid,
    labels: Vec<String>,
    states: Vec<f64>,
}

impl PathRecord {
    pub fn new(grid: PathGrid, labels: Vec<String>, states: Vec<f64>) -> Result<Self> {
        let dim = labels.len();
        let expected = grid.points() * dim;
        if dim == 0 || states.len() != expected {
            return Err(Error::LengthMismatch {
                what: "path entries",
                expected,
                actual: states.len(),
            });
        }
        if let Some(i) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "state",
                index: i / dim,
            });
        }
        Ok(Self { grid, labels, states })
    }

    /// Single-component path.
    pub fn scalar(grid: PathGrid, label: &str, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, vec![label.to_string()], values)
    }

    pub fn grid(&self) -> PathGrid {
        self.grid
    }

    pub fn uniform_grid(&self) -> Option<UniformGrid> {
        match self.grid {
            PathGrid::Uniform(g) => Some(g),
            PathGrid::Fine(_) => None,
        }
    }

    pub fn fine_grid(&self) -> Option<FineGrid> {
        match self.grid {
            PathGrid::Fine(g) => Some(g),
            PathGrid::Uniform(_) => None,
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.states[i * d..(i + 1) * d]
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.states.iter().skip(k).step_by(self.dim()).copied().collect()
    }

    /// CSV dump with columns `time, <labels...>`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "time")?;
        for l in &self.labels {
            write!(w, ",{l}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{:.16e}", self.grid.time(i))?;
            for v in self.state(i) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn check_finite(x: f64, step: usize) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite { what: "state", index: step })
    }
}

struct JumpSampler {
    rng: ChaCha8Rng,
    count: Poisson<f64>,
    sizes: JumpSizes,
}

impl JumpSampler {
    fn new(spec: Option<&JumpSpec>, dt: f64, seed: u64, stream: u64) -> Result<Option<Self>> {
        let Some(j) = spec else { return Ok(None) };
        if j.intensity == 0.0 {
            return Ok(None);
        }
        let count = Poisson::new(j.intensity * dt)
            .map_err(|e| Error::InvalidArgument(format!("jump intensity {}: {e}", j.intensity)))?;
        Ok(Some(Self {
            rng: stream_rng(seed, stream),
            count,
            sizes: j.sizes,
        }))
    }

    /// Total jump displacement over one Euler step.
    fn step(&mut self) -> f64 {
        let k = self.count.sample(&mut self.rng) as u64;
        let mut total = 0.0;
        for _ in 0..k {
            total += match self.sizes {
                JumpSizes::Fixed(c) => c,
                JumpSizes::Symmetric(c) => {
                    if self.rng.random::<bool>() {
                        c
                    } else {
                        -c
                    }
                }
                JumpSizes::Gaussian { mean, std } => {
                    let z: f64 = self.rng.sample(StandardNormal);
                    mean + std * z
                }
            };
        }
        total
    }
}

fn euler_scalar(spec: &SdeSpec, grid: PathGrid, cfg: &SimConfig, with_jumps: bool) -> Result<PathRecord> {
    cfg.validate()?;
    spec.validate()?;
    let m = cfg.euler_substeps;
    let h = 1.0 / (grid.intervals() * m) as f64;
    let sqrt_h = h.sqrt();
    let mut rng = stream_rng(cfg.seed, STREAM_BROWNIAN);
    let mut jumps = if with_jumps {
        JumpSampler::new(spec.jumps.as_ref(), h, cfg.seed, STREAM_JUMPS)?
    } else {
        None
    };
    let out = integrate(spec, grid.intervals(), m, |_| {
        let dw = rng.sample::<f64, _>(StandardNormal) * sqrt_h;
        let jump = jumps.as_mut().map_or(0.0, JumpSampler::step);
        (dw, jump)
    })?;
    PathRecord::scalar(grid, "x", out)
}

/// Euler loop over `intervals * substeps` steps on [0, 1]. `shocks(step)`
/// returns the Brownian increment and the jump displacement of that step.
fn integrate<F>(spec: &SdeSpec, intervals: usize, substeps: usize, mut shocks: F) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> (f64, f64),
{
    let h = 1.0 / (intervals * substeps) as f64;
    let mut out = Vec::with_capacity(intervals + 1);
    let mut x = spec.x0;
    out.push(x);
    for i in 0..intervals {
        for s in 0..substeps {
            let step = i * substeps + s;
            let t = step as f64 * h;
            let state = [x];
            let (dw, jump) = shocks(step);
            let next = x + (spec.drift)(t, &state) * h + (spec.diffusion)(t, &state) * dw + jump;
            x = check_finite(next, step)?;
        }
        out.push(x);
    }
    Ok(out)
}

/// Euler–Maruyama path of `dX = b dt + c dB`, sampled at the grid times.
/// Jump components of `spec` are ignored.
pub fn simulate_diffusion(spec: &SdeSpec, grid: impl Into<PathGrid>, cfg: &SimConfig) -> Result<PathRecord> {
    euler_scalar(spec, grid.into(), cfg, false)
}

/// As [`simulate_diffusion`] plus compound-Poisson jumps: each Euler step of
/// length `h` receives `Poisson(lambda * h)` jumps with sizes drawn from the
/// spec's size distribution.
pub fn simulate_jump_diffusion(spec: &SdeSpec, grid: impl Into<PathGrid>, cfg: &SimConfig) -> Result<PathRecord> {
    if spec.jumps.is_none() {
        return Err(Error::InvalidArgument("jump-diffusion requires a jump description".into()));
    }
    euler_scalar(spec, grid.into(), cfg, true)
}

/// Joint path of price `X1` and spot variance `X2`:
///
/// ```text
/// dX1 = b(t, s) dt + sqrt(max(X2, 0)) dB
/// dX2 = b'(t, s) dt + c'(t, s) dB'
/// ```
///
/// with independent `B`, `B'` and `s = [X1, X2]`. The diffusion handle of
/// `price` is not used; its loading is the simulated spot variance.
pub fn simulate_latent_vol_pair(price: &SdeSpec, vol: &SdeSpec, grid: FineGrid, cfg: &SimConfig) -> Result<PathRecord> {
    cfg.validate()?;
    price.validate()?;
    vol.validate()?;
    let m = cfg.euler_substeps;
    let intervals = grid.intervals();
    let h = 1.0 / (intervals * m) as f64;
    let sqrt_h = h.sqrt();
    let mut rng_price = stream_rng(cfg.seed, STREAM_BROWNIAN);
    let mut rng_vol = stream_rng(cfg.seed, STREAM_BROWNIAN_VOL);
    let mut jumps_price = JumpSampler::new(price.jumps.as_ref(), h, cfg.seed, STREAM_JUMPS)?;
    let mut jumps_vol = JumpSampler::new(vol.jumps.as_ref(), h, cfg.seed, STREAM_JUMPS_VOL)?;

    let mut out = Vec::with_capacity(2 * grid.points());
    let (mut x1, mut x2) = (price.x0, vol.x0);
    out.extend([x1, x2]);
    for i in 0..intervals {
        for s in 0..m {
            let step = i * m + s;
            let t = step as f64 * h;
            let state = [x1, x2];
            let dw1: f64 = rng_price.sample::<f64, _>(StandardNormal) * sqrt_h;
            let dw2: f64 = rng_vol.sample::<f64, _>(StandardNormal) * sqrt_h;
            let mut n1 = x1 + (price.drift)(t, &state) * h + x2.max(0.0).sqrt() * dw1;
            let mut n2 = x2 + (vol.drift)(t, &state) * h + (vol.diffusion)(t, &state) * dw2;
            if let Some(j) = jumps_price.as_mut() {
                n1 += j.step();
            }
            if let Some(j) = jumps_vol.as_mut() {
                n2 += j.step();
            }
            x1 = check_finite(n1, step)?;
            x2 = check_finite(n2, step)?;
        }
        out.extend([x1, x2]);
    }
    PathRecord::new(grid.into(), vec!["x1".into(), "x2".into()], out)
}

/// Adds noise `eps_i` with conditional variance `v(t'_i, state_i)` to the
/// first component of a fine-grid path.
///
/// The result has components `[x1_noisy, noise_var]`, the second holding the
/// true noise variance at each fine time.
pub fn add_microstructure_noise(path: &PathRecord, noise: &NoiseSpec, cfg: &SimConfig) -> Result<PathRecord> {
    let grid = path
        .fine_grid()
        .ok_or_else(|| Error::InvalidArgument("microstructure noise needs a fine-grid path".into()))?;
    let student = match noise.dist {
        NoiseDist::Gaussian => None,
        NoiseDist::StudentT { dof } => {
            if !(dof > 8.0) {
                return Err(Error::InvalidArgument(format!(
                    "noise degrees of freedom must exceed 8, got {dof}"
                )));
            }
            let t = StudentT::new(dof).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Some((t, ((dof - 2.0) / dof).sqrt()))
        }
    };
    let mut rng = stream_rng(cfg.seed, STREAM_NOISE);
    let mut out = Vec::with_capacity(2 * path.len());
    for i in 0..path.len() {
        let state = path.state(i);
        let v = (noise.variance)(grid.time(i), state);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "noise variance",
                index: i,
            });
        }
        if v < 0.0 {
            return Err(Error::NonPositiveVariance { index: i, value: v });
        }
        let unit: f64 = match &student {
            None => rng.sample(StandardNormal),
            Some((t, scale)) => t.sample(&mut rng) * scale,
        };
        out.extend([state[0] + v.sqrt() * unit, v]);
    }
    PathRecord::new(path.grid(), vec!["x1_noisy".into(), "noise_var".into()], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::constant_fn;
    use std::sync::Arc;

    fn bm(x0: f64) -> SdeSpec {
        SdeSpec::new(constant_fn(0.0), constant_fn(1.0), x0)
    }

    fn sample_var(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
    }

    #[test]
    fn degenerate_sde_is_constant() {
        let spec = SdeSpec::new(constant_fn(0.0), constant_fn(0.0), 1.0);
        let p = simulate_diffusion(&spec, UniformGrid::new(20).unwrap(), &SimConfig::default()).unwrap();
        assert!(p.component(0).iter().all(|&x| x == 1.0));
    }

    #[test]
    fn pure_drift_is_linear() {
        let spec = SdeSpec::new(constant_fn(2.0), constant_fn(0.0), 0.0);
        let g = UniformGrid::new(50).unwrap();
        let p = simulate_diffusion(&spec, g, &SimConfig::default()).unwrap();
        for (i, x) in p.component(0).iter().enumerate() {
            assert!((x - 2.0 * g.time(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn brownian_terminal_variance() {
        let g = UniformGrid::new(1000).unwrap();
        let cfg = SimConfig { seed: 0, euler_substeps: 1, scheme: Scheme::EulerMaruyama };
        let ends: Vec<f64> = (0..10_000)
            .map(|r| {
                let c = SimConfig { seed: derive_seed(11, r), ..cfg };
                *simulate_diffusion(&bm(0.0), g, &c).unwrap().component(0).last().unwrap()
            })
            .collect();
        let v = sample_var(&ends);
        assert!((v - 1.0).abs() < 0.05, "variance {v}");
    }

    #[test]
    fn seed_determinism() {
        let g = UniformGrid::new(64).unwrap();
        let cfg = SimConfig::with_seed(99);
        let a = simulate_diffusion(&bm(1.0), g, &cfg).unwrap();
        let b = simulate_diffusion(&bm(1.0), g, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_diffusion(&bm(1.0), g, &SimConfig::with_seed(100)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_intensity_matches_diffusion() {
        let g = UniformGrid::new(64).unwrap();
        let cfg = SimConfig::with_seed(5);
        let spec = bm(1.0).with_jumps(JumpSpec { intensity: 0.0, sizes: JumpSizes::Fixed(1.0) });
        let a = simulate_jump_diffusion(&spec, g, &cfg).unwrap();
        let b = simulate_diffusion(&bm(1.0), g, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn poisson_mean_jump_count() {
        let spec = SdeSpec::new(constant_fn(0.0), constant_fn(0.0), 0.0)
            .with_jumps(JumpSpec { intensity: 5.0, sizes: JumpSizes::Fixed(1.0) });
        let g = UniformGrid::new(50).unwrap();
        let reps = 10_000;
        let total: f64 = (0..reps)
            .map(|r| {
                let p = simulate_jump_diffusion(&spec, g, &SimConfig::with_seed(derive_seed(3, r))).unwrap();
                *p.component(0).last().unwrap()
            })
            .sum();
        let mean = total / reps as f64;
        // sd of the mean is sqrt(5 / 1e4) ~ 0.022
        assert!((mean - 5.0).abs() < 0.1, "mean jump count {mean}");
    }

    #[test]
    fn large_increments_track_jumps() {
        let n = 400;
        let g = UniformGrid::new(n).unwrap();
        let cfg = SimConfig::with_seed(17);
        let spec = bm(0.0).with_jumps(JumpSpec { intensity: 5.0, sizes: JumpSizes::Fixed(1.0) });
        let jumps_only = SdeSpec::new(constant_fn(0.0), constant_fn(0.0), 0.0).with_jumps(spec.jumps.unwrap());
        let x = simulate_jump_diffusion(&spec, g, &cfg).unwrap().component(0);
        let j = simulate_jump_diffusion(&jumps_only, g, &cfg).unwrap().component(0);
        let threshold = 3.0 / (n as f64).sqrt();
        let big = x.windows(2).filter(|w| (w[1] - w[0]).abs() > threshold).count();
        let count = j.last().unwrap().round() as usize;
        assert!(count > 0);
        // distinct jumps landing in one interval or a 3-sigma diffusion move
        // can shift the tally by one or two
        assert!(big.abs_diff(count) <= 2, "big increments {big}, jumps {count}");
    }

    #[test]
    fn latent_pair_degenerate_vol() {
        let n = 20;
        let grid = FineGrid::new(n).unwrap();
        let c = 1.7;
        let vol = SdeSpec::new(constant_fn(0.0), constant_fn(0.0), c);
        let price = bm(0.0);
        let ends: Vec<f64> = (0..4000)
            .map(|r| {
                let cfg = SimConfig { seed: derive_seed(8, r), euler_substeps: 1, ..SimConfig::default() };
                let p = simulate_latent_vol_pair(&price, &vol, grid, &cfg).unwrap();
                assert!(p.component(1).iter().all(|&v| v == c));
                p.state(p.len() - 1)[0]
            })
            .collect();
        let v = sample_var(&ends);
        // sd of a sample variance over 4000 normals is c * sqrt(2/4000) ~ 0.038
        assert!((v - c).abs() < 0.15, "variance {v}");
    }

    #[test]
    fn latent_pair_both_degenerate() {
        let grid = FineGrid::new(5).unwrap();
        let price = SdeSpec::new(constant_fn(0.0), constant_fn(1.0), 2.0);
        let vol = SdeSpec::new(constant_fn(0.0), constant_fn(0.0), 0.0);
        let p = simulate_latent_vol_pair(&price, &vol, grid, &SimConfig::default()).unwrap();
        assert!(p.component(0).iter().all(|&v| v == 2.0));
        assert!(p.component(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn latent_pair_fourth_moment() {
        // n * (dX1)^2 for unit variance is chi^2_1 distributed, whose
        // variance is 2.
        let n = 50;
        let grid = FineGrid::new(n).unwrap();
        let price = bm(0.0);
        let vol = SdeSpec::new(constant_fn(0.0), constant_fn(0.0), 1.0);
        let mut per_rep = Vec::new();
        for r in 0..2000 {
            let cfg = SimConfig { seed: derive_seed(21, r), euler_substeps: 1, ..SimConfig::default() };
            let p = simulate_latent_vol_pair(&price, &vol, grid, &cfg).unwrap();
            let x1 = p.component(0);
            let y: Vec<f64> = (0..n).map(|j| {
                let d = x1[n * (j + 1)] - x1[n * j];
                n as f64 * d * d
            }).collect();
            per_rep.push(sample_var(&y));
        }
        let mean = per_rep.iter().sum::<f64>() / per_rep.len() as f64;
        assert!((mean - 2.0).abs() < 0.1, "mean variance {mean}");
    }

    #[test]
    fn zero_noise_is_identity() {
        let grid = FineGrid::new(6).unwrap();
        let p = simulate_diffusion(&bm(1.0), grid, &SimConfig::with_seed(1)).unwrap();
        let noisy = add_microstructure_noise(&p, &NoiseSpec::constant(0.0), &SimConfig::with_seed(2)).unwrap();
        assert_eq!(noisy.component(0), p.component(0));
        assert!(noisy.component(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_noise_variance() {
        let grid = FineGrid::new(100).unwrap();
        let v = 0.04;
        let p = simulate_diffusion(&bm(0.0), grid, &SimConfig::with_seed(1)).unwrap();
        let noisy = add_microstructure_noise(&p, &NoiseSpec::constant(v), &SimConfig::with_seed(2)).unwrap();
        let eps: Vec<f64> = noisy.component(0).iter().zip(p.component(0)).map(|(a, b)| a - b).collect();
        let sv = sample_var(&eps);
        // relative sd of the estimate over 1e4 draws is ~1.4%
        assert!((sv / v - 1.0).abs() < 0.06, "noise variance {sv}");
    }

    #[test]
    fn heavy_tailed_noise_is_bounded() {
        let grid = FineGrid::new(100).unwrap();
        let v: f64 = 0.01;
        let flat = SdeSpec::new(constant_fn(0.0), constant_fn(0.0), 0.0);
        let p = simulate_diffusion(&flat, grid, &SimConfig::with_seed(1)).unwrap();
        let spec = NoiseSpec { variance: constant_fn(v), dist: NoiseDist::StudentT { dof: 10.0 } };
        let noisy = add_microstructure_noise(&p, &spec, &SimConfig::with_seed(4)).unwrap();
        let x = noisy.component(0);
        let max = x.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let bound = 10.0 * v.sqrt() * (grid.points() as f64 - 1.0).ln();
        assert!(max.is_finite() && max < bound, "max {max} bound {bound}");
        let sv = sample_var(&x);
        assert!((sv / v - 1.0).abs() < 0.1, "noise variance {sv}");
        let bad = NoiseSpec { variance: constant_fn(v), dist: NoiseDist::StudentT { dof: 6.0 } };
        assert!(add_microstructure_noise(&p, &bad, &SimConfig::default()).is_err());
    }

    #[test]
    fn explosion_is_an_error() {
        let spec = SdeSpec::new(Arc::new(|_, s: &[f64]| s[0] * s[0] * 1e3), constant_fn(0.0), 10.0);
        let err = simulate_diffusion(&spec, UniformGrid::new(10).unwrap(), &SimConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { what: "state", .. }));
    }

    #[test]
    fn strong_order_half_refinement() {
        // Coupled runs of the Euler loop: coarser runs consume sums of the
        // finest Brownian increments. RMS terminal error against the 4x finer
        // reference shrinks like h^(1/2) as the substep count doubles.
        let spec = SdeSpec::new(
            Arc::new(|_, s: &[f64]| 0.5 * s[0]),
            Arc::new(|_, s: &[f64]| 0.8 * s[0].abs()),
            1.0,
        );
        let n = 16;
        let m = 16;
        let finest = n * m * 4;
        let reps = 2000;
        let (mut err_m, mut err_2m) = (0.0, 0.0);
        for r in 0..reps {
            let mut rng = stream_rng(derive_seed(77, r), 0);
            let dw: Vec<f64> = (0..finest)
                .map(|_| rng.sample::<f64, _>(StandardNormal) / (finest as f64).sqrt())
                .collect();
            let run = |substeps: usize| {
                let k = finest / (n * substeps);
                let path = integrate(&spec, n, substeps, |step| (dw[step * k..(step + 1) * k].iter().sum(), 0.0)).unwrap();
                *path.last().unwrap()
            };
            let reference = run(4 * m);
            err_m += (run(m) - reference).powi(2);
            err_2m += (run(2 * m) - reference).powi(2);
        }
        let (rms_m, rms_2m) = ((err_m / reps as f64).sqrt(), (err_2m / reps as f64).sqrt());
        // against a reference with step h/4 the ideal ratio is sqrt((1 - 1/4) / (1/2 - 1/4)) ~ 1.73
        let ratio = rms_m / rms_2m;
        assert!(ratio > 1.3 && ratio < 2.2, "ratio {ratio}");
        let h = 1.0 / (n * m) as f64;
        assert!(rms_m < 3.0 * h.sqrt(), "rms {rms_m}");
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let p = simulate_diffusion(&bm(1.0), UniformGrid::new(4).unwrap(), &SimConfig::default()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "time,x");
        assert_eq!(lines.len(), 6);
    }
}
