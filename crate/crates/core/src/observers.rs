//! Observation constructors: map a discretely observed path to volatility
//! proxies `Y_i` and covariate estimates `Xhat_i`.
//!
//! | constructor          | path grid | `Y`                                  | `Xhat`            |
//! |----------------------|-----------|--------------------------------------|-------------------|
//! | local volatility     | uniform   | `n (dX_i)^2`                         | `X_{t_i}`         |
//! | jump-robust          | uniform   | `n (dX_i)^2 1{n (dX_i)^2 < alpha_n}` | `X_{t_i}`         |
//! | microstructure noise | fine      | pre-averaged cosine-weighted square  | block mean, noise variance |
//! | stochastic vol.      | fine      | cosine-weighted spot variance square | price, block realised variance |

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{FineGrid, ModelKind, ObservationSeries, UniformGrid};
use crate::sim::PathRecord;

/// Truncation threshold sequence `n -> alpha_n` for the jump-robust observer.
#[derive(Clone)]
pub struct TruncationRule {
    alpha: Arc<dyn Fn(usize) -> f64 + Send + Sync>,
}

impl TruncationRule {
    pub fn new(alpha: Arc<dyn Fn(usize) -> f64 + Send + Sync>) -> Self {
        Self { alpha }
    }

    /// `alpha_n = log(n)^2`. Grows faster than `log n` and slower than any
    /// positive power of `n`.
    pub fn log_squared() -> Self {
        Self::new(Arc::new(|n| {
            let l = (n as f64).ln();
            l * l
        }))
    }

    pub fn threshold(&self, n: usize) -> f64 {
        (self.alpha)(n)
    }
}

impl Default for TruncationRule {
    fn default() -> Self {
        Self::log_squared()
    }
}

impl fmt::Debug for TruncationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TruncationRule").finish_non_exhaustive()
    }
}

fn uniform_price(path: &PathRecord) -> Result<(UniformGrid, Vec<f64>)> {
    let grid = path
        .uniform_grid()
        .ok_or_else(|| Error::InvalidArgument("observer needs a path on the uniform grid".into()))?;
    Ok((grid, path.component(0)))
}

fn fine_price(path: &PathRecord) -> Result<(usize, Vec<f64>)> {
    let grid = path
        .fine_grid()
        .ok_or_else(|| Error::InvalidArgument("observer needs a path on the fine grid".into()))?;
    Ok((grid.n(), path.component(0)))
}

fn check_fine_len(n: usize, x: &[f64]) -> Result<FineGrid> {
    let grid = FineGrid::new(n)?;
    if x.len() != grid.points() {
        return Err(Error::BlockMisaligned {
            expected: grid.points(),
            actual: x.len(),
        });
    }
    Ok(grid)
}

/// Realised volatility `Y_i = n (X_{t_{i+1}} - X_{t_i})^2`, `Xhat_i = X_{t_i}`.
pub fn local_vol_observer(path: &PathRecord) -> Result<ObservationSeries> {
    let (grid, x) = uniform_price(path)?;
    realised(grid, &x, f64::INFINITY, ModelKind::LocalVol)
}

/// Truncated realised volatility: the scaled squared increment, set to zero
/// when it reaches `alpha_n`.
pub fn jump_robust_observer(path: &PathRecord, rule: &TruncationRule) -> Result<ObservationSeries> {
    let (grid, x) = uniform_price(path)?;
    let alpha = rule.threshold(grid.n());
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("truncation threshold must be positive, got {alpha}")));
    }
    realised(grid, &x, alpha, ModelKind::Jumps)
}

fn realised(grid: UniformGrid, x: &[f64], alpha: f64, kind: ModelKind) -> Result<ObservationSeries> {
    let n = grid.n();
    let nf = n as f64;
    let y = x
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            let v = nf * d * d;
            if v < alpha {
                v
            } else {
                0.0
            }
        })
        .collect();
    ObservationSeries::new(grid, y, x[..n].to_vec(), 1, kind)
}

/// Cosine weights `cos(pi (i + 1/2) / n)`, `i < n`.
pub fn cosine_weights(n: usize) -> Vec<f64> {
    let nf = n as f64;
    (0..n).map(|i| (PI * (i as f64 + 0.5) / nf).cos()).collect()
}

/// Pre-averaging under microstructure noise. For block `j` (fine indices
/// `nj .. nj + n`):
///
/// ```text
/// Xhat1_j = n^-1 sum_i X~_{nj+i}
/// Xhat2_j = (2n)^-1 sum_i (X~_{nj+i+1} - X~_{nj+i})^2
/// Y_j     = pi^2 (2 n^-1 (sum_i cos(pi (i + 1/2) / n) X~_{nj+i})^2 - Xhat2_j)
/// ```
pub fn microstructure_observer(noisy: &PathRecord) -> Result<ObservationSeries> {
    let (n, x) = fine_price(noisy)?;
    microstructure_from_fine(n, &x)
}

/// [`microstructure_observer`] on raw noisy prices at the `n^2 + 1` fine times.
pub fn microstructure_from_fine(n: usize, x: &[f64]) -> Result<ObservationSeries> {
    let grid = check_fine_len(n, x)?;
    let nf = n as f64;
    let w = cosine_weights(n);
    let mut y = Vec::with_capacity(n);
    let mut xhat = Vec::with_capacity(2 * n);
    for j in 0..n {
        let block = &x[n * j..n * (j + 1) + 1];
        let mean = block[..n].iter().sum::<f64>() / nf;
        let noise = block.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum::<f64>() / (2.0 * nf);
        let weighted: f64 = w.iter().zip(&block[..n]).map(|(c, v)| c * v).sum();
        y.push(PI * PI * (2.0 / nf * weighted * weighted - noise));
        xhat.extend([mean, noise]);
    }
    ObservationSeries::new(grid.outer(), y, xhat, 2, ModelKind::Microstructure)
}

/// Vol-of-vol observations from fine-grid prices. With spot variance
/// estimates `X~2_i = n^2 (X1_{i+1} - X1_i)^2`:
///
/// ```text
/// Xhat1_j = X1_{t_j}
/// Xhat2_j = n^-1 sum_i X~2_{nj+i}
/// Y_j     = 2 pi^2 (n^-1 (sum_i cos(pi (i + 1/2) / n) X~2_{nj+i})^2 - Xhat2_j^2)
/// ```
pub fn stoch_vol_observer(path: &PathRecord) -> Result<ObservationSeries> {
    let (n, x) = fine_price(path)?;
    stoch_vol_from_fine(n, &x)
}

/// [`stoch_vol_observer`] on raw prices at the `n^2 + 1` fine times.
pub fn stoch_vol_from_fine(n: usize, x: &[f64]) -> Result<ObservationSeries> {
    let grid = check_fine_len(n, x)?;
    let nf = n as f64;
    let n2 = nf * nf;
    let w = cosine_weights(n);
    let spot: Vec<f64> = x.windows(2).map(|p| n2 * (p[1] - p[0]).powi(2)).collect();
    let mut y = Vec::with_capacity(n);
    let mut xhat = Vec::with_capacity(2 * n);
    for j in 0..n {
        let block = &spot[n * j..n * (j + 1)];
        let rv = block.iter().sum::<f64>() / nf;
        let weighted: f64 = w.iter().zip(block).map(|(c, v)| c * v).sum();
        y.push(2.0 * PI * PI * (weighted * weighted / nf - rv * rv));
        xhat.extend([x[grid.outer_index(j)], rv]);
    }
    ObservationSeries::new(grid.outer(), y, xhat, 2, ModelKind::StochVol)
}
