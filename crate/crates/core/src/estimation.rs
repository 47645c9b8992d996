//! Least-squares estimation of the null-model parameter,
//! `theta_hat = argmin_theta sum_i (Y_i - mu(theta, t_i, Xhat_i))^2` over the
//! parameter box.
//!
//! Models that carry a linear basis are solved through the normal
//! equations. Everything else goes through a multi-start projected BFGS with
//! central finite-difference gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ObservationSeries, ParamBounds, ParametricVolModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    ClosedFormLinear,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub rss: f64,
    pub method: FitMethod,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeOptions {
    pub starts: usize,
    /// Bound on the projected gradient of the objective `rss / sum(Y^2)`.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            gradient_tolerance: 1e-8,
            max_iterations: 500,
        }
    }
}

/// Half-width of the region the multi-start grid is laid over when the
/// parameter box is wider than that.
const START_REGION: f64 = 10.0;

/// Pivot threshold, relative to the largest diagonal of `X'X`.
const SINGULAR_TOLERANCE: f64 = 1e-12;

pub fn rss(series: &ObservationSeries, model: &ParametricVolModel, theta: &[f64]) -> f64 {
    let grid = series.grid();
    series
        .y()
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let r = y - model.mu(theta, grid.time(i), series.xhat(i));
            r * r
        })
        .sum()
}

/// Least-squares fit: closed form when the model is linear in theta and the
/// unconstrained solution lies in the parameter box, iterative otherwise.
pub fn fit_least_squares(series: &ObservationSeries, model: &ParametricVolModel) -> Result<FitResult> {
    let p = model.param_dim();
    if series.n() < p {
        return Err(Error::InvalidArgument(format!(
            "{} observations cannot identify {p} parameters",
            series.n()
        )));
    }
    if model.basis().is_some() {
        let theta = solve_normal_equations(series, model)?;
        if model.bounds().check(&theta).is_ok() {
            let rss = rss(series, model, &theta);
            return Ok(FitResult {
                theta,
                rss,
                method: FitMethod::ClosedFormLinear,
                converged: true,
                iterations: 0,
            });
        }
    }
    fit_iterative(series, model, &IterativeOptions::default())
}

fn solve_normal_equations(series: &ObservationSeries, model: &ParametricVolModel) -> Result<Vec<f64>> {
    let basis = model.basis().expect("linear model");
    let p = model.param_dim();
    let grid = series.grid();
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    let mut row = vec![0.0; p];
    for (i, &y) in series.y().iter().enumerate() {
        basis(grid.time(i), series.xhat(i), &mut row);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "basis", index: i });
        }
        for a in 0..p {
            xty[a] += row[a] * y;
            for b in 0..p {
                xtx[a * p + b] += row[a] * row[b];
            }
        }
    }
    solve_dense(&mut xtx, &mut xty, p)?;
    Ok(xty)
}

/// Gaussian elimination with partial pivoting; solution written to `rhs`.
fn solve_dense(a: &mut [f64], rhs: &mut [f64], p: usize) -> Result<()> {
    let scale = (0..p).map(|k| a[k * p + k].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::SingularDesign);
    }
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&r, &s| a[r * p + col].abs().total_cmp(&a[s * p + col].abs()))
            .unwrap();
        if a[pivot * p + col].abs() <= SINGULAR_TOLERANCE * scale {
            return Err(Error::SingularDesign);
        }
        if pivot != col {
            for k in 0..p {
                a.swap(col * p + k, pivot * p + k);
            }
            rhs.swap(col, pivot);
        }
        for r in col + 1..p {
            let f = a[r * p + col] / a[col * p + col];
            for k in col..p {
                a[r * p + k] -= f * a[col * p + k];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    for col in (0..p).rev() {
        let mut s = rhs[col];
        for k in col + 1..p {
            s -= a[col * p + k] * rhs[k];
        }
        rhs[col] = s / a[col * p + col];
    }
    Ok(())
}

struct Objective<'a> {
    series: &'a ObservationSeries,
    model: &'a ParametricVolModel,
    scale: f64,
}

impl Objective<'_> {
    fn value(&self, theta: &[f64]) -> f64 {
        rss(self.series, self.model, theta) / self.scale
    }

    /// Central differences with step `1e-6 (1 + |theta_k|)`, one-sided at
    /// the box faces.
    fn gradient(&self, theta: &[f64], bounds: &ParamBounds, out: &mut [f64]) {
        let mut probe = theta.to_vec();
        for k in 0..theta.len() {
            let h = 1e-6 * (1.0 + theta[k].abs());
            let hi = (theta[k] + h).min(bounds.upper[k]);
            let lo = (theta[k] - h).max(bounds.lower[k]);
            probe[k] = hi;
            let f_hi = self.value(&probe);
            probe[k] = lo;
            let f_lo = self.value(&probe);
            probe[k] = theta[k];
            out[k] = if hi > lo { (f_hi - f_lo) / (hi - lo) } else { 0.0 };
        }
    }
}

/// Projected gradient: zero where the gradient pushes through an active face.
fn projected(theta: &[f64], g: &[f64], bounds: &ParamBounds, out: &mut [f64]) {
    for k in 0..theta.len() {
        let at_lo = theta[k] <= bounds.lower[k] && g[k] > 0.0;
        let at_hi = theta[k] >= bounds.upper[k] && g[k] < 0.0;
        out[k] = if at_lo || at_hi { 0.0 } else { g[k] };
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Multi-start grid: start `s` sits at fraction
/// `((s (2k + 1)) mod S + 1/2) / S` along coordinate `k` of the start region.
fn start_points(bounds: &ParamBounds, starts: usize) -> Vec<Vec<f64>> {
    let p = bounds.dim();
    (0..starts)
        .map(|s| {
            (0..p)
                .map(|k| {
                    let (mut lo, mut hi) = (bounds.lower[k], bounds.upper[k]);
                    if lo.max(-START_REGION) <= hi.min(START_REGION) {
                        lo = lo.max(-START_REGION);
                        hi = hi.min(START_REGION);
                    }
                    let frac = (((s * (2 * k + 1)) % starts) as f64 + 0.5) / starts as f64;
                    lo + (hi - lo) * frac
                })
                .collect()
        })
        .collect()
}

struct Leg {
    theta: Vec<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
}

fn bfgs_leg(obj: &Objective<'_>, bounds: &ParamBounds, start: Vec<f64>, opts: &IterativeOptions) -> Leg {
    let p = start.len();
    let mut x = start;
    bounds.project(&mut x);
    let mut f = obj.value(&x);
    let mut g = vec![0.0; p];
    let mut pg = vec![0.0; p];
    let mut h_inv = identity(p);
    obj.gradient(&x, bounds, &mut g);
    let mut iterations = 0;
    let mut converged = false;
    while f.is_finite() && iterations < opts.max_iterations {
        projected(&x, &g, bounds, &mut pg);
        if norm(&pg) < opts.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d: Vec<f64> = (0..p).map(|a| -(0..p).map(|b| h_inv[a * p + b] * g[b]).sum::<f64>()).collect();
        for k in 0..p {
            if pg[k] == 0.0 && g[k] != 0.0 {
                d[k] = 0.0;
            }
        }
        if !(dot(&d, &pg) < 0.0) {
            h_inv = identity(p);
            d = pg.iter().map(|v| -v).collect();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            bounds.project(&mut trial);
            let ft = obj.value(&trial);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if ft.is_finite() && ft <= f + 1e-4 * dot(&g, &moved) {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else { break };
        let mut g_new = vec![0.0; p];
        obj.gradient(&x_new, bounds, &mut g_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if iterations == 1 {
                let gamma = sy / dot(&y, &y);
                h_inv = identity(p).into_iter().map(|v| v * gamma).collect();
            }
            bfgs_update(&mut h_inv, &s, &y, sy);
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    if !converged && f.is_finite() {
        projected(&x, &g, bounds, &mut pg);
        converged = norm(&pg) < opts.gradient_tolerance;
    }
    Leg {
        theta: x,
        value: f,
        converged,
        iterations,
    }
}

fn identity(p: usize) -> Vec<f64> {
    let mut m = vec![0.0; p * p];
    for k in 0..p {
        m[k * p + k] = 1.0;
    }
    m
}

/// Inverse-Hessian BFGS update.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let p = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..p).map(|a| (0..p).map(|b| h[a * p + b] * y[b]).sum()).collect();
    let yhy = dot(y, &hy);
    for a in 0..p {
        for b in 0..p {
            h[a * p + b] += -rho * (hy[a] * s[b] + s[a] * hy[b]) + (rho * rho * yhy + rho) * s[a] * s[b];
        }
    }
}

/// Iterative bounded least squares from a grid of starts. Among converged
/// legs the smallest residual sum wins; ties go to the smallest-norm theta.
pub fn fit_iterative(series: &ObservationSeries, model: &ParametricVolModel, opts: &IterativeOptions) -> Result<FitResult> {
    let energy: f64 = series.y().iter().map(|y| y * y).sum();
    let obj = Objective {
        series,
        model,
        scale: if energy > 0.0 { energy } else { 1.0 },
    };
    let bounds = model.bounds();
    let legs: Vec<Leg> = start_points(bounds, opts.starts.max(1))
        .into_iter()
        .map(|s| bfgs_leg(&obj, bounds, s, opts))
        .collect();
    let iterations = legs.iter().map(|l| l.iterations).sum();
    let best = legs
        .into_iter()
        .filter(|l| l.converged && l.value.is_finite())
        .min_by(|a, b| {
            let tie = 1e-12 * a.value.abs().max(b.value.abs());
            if (a.value - b.value).abs() <= tie {
                norm(&a.theta).total_cmp(&norm(&b.theta))
            } else {
                a.value.total_cmp(&b.value)
            }
        })
        .ok_or(Error::NoConvergence {
            tolerance: opts.gradient_tolerance,
        })?;
    Ok(FitResult {
        rss: rss(series, model, &best.theta),
        theta: best.theta,
        method: FitMethod::Iterative,
        converged: true,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, UniformGrid};
    use crate::sim::derive_seed;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn series(y: Vec<f64>, x: Vec<f64>) -> ObservationSeries {
        ObservationSeries::new(UniformGrid::new(y.len()).unwrap(), y, x, 1, ModelKind::LocalVol).unwrap()
    }

    fn chi2_series(n: usize, seed: u64, x: impl Fn(usize) -> f64, level: impl Fn(f64) -> f64) -> ObservationSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(&x).collect();
        let y = xs
            .iter()
            .map(|&xi| {
                let z: f64 = rng.sample(StandardNormal);
                level(xi) * z * z
            })
            .collect();
        series(y, xs)
    }

    fn two_param() -> ParametricVolModel {
        ParametricVolModel::linear(
            "affine",
            ModelKind::LocalVol,
            2,
            Arc::new(|_, x, out| {
                out[0] = 1.0;
                out[1] = x[0] * x[0];
            }),
        )
    }

    #[test]
    fn constant_model_is_sample_mean() {
        let s = chi2_series(200, 1, |_| 0.0, |_| 1.5);
        let fit = fit_least_squares(&s, &ParametricVolModel::constant(ModelKind::LocalVol)).unwrap();
        let mean = s.y().iter().sum::<f64>() / 200.0;
        assert_eq!(fit.method, FitMethod::ClosedFormLinear);
        assert!((fit.theta[0] - mean).abs() < 1e-13);
    }

    #[test]
    fn proportional_exact_fit() {
        let x: Vec<f64> = (0..50).map(|i| 0.5 + i as f64 / 25.0).collect();
        let y = x.iter().map(|v| 3.0 * v * v).collect();
        let fit = fit_least_squares(&series(y, x), &ParametricVolModel::proportional(ModelKind::LocalVol)).unwrap();
        assert!((fit.theta[0] - 3.0).abs() < 1e-14);
        assert!(fit.rss < 1e-24);
    }

    #[test]
    fn proportional_matches_grid_search() {
        let s = chi2_series(300, 7, |i| 0.5 + (i % 17) as f64 / 8.0, |x| 2.0 * x * x);
        let model = ParametricVolModel::proportional(ModelKind::LocalVol);
        let fit = fit_least_squares(&s, &model).unwrap();
        let (mut best, mut best_rss) = (0.0, f64::INFINITY);
        for k in 0..=100_000 {
            let th = k as f64 * 1e-4;
            let r = rss(&s, &model, &[th]);
            if r < best_rss {
                best = th;
                best_rss = r;
            }
        }
        assert!((fit.theta[0] - best).abs() < 1e-3, "{} vs {best}", fit.theta[0]);
    }

    #[test]
    fn rank_deficient_design() {
        let s = series(vec![1.0; 10], vec![0.0; 10]);
        let err = fit_least_squares(&s, &ParametricVolModel::proportional(ModelKind::LocalVol)).unwrap_err();
        assert_eq!(err, Error::SingularDesign);
        let s = series(vec![1.0; 10], vec![1.0; 10]);
        assert_eq!(fit_least_squares(&s, &two_param()).unwrap_err(), Error::SingularDesign);
    }

    #[test]
    fn closed_form_and_iterative_agree() {
        let s = chi2_series(400, 3, |i| (i as f64 / 100.0).sin() + 1.2, |x| 0.5 + x * x);
        let model = two_param();
        let closed = fit_least_squares(&s, &model).unwrap();
        let iter = fit_iterative(&s, &model, &IterativeOptions::default()).unwrap();
        assert_eq!(iter.method, FitMethod::Iterative);
        for k in 0..2 {
            assert!((closed.theta[k] - iter.theta[k]).abs() < 1e-6, "{:?} vs {:?}", closed.theta, iter.theta);
        }
    }

    #[test]
    fn minimiser_beats_random_probes() {
        let s = chi2_series(250, 5, |i| 0.2 + (i % 13) as f64 / 6.0, |x| 1.0 + x);
        let model = two_param().with_bounds(ParamBounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap()).unwrap();
        let fit = fit_least_squares(&s, &model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0, 9));
        for _ in 0..100 {
            let th = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            assert!(fit.rss <= rss(&s, &model, &th));
        }
    }

    #[test]
    fn bounded_solution_sits_on_face() {
        let s = chi2_series(100, 2, |_| 0.0, |_| 1.0);
        let model = ParametricVolModel::constant(ModelKind::LocalVol)
            .with_bounds(ParamBounds::new(vec![2.0], vec![5.0]).unwrap())
            .unwrap();
        let fit = fit_least_squares(&s, &model).unwrap();
        assert_eq!(fit.method, FitMethod::Iterative);
        assert_eq!(fit.theta, vec![2.0]);
        assert!(fit.converged);
    }

    #[test]
    fn nonlinear_model_converges() {
        // mu = exp(theta): the minimiser is log(mean Y)
        let s = chi2_series(300, 11, |_| 0.0, |_| 2.0);
        let model = ParametricVolModel::with_mean("exp", ModelKind::LocalVol, 1, Arc::new(|th, _, _| th[0].exp()));
        let fit = fit_least_squares(&s, &model).unwrap();
        let mean = s.y().iter().sum::<f64>() / 300.0;
        assert!(fit.converged);
        assert!((fit.theta[0] - mean.ln()).abs() < 1e-6, "{} vs {}", fit.theta[0], mean.ln());
    }

    #[test]
    fn nan_objective_never_converges() {
        let s = chi2_series(20, 1, |_| 0.0, |_| 1.0);
        let model = ParametricVolModel::with_mean("nan", ModelKind::LocalVol, 1, Arc::new(|_, _, _| f64::NAN));
        assert!(matches!(fit_least_squares(&s, &model), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn root_n_consistency() {
        let medians: Vec<f64> = [100usize, 400, 1600]
            .iter()
            .map(|&n| {
                let mut errs: Vec<f64> = (0..400)
                    .map(|r| {
                        let s = chi2_series(n, derive_seed(n as u64, r), |_| 0.0, |_| 1.0);
                        let fit = fit_least_squares(&s, &ParametricVolModel::constant(ModelKind::LocalVol)).unwrap();
                        (fit.theta[0] - 1.0).abs() * (n as f64).sqrt()
                    })
                    .collect();
                errs.sort_by(f64::total_cmp);
                errs[errs.len() / 2]
            })
            .collect();
        for w in medians.windows(2) {
            let ratio = w[1] / w[0];
            assert!((0.5..=2.0).contains(&ratio), "medians {medians:?}");
        }
    }

    #[test]
    fn start_grid_covers_region() {
        let b = ParamBounds::symmetric(2, 1e6);
        let starts = start_points(&b, 8);
        assert_eq!(starts.len(), 8);
        for s in &starts {
            assert!(s.iter().all(|v| v.abs() <= START_REGION));
        }
        let b = ParamBounds::new(vec![100.0], vec![200.0]).unwrap();
        assert!(start_points(&b, 8).iter().all(|s| (100.0..=200.0).contains(&s[0])));
    }
}
