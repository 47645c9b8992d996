//! Haar scaling coefficients of the normalised observations, the decimating
//! Haar cascade, and the max statistic with its Gumbel normalisation.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NormalisedSeries;

/// `J = floor(log2(n) / 2)`, so that `2^J` is of order `sqrt(n)`.
pub fn resolution_level(n: usize) -> Result<u32> {
    if n < 4 {
        return Err(Error::GridTooSmall { n, min: 4 });
    }
    Ok(n.ilog2() / 2)
}

/// `alpha_{J,k} = n^-1 sum_i phi_{J,k}(t_i) Z_i`. Observation `i` lands in
/// bin `k = floor(2^J i / n)`; each bin sum is scaled by `2^{J/2} / n`.
pub fn scaling_coefficients(z: &[f64], level: u32) -> Result<Vec<f64>> {
    let n = z.len();
    let m = 1usize.checked_shl(level).filter(|&m| m <= n).ok_or(Error::LevelTooFine { level, n })?;
    let mut bins = vec![0.0; m];
    for (i, &v) in z.iter().enumerate() {
        bins[(m * i) / n] += v;
    }
    let w = (m as f64).sqrt() / n as f64;
    for b in &mut bins {
        *b *= w;
    }
    Ok(bins)
}

/// Haar cascade: at each level `s'_k = (s_2k + s_2k+1)/sqrt2` and
/// `d_k = (s_2k - s_2k+1)/sqrt2`. Returns `alpha_00` and `beta[j]` for
/// `j = 0..J`, where `beta[j]` holds `2^j` detail coefficients.
pub fn fast_haar_transform(scaling: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
    let m = scaling.len();
    if m == 0 || !m.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(m));
    }
    let levels = m.trailing_zeros() as usize;
    let mut beta = vec![Vec::new(); levels];
    let mut s = scaling.to_vec();
    for j in (0..levels).rev() {
        let half = s.len() / 2;
        let mut coarse = Vec::with_capacity(half);
        let mut detail = Vec::with_capacity(half);
        for k in 0..half {
            let (a, b) = (s[2 * k], s[2 * k + 1]);
            coarse.push((a + b) * FRAC_1_SQRT_2);
            detail.push((a - b) * FRAC_1_SQRT_2);
        }
        beta[j] = detail;
        s = coarse;
    }
    Ok((s[0], beta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletDecomposition {
    #[serde(rename = "J")]
    pub level: u32,
    pub scaling: Vec<f64>,
    pub alpha00: f64,
    pub beta: Vec<Vec<f64>>,
}

impl WaveletDecomposition {
    pub fn from_values(z: &[f64], level: u32) -> Result<Self> {
        let scaling = scaling_coefficients(z, level)?;
        let (alpha00, beta) = fast_haar_transform(&scaling)?;
        Ok(Self {
            level,
            scaling,
            alpha00,
            beta,
        })
    }

    pub fn new(zs: &NormalisedSeries, level: u32) -> Result<Self> {
        Self::from_values(zs.z(), level)
    }

    /// The `2^J` tested coefficients: `alpha_00` then `beta` level by level.
    pub fn coefficients(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.alpha00).chain(self.beta.iter().flatten().copied())
    }

    /// `(sum scaling^2, alpha00^2 + sum beta^2)`, equal up to rounding.
    pub fn energies(&self) -> (f64, f64) {
        let fine = self.scaling.iter().map(|v| v * v).sum();
        let coarse = self.coefficients().map(|v| v * v).sum();
        (fine, coarse)
    }
}

/// `T = max(|alpha_00|, max_{j<J,k} |beta_jk|)`. The level-J scaling
/// coefficients are not part of the maximum.
pub fn max_statistic(dec: &WaveletDecomposition) -> f64 {
    dec.coefficients().fold(0.0, |m, v| m.max(v.abs()))
}

/// Normalising constants of the Gumbel limit of the max of `m` coefficients:
/// `a_m = (2 log m)^{-1/2}`, `b_m = 1/a_m - a_m log(pi log m) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelConstants {
    pub a: f64,
    pub b: f64,
    pub m: u64,
}

impl GumbelConstants {
    pub fn for_count(m: u64) -> Self {
        let lm = (m as f64).ln();
        let a = 1.0 / (2.0 * lm).sqrt();
        let b = 1.0 / a - 0.5 * a * (PI * lm).ln();
        Self { a, b, m }
    }

    /// `q = -a log(-log(1 - alpha)) + b`.
    pub fn quantile(&self, alpha: f64) -> f64 {
        -self.a * (-(1.0 - alpha).ln()).ln() + self.b
    }

    /// Gumbel survival function at the standardised value `(x - b) / a`.
    pub fn p_value(&self, x: f64) -> f64 {
        let u = (x - self.b) / self.a;
        -(-(-u).exp()).exp_m1()
    }
}

pub fn gumbel_constants(level: u32) -> Result<GumbelConstants> {
    if level == 0 || level > 62 {
        return Err(Error::InvalidArgument(format!("Gumbel constants need 1 <= J <= 62, got {level}")));
    }
    Ok(GumbelConstants::for_count(1u64 << level))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn haar_phi(level: u32, k: usize, t: f64) -> f64 {
        let s = (1u64 << level) as f64;
        let u = s * t - k as f64;
        if (0.0..1.0).contains(&u) {
            s.sqrt()
        } else {
            0.0
        }
    }

    /// Exact `int phi_{J,l} psi_{j,k}` for j < J.
    fn phi_psi_integral(big: u32, l: usize, j: u32, k: usize) -> f64 {
        let lo = l as f64 / (1u64 << big) as f64;
        let width = 1.0 / (1u64 << big) as f64;
        let mid = lo + width / 2.0;
        let sj = (1u64 << j) as f64;
        let u = sj * mid - k as f64;
        let psi = if (0.0..0.5).contains(&u) {
            sj.sqrt()
        } else if (0.5..1.0).contains(&u) {
            -sj.sqrt()
        } else {
            0.0
        };
        ((1u64 << big) as f64).sqrt() * psi * width
    }

    #[test]
    fn resolution_levels() {
        assert_eq!(resolution_level(100).unwrap(), 3);
        assert_eq!(resolution_level(4).unwrap(), 1);
        assert_eq!(resolution_level(512).unwrap(), 4);
        assert_eq!(resolution_level(1 << 16).unwrap(), 8);
        assert!(resolution_level(3).is_err());
        for n in 4..5000usize {
            let j = resolution_level(n).unwrap();
            assert_eq!(j, ((n as f64).log2() / 2.0).floor() as u32, "n={n}");
        }
    }

    #[test]
    fn constant_signal_scaling() {
        let a = scaling_coefficients(&[1.0; 4], 1).unwrap();
        let h = 2f64.sqrt() / 2.0;
        assert!((a[0] - h).abs() < 1e-15 && (a[1] - h).abs() < 1e-15);
        assert_eq!(scaling_coefficients(&[0.0; 9], 2).unwrap(), vec![0.0; 4]);
        assert_eq!(scaling_coefficients(&[1.0; 7], 3).unwrap_err(), Error::LevelTooFine { level: 3, n: 7 });
    }

    #[test]
    fn scaling_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 128;
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let fast = scaling_coefficients(&z, 3).unwrap();
        for (k, v) in fast.iter().enumerate() {
            let direct: f64 = (0..n).map(|i| haar_phi(3, k, i as f64 / n as f64) * z[i]).sum::<f64>() / n as f64;
            assert!((v - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn one_level_butterfly() {
        let (a, b) = (0.3, -1.1);
        let (a00, beta) = fast_haar_transform(&[a, b]).unwrap();
        assert!((a00 - (a + b) / 2f64.sqrt()).abs() < 1e-15);
        assert!((beta[0][0] - (a - b) / 2f64.sqrt()).abs() < 1e-15);
        let h = 2f64.sqrt() / 2.0;
        let (a00, beta) = fast_haar_transform(&[h, h]).unwrap();
        assert!((a00 - 1.0).abs() < 1e-15);
        assert_eq!(beta[0][0], 0.0);
        assert_eq!(fast_haar_transform(&[1.0; 6]).unwrap_err(), Error::NotPowerOfTwo(6));
    }

    #[test]
    fn cascade_matches_exact_integrals() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let big = 4;
        let s: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a00, beta) = fast_haar_transform(&s).unwrap();
        let direct_a00: f64 = s.iter().map(|v| v * 0.25).sum();
        assert!((a00 - direct_a00).abs() < 1e-12);
        for j in 0..big {
            for k in 0..(1usize << j) {
                let direct: f64 = (0..16).map(|l| s[l] * phi_psi_integral(big, l, j, k)).sum();
                assert!((beta[j as usize][k] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn statistic_examples() {
        let ones = WaveletDecomposition::from_values(&[1.0; 64], 3).unwrap();
        assert!((max_statistic(&ones) - 1.0).abs() < 1e-14);
        let zeros = WaveletDecomposition::from_values(&[0.0; 64], 3).unwrap();
        assert_eq!(max_statistic(&zeros), 0.0);
        let dec = WaveletDecomposition {
            level: 2,
            scaling: vec![5.0; 4],
            alpha00: 0.2,
            beta: vec![vec![-0.9], vec![0.3, 0.1]],
        };
        assert_eq!(max_statistic(&dec), 0.9);
    }

    #[test]
    fn gumbel_values() {
        let g = gumbel_constants(3).unwrap();
        // independent evaluation: a_8 = 0.49035617..., b_8 = 1.57917657...
        assert!((g.a - 0.490_356_170_0).abs() < 1e-9, "a = {}", g.a);
        assert!((g.b - 1.579_176_578_0).abs() < 1e-9, "b = {}", g.b);
        assert!((g.quantile(0.05) - 3.035_630_144_5).abs() < 1e-9);
        let g1 = gumbel_constants(1).unwrap();
        assert!((g1.a - 0.849_322).abs() < 1e-6);
        for j in 1..20 {
            assert!(gumbel_constants(j + 1).unwrap().a < gumbel_constants(j).unwrap().a);
        }
        assert!(gumbel_constants(0).is_err());
    }

    #[test]
    fn p_value_inverts_quantile() {
        let g = gumbel_constants(5).unwrap();
        for &alpha in &[0.01, 0.05, 0.1, 0.5] {
            assert!((g.p_value(g.quantile(alpha)) - alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn json_field_names() {
        let dec = WaveletDecomposition::from_values(&[1.0; 16], 2).unwrap();
        let v: serde_json::Value = serde_json::to_value(&dec).unwrap();
        for key in ["J", "scaling", "alpha00", "beta"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    proptest! {
        #[test]
        fn energy_identity(z in proptest::collection::vec(-10.0f64..10.0, 16..600), seed in 0u32..8) {
            let level = seed % (resolution_level(z.len()).unwrap() + 1);
            let dec = WaveletDecomposition::from_values(&z, level.max(1)).unwrap();
            let (fine, coarse) = dec.energies();
            prop_assert!((fine - coarse).abs() <= 1e-10 * fine.max(1e-300));
        }

        #[test]
        fn linearity(
            pair in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 16..300),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let z1: Vec<f64> = pair.iter().map(|p| p.0).collect();
            let z2: Vec<f64> = pair.iter().map(|p| p.1).collect();
            let mix: Vec<f64> = pair.iter().map(|p| a * p.0 + b * p.1).collect();
            let level = resolution_level(z1.len()).unwrap();
            let d1 = WaveletDecomposition::from_values(&z1, level).unwrap();
            let d2 = WaveletDecomposition::from_values(&z2, level).unwrap();
            let dm = WaveletDecomposition::from_values(&mix, level).unwrap();
            for ((u, v), w) in d1.coefficients().zip(d2.coefficients()).zip(dm.coefficients()) {
                prop_assert!((a * u + b * v - w).abs() < 1e-12);
            }
        }

        #[test]
        fn location_shift(z in proptest::collection::vec(-5.0f64..5.0, 16..700), c in -4.0f64..4.0) {
            let n = z.len();
            let level = resolution_level(n).unwrap();
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let d0 = WaveletDecomposition::from_values(&z, level).unwrap();
            let d1 = WaveletDecomposition::from_values(&shifted, level).unwrap();
            prop_assert!((d1.alpha00 - d0.alpha00 - c).abs() < 1e-12);
            let bound = if n % (1 << level) == 0 { 1e-12 } else { c.abs() * ((1u64 << level) as f64).sqrt() / n as f64 + 1e-12 };
            for (u, v) in d0.beta.iter().flatten().zip(d1.beta.iter().flatten()) {
                prop_assert!((u - v).abs() <= bound);
            }
        }

        #[test]
        fn sign_flip_invariance(z in proptest::collection::vec(-5.0f64..5.0, 16..300)) {
            let level = resolution_level(z.len()).unwrap();
            let neg: Vec<f64> = z.iter().map(|v| -v).collect();
            let t0 = max_statistic(&WaveletDecomposition::from_values(&z, level).unwrap());
            let t1 = max_statistic(&WaveletDecomposition::from_values(&neg, level).unwrap());
            prop_assert_eq!(t0, t1);
        }
    }
}
