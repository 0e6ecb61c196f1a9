//! Calibration curves: empirical coverage of predictive quantiles.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mfvi::MeanFieldModel;
use crate::seeded_rng;
use crate::stats;

use super::SwapBase;

pub const MIN_TEST_POINTS: usize = 100;
pub const MIN_DRAWS: usize = 100;
/// Two-sided 95% normal quantile.
const Z95: f64 = 1.96;

/// Nominal levels `0.05, 0.10, …, 0.95`.
pub fn default_levels() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    pub level: f64,
    /// Fraction of targets at or below the `level` predictive quantile.
    pub coverage: f64,
    /// Half-width of the binomial 95% band around `level`.
    pub band: f64,
}

/// `1.96·√(p(1 − p)/n)`.
pub fn binomial_band(p: f64, n: usize) -> f64 {
    Z95 * libm::sqrt(p * (1.0 - p) / n as f64)
}

/// Coverage at each level: `samples[j]` are predictive draws at test point
/// `j`, `y[j]` its target.
pub fn calibration_curve(samples: &[Vec<f64>], y: &[f64], levels: &[f64]) -> Result<Vec<CalibrationPoint>> {
    if samples.len() != y.len() {
        return Err(Error::Shape { expected: y.len(), got: samples.len() });
    }
    if y.len() < MIN_TEST_POINTS {
        return Err(Error::InvalidArgument(alloc::format!("calibration needs at least {MIN_TEST_POINTS} test points")));
    }
    if samples.iter().any(|s| s.len() < MIN_DRAWS) {
        return Err(Error::InvalidArgument(alloc::format!("calibration needs at least {MIN_DRAWS} draws per point")));
    }
    if levels.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidArgument("levels must lie in (0, 1)".into()));
    }
    let mut hits = vec![0usize; levels.len()];
    let mut sorted = Vec::new();
    for (s, &target) in samples.iter().zip(y) {
        sorted.clear();
        sorted.extend_from_slice(s);
        sorted.sort_by(f64::total_cmp);
        for (h, &p) in hits.iter_mut().zip(levels) {
            if target <= stats::quantile_sorted(&sorted, p) {
                *h += 1;
            }
        }
    }
    let n = y.len();
    Ok(levels
        .iter()
        .zip(&hits)
        .map(|(&level, &h)| CalibrationPoint { level, coverage: h as f64 / n as f64, band: binomial_band(level, n) })
        .collect())
}

/// Whether two curves over the same levels differ by at most the band at
/// every level.
pub fn curves_agree(a: &[CalibrationPoint], b: &[CalibrationPoint]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p.level == q.level && (p.coverage - q.coverage).abs() <= p.band.min(q.band))
}

/// Predictive draws `y = f_nn(x; ξ) + σ_a(x)·ε` per test point, `draws` each.
pub fn predictive_samples<R: Rng + ?Sized>(model: &MeanFieldModel, xs: &[f64], draws: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let spec = model.mean_net().spec();
    if spec.inputs() != 1 {
        return Err(Error::Shape { expected: 1, got: spec.inputs() });
    }
    let sigma_a = model.aleatoric_std(xs)?;
    let mut out = vec![Vec::with_capacity(draws); xs.len()];
    for _ in 0..draws {
        let (theta, _) = model.mean_net().sample(model.base(), rng);
        let f = spec.forward_batch(&theta, xs, xs.len())?.into_output();
        for ((o, &fj), &s) in out.iter_mut().zip(&f).zip(&sigma_a) {
            let e: f64 = rng.sample(StandardNormal);
            o.push(fj + s * e);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct CalibrationConfig {
    pub draws: usize,
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { draws: 500, levels: default_levels(), seed: 0 }
    }
}

/// Calibration curve of `model` (Gaussian base) and of each swap on the
/// given test set; `"gaussian"` first.
pub fn run_calibration(
    model: &MeanFieldModel,
    x_test: &[f64],
    y_test: &[f64],
    swaps: &[SwapBase],
    cfg: &CalibrationConfig,
) -> Result<Vec<(String, Vec<CalibrationPoint>)>> {
    let mut rng = seeded_rng(cfg.seed, 13);
    let mut out = Vec::with_capacity(swaps.len() + 1);
    let samples = predictive_samples(model, x_test, cfg.draws, &mut rng)?;
    out.push(("gaussian".into(), calibration_curve(&samples, y_test, &cfg.levels)?));
    for swap in swaps {
        let swapped = model.swap_base(swap.base.clone())?;
        let samples = predictive_samples(&swapped, x_test, cfg.draws, &mut rng)?;
        out.push((swap.label.clone(), calibration_curve(&samples, y_test, &cfg.levels)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Test points with a known N(m_j, s_j²) predictive; targets drawn from it.
    fn oracle(n: usize, draws: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = seeded_rng(seed, 0);
        let mut samples = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for j in 0..n {
            let (m, s) = (j as f64 * 0.01, 0.5 + (j % 7) as f64 * 0.1);
            y.push(m + s * rng.sample::<f64, _>(StandardNormal));
            samples.push((0..draws).map(|_| m + spread * s * rng.sample::<f64, _>(StandardNormal)).collect());
        }
        (samples, y)
    }

    #[test]
    fn exact_predictive_is_calibrated() {
        let (samples, y) = oracle(2000, 500, 1.0, 1);
        let curve = calibration_curve(&samples, &y, &default_levels()).unwrap();
        for p in &curve {
            // quantile estimation from 500 draws widens the band slightly
            assert!((p.coverage - p.level).abs() <= 1.5 * p.band, "{p:?}");
        }
    }

    #[test]
    fn halved_spread_is_overconfident() {
        let (samples, y) = oracle(2000, 500, 0.5, 2);
        let curve = calibration_curve(&samples, &y, &default_levels()).unwrap();
        let low = curve.first().unwrap();
        let high = curve.last().unwrap();
        assert!(low.coverage > low.level + 3.0 * low.band, "{low:?}");
        assert!(high.coverage < high.level - 3.0 * high.band, "{high:?}");
    }

    #[test]
    fn curve_is_nondecreasing() {
        let (samples, y) = oracle(300, 200, 0.8, 3);
        let curve = calibration_curve(&samples, &y, &default_levels()).unwrap();
        assert!(curve.windows(2).all(|w| w[0].coverage <= w[1].coverage));
    }

    #[test]
    fn preconditions() {
        let (samples, y) = oracle(50, 200, 1.0, 4);
        assert!(calibration_curve(&samples, &y, &default_levels()).is_err());
        let (samples, y) = oracle(200, 50, 1.0, 4);
        assert!(calibration_curve(&samples, &y, &default_levels()).is_err());
        let (samples, y) = oracle(200, 200, 1.0, 4);
        assert!(calibration_curve(&samples, &y, &[0.0]).is_err());
        assert!(calibration_curve(&samples[1..], &y, &[0.5]).is_err());
    }

    #[test]
    fn agreement_uses_band() {
        let a = [CalibrationPoint { level: 0.5, coverage: 0.50, band: 0.02 }];
        let b = [CalibrationPoint { level: 0.5, coverage: 0.515, band: 0.02 }];
        let c = [CalibrationPoint { level: 0.5, coverage: 0.53, band: 0.02 }];
        assert!(curves_agree(&a, &b));
        assert!(!curves_agree(&a, &c));
    }

    #[test]
    fn band_formula() {
        assert!((binomial_band(0.5, 100) - 0.098).abs() < 1e-12);
    }
}
