//! The three studies: energy-distance matching with width/depth sweeps,
//! heteroscedastic 1-D regression with base swapping, and calibration curves.

pub mod calibration;
pub mod energy;
pub mod regression;

pub use calibration::{calibration_curve, curves_agree, run_calibration, CalibrationConfig, CalibrationPoint};
pub use energy::{
    coupled_predictive_at_zero, energy_distance_empirical, energy_distance_loss, estimator_noise_floor, run_energy_cell,
    run_energy_sweep, summarize_energy, sweep_cells, EnergyCell, EnergyRow, EnergySummary, EnergySweepConfig, NoiseFloor, SwapBase,
};
pub use regression::{
    generate_regression_data, noise_std, predictive_gaps, run_regression_experiment, RegressionConfig, RegressionDataset,
    RegressionOutcome, Split,
};

use crate::error::{Error, Result};
use crate::stats;

/// Bins of the predictive KL histogram.
pub const KL_BINS: usize = 64;
/// Additive smoothing per bin of the predictive KL histogram.
pub const KL_SMOOTHING: f64 = 1e-8;
pub const KL_MIN_SAMPLES: usize = 1000;

/// `KL(q‖p)` between two 1-D sample sets: 64 shared equal-width bins over the
/// pooled range, smoothing `1e-8` per bin, clamped at zero.
pub fn predictive_kl_1d(samples_q: &[f64], samples_p: &[f64]) -> Result<f64> {
    if samples_q.len() < KL_MIN_SAMPLES || samples_p.len() < KL_MIN_SAMPLES {
        return Err(Error::InvalidArgument(alloc::format!("predictive KL needs at least {KL_MIN_SAMPLES} samples per set")));
    }
    for s in [samples_q, samples_p] {
        if !(stats::variance(s) > 0.0) {
            return Err(Error::InvalidArgument("sample set has zero variance".into()));
        }
    }
    stats::histogram_kl(samples_q, samples_p, KL_BINS, KL_SMOOTHING)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use alloc::vec::Vec;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = seeded_rng(seed, 0);
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) + shift).collect()
    }

    #[test]
    fn same_set_is_zero() {
        let a = normals(1, 5000, 0.0);
        assert_eq!(predictive_kl_1d(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn identical_distributions_stay_below_floor() {
        let kl = predictive_kl_1d(&normals(2, 100_000, 0.0), &normals(3, 100_000, 0.0)).unwrap();
        assert!(kl < 5e-3, "{kl}");
    }

    #[test]
    fn shifted_gaussians_match_analytic_value() {
        let kl = predictive_kl_1d(&normals(4, 100_000, 0.0), &normals(5, 100_000, 0.5)).unwrap();
        assert!((kl - 0.125).abs() < 0.025, "{kl}");
    }

    #[test]
    fn preconditions() {
        assert!(predictive_kl_1d(&[0.0; 10], &[1.0; 10]).is_err());
        assert!(predictive_kl_1d(&[0.5; 2000], &normals(6, 2000, 0.0)).is_err());
    }
}
