//! Heteroscedastic 1-D regression: MLE pre-training, VI on the kernels with a
//! Gaussian base, then inference with the base swapped.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::distributions::BaseDistribution;
use crate::error::{Error, Result};
use crate::mfvi::{predictive_ensemble, train_mle, train_vi, MeanFieldModel, MleConfig, MleResult, PredictiveSummary, TrainConfig};
use crate::nn::{Activation, MeanFieldNet, NetworkSpec};
use crate::seeded_rng;

use super::SwapBase;

/// Standard deviation of the observation noise at `x`: `0.1·(1 + min(0, x − 1))`.
pub fn noise_std(x: f64) -> f64 {
    0.1 * (1.0 + (x - 1.0).min(0.0))
}

pub fn true_mean(x: f64) -> f64 {
    libm::sin(2.0 * PI * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Interval `x` is drawn from, before rejection.
    pub fn interval(self) -> (f64, f64) {
        match self {
            Self::Train => (-1.0, 1.0),
            Self::Test => (-1.5, 1.5),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Self::Train => 10,
            Self::Test => 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub split: Split,
    /// Draws of `x` discarded because the noise std there was not positive.
    pub rejected: usize,
}

/// `n` points with `x` uniform on the split's interval and
/// `y = sin(2πx) + noise_std(x)·ε`. Values of `x` where the noise std is not
/// positive are redrawn and counted.
pub fn generate_regression_data(n: usize, split: Split, seed: u64) -> Result<RegressionDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("data set needs at least one point".into()));
    }
    let (lo, hi) = split.interval();
    let mut rng = seeded_rng(seed, split.stream());
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut rejected = 0;
    while x.len() < n {
        let xi = rng.random_range(lo..=hi);
        let s = noise_std(xi);
        if !(s > 0.0) {
            rejected += 1;
            continue;
        }
        let e: f64 = rng.sample(StandardNormal);
        x.push(xi);
        y.push(true_mean(xi) + s * e);
    }
    Ok(RegressionDataset { x, y, split, rejected })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct RegressionConfig {
    pub train_n: usize,
    pub test_n: usize,
    pub width: usize,
    pub depth: usize,
    pub mle: MleConfig,
    pub vi: TrainConfig,
    pub prior_std: f64,
    pub init_sigma: f64,
    pub grid_points: usize,
    pub grid_half_width: f64,
    pub predictive_draws: usize,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            train_n: 10_000,
            test_n: 2_000,
            width: 16,
            depth: 4,
            mle: MleConfig::default(),
            vi: TrainConfig::default(),
            prior_std: 1.0,
            init_sigma: crate::mfvi::DEFAULT_INIT_SIGMA,
            grid_points: 301,
            grid_half_width: 1.5,
            predictive_draws: 2_000,
            seed: 0,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_n == 0 || self.test_n == 0 || self.width == 0 || self.depth == 0 {
            return Err(Error::InvalidArgument("sizes must be positive".into()));
        }
        if self.grid_points < 2 || !(self.grid_half_width > 0.0) {
            return Err(Error::InvalidArgument("grid needs two points and a positive half-width".into()));
        }
        if self.predictive_draws < 2 {
            return Err(Error::InvalidArgument("at least two predictive draws are needed".into()));
        }
        if !(self.init_sigma > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("initial sigma must be positive, got {}", self.init_sigma)));
        }
        Ok(())
    }

    /// Evenly spaced grid over `[−h, h]`.
    pub fn grid(&self) -> Vec<f64> {
        let h = self.grid_half_width;
        let step = 2.0 * h / (self.grid_points - 1) as f64;
        (0..self.grid_points).map(|i| if i + 1 == self.grid_points { h } else { -h + step * i as f64 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionOutcome {
    pub train: RegressionDataset,
    pub test: RegressionDataset,
    pub mle: MleResult,
    /// Trained with the Gaussian base.
    pub model: MeanFieldModel,
    pub vi_trace: Vec<f64>,
    /// `("gaussian", …)` first, then one entry per swap, on the config grid.
    pub predictive: Vec<(String, PredictiveSummary)>,
}

/// Trains a Gaussian-base model from the MLE (biases frozen at the MLE) and
/// summarizes its predictive under the Gaussian base and every swap.
pub fn run_regression_experiment(cfg: &RegressionConfig, swaps: &[SwapBase]) -> Result<RegressionOutcome> {
    cfg.validate()?;
    let train = generate_regression_data(cfg.train_n, Split::Train, cfg.seed)?;
    let test = generate_regression_data(cfg.test_n, Split::Test, cfg.seed)?;
    let spec = NetworkSpec::mlp(1, cfg.width, cfg.depth, 1, Activation::Elu)?;
    let mle = train_mle(&spec, &spec, &train.x, &train.y, &MleConfig { seed: cfg.seed, ..cfg.mle.clone() })?;
    let net = MeanFieldNet::from_weights(spec.clone(), &mle.mean, cfg.init_sigma, false)?;
    let model = MeanFieldModel::new(net, spec, mle.aleatoric.clone(), BaseDistribution::Gaussian, cfg.prior_std)?;
    let (model, vi_trace) = train_vi(&model, &train.x, &train.y, &TrainConfig { seed: cfg.seed, ..cfg.vi.clone() })?;

    let grid = cfg.grid();
    let mut rng = seeded_rng(cfg.seed, 12);
    let mut predictive = Vec::with_capacity(swaps.len() + 1);
    predictive.push(("gaussian".into(), predictive_ensemble(&model, &grid, cfg.predictive_draws, &mut rng)?));
    for swap in swaps {
        let swapped = model.swap_base(swap.base.clone())?;
        predictive.push((swap.label.clone(), predictive_ensemble(&swapped, &grid, cfg.predictive_draws, &mut rng)?));
    }
    Ok(RegressionOutcome { train, test, mle, model, vi_trace, predictive })
}

/// `max_j |a_j − r_j| / r_j` over a grid, for a positive reference `r`.
pub fn max_relative_gap(reference: &[f64], other: &[f64]) -> Result<f64> {
    if reference.len() != other.len() {
        return Err(Error::Shape { expected: reference.len(), got: other.len() });
    }
    let mut worst: f64 = 0.0;
    for (&r, &a) in reference.iter().zip(other) {
        if !(r > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("reference must be positive, got {r}")));
        }
        worst = worst.max((a - r).abs() / r);
    }
    Ok(worst)
}

/// Largest gap between two predictive summaries relative to the reference
/// total std: `(mean gap, total-std gap)`.
pub fn predictive_gaps(reference: &PredictiveSummary, other: &PredictiveSummary) -> Result<(f64, f64)> {
    let mean_gap = reference
        .mean
        .iter()
        .zip(&other.mean)
        .zip(&reference.total_std)
        .map(|((r, a), s)| (a - r).abs() / s)
        .fold(0.0, f64::max);
    Ok((mean_gap, max_relative_gap(&reference.total_std, &other.total_std)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn noise_std_values() {
        assert_eq!(noise_std(1.0), 0.1);
        assert!((noise_std(0.5) - 0.05).abs() < 1e-16);
        assert_eq!(noise_std(1.4), 0.1);
        assert!(noise_std(0.0) <= 0.0);
    }

    #[test]
    fn data_respect_interval_and_positive_noise() {
        let d = generate_regression_data(5000, Split::Test, 3).unwrap();
        assert_eq!(d.x.len(), 5000);
        assert!(d.x.iter().all(|&x| x > 0.0 && x <= 1.5));
        // half the interval carries no positive noise std
        let frac = d.rejected as f64 / (d.rejected + d.x.len()) as f64;
        assert!((frac - 0.5).abs() < 0.03, "{frac}");
        assert!(generate_regression_data(0, Split::Train, 0).is_err());
    }

    #[test]
    fn data_are_reproducible() {
        let a = generate_regression_data(100, Split::Train, 9).unwrap();
        assert_eq!(a, generate_regression_data(100, Split::Train, 9).unwrap());
        assert_ne!(a, generate_regression_data(100, Split::Train, 10).unwrap());
    }

    #[test]
    fn noise_std_matches_model_at_fixed_x() {
        let mut rng = seeded_rng(4, 0);
        let x = 0.5;
        let ys: Vec<f64> = (0..10_000).map(|_| true_mean(x) + noise_std(x) * rng.sample::<f64, _>(StandardNormal)).collect();
        assert!((stats::std_dev(&ys) / noise_std(x) - 1.0).abs() < 0.05);
        assert!((stats::mean(&ys) - true_mean(x)).abs() < 3.0 * noise_std(x) / 100.0);
    }

    #[test]
    fn grid_spans_interval() {
        let g = RegressionConfig::default().grid();
        assert_eq!(g.len(), 301);
        assert_eq!((g[0], g[150], g[300]), (-1.5, 0.0, 1.5));
    }

    #[test]
    fn relative_gap() {
        assert_eq!(max_relative_gap(&[1.0, 2.0], &[1.05, 1.0]).unwrap(), 0.5);
        assert!(max_relative_gap(&[1.0], &[1.0, 2.0]).is_err());
        assert!(max_relative_gap(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn small_experiment_runs_and_swaps_stay_close() {
        let cfg = RegressionConfig {
            train_n: 2000,
            test_n: 200,
            width: 8,
            depth: 2,
            mle: MleConfig { epochs: 30, ..Default::default() },
            vi: TrainConfig { epochs: 2, ..Default::default() },
            grid_points: 31,
            predictive_draws: 400,
            ..Default::default()
        };
        let swaps = [SwapBase { label: "bimodal".into(), base: BaseDistribution::standard_bimodal() }];
        let out = run_regression_experiment(&cfg, &swaps).unwrap();
        assert_eq!(out.predictive.len(), 2);
        assert_eq!(out.predictive[0].0, "gaussian");
        let (mean_gap, std_gap) = predictive_gaps(&out.predictive[0].1, &out.predictive[1].1).unwrap();
        assert!(mean_gap < 0.2 && std_gap < 0.2, "{mean_gap} {std_gap}");
    }
}
