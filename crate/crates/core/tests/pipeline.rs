use devnoise_core::distributions::BaseDistribution;
use devnoise_core::experiments::{
    calibration_curve, coupled_predictive_at_zero, generate_regression_data, run_energy_cell, run_regression_experiment, EnergySweepConfig,
    RegressionConfig, Split, SwapBase,
};
use devnoise_core::experiments::calibration::{default_levels, predictive_samples};
use devnoise_core::inverse_sampler::{build_inverse_cdf_to_tolerance, quadrature_kl_to_gaussian, sample, ROUND_TRIP_TOL};
use devnoise_core::mfvi::{MleConfig, TrainConfig};
use devnoise_core::mle_fit::{fit_device_params, FitConfig};
use devnoise_core::nn::{Activation, DenseWeights, MeanFieldNet, NetworkSpec};
use devnoise_core::{seeded_rng, DeviceDistParams};

#[test]
fn sampled_then_fitted_density_keeps_its_kl() {
    let truth = DeviceDistParams::reference_ecram();
    let g = build_inverse_cdf_to_tolerance(&truth, ROUND_TRIP_TOL).unwrap();
    let xs = sample(&g, &mut seeded_rng(5, 0), 50_000);
    let fit = fit_device_params(&xs, &FitConfig { kernel: truth.kernel(), ..FitConfig::default() }).unwrap();
    let kl_truth = quadrature_kl_to_gaussian(&truth).unwrap();
    let kl_fit = quadrature_kl_to_gaussian(&fit.params).unwrap();
    assert!((kl_fit - kl_truth).abs() < 0.1 * kl_truth, "{kl_fit} vs {kl_truth}");
}

#[test]
fn coupled_draws_under_gaussian_reproduce_the_reference() {
    let spec = NetworkSpec::mlp(1, 4, 2, 1, Activation::Elu).unwrap();
    let w = DenseWeights::init_fan_in(&spec, &mut seeded_rng(1, 0));
    let net = MeanFieldNet::from_weights(spec, &w, 0.2, true).unwrap();
    let g = BaseDistribution::Gaussian;
    let out = coupled_predictive_at_zero(&net, &[&g, &g], 1000, &mut seeded_rng(2, 0)).unwrap();
    assert_eq!(out[0], out[1]);
}

#[test]
fn energy_cell_is_seeded() {
    let cfg = EnergySweepConfig { train_iterations: 30, mc_samples: 1000, ..Default::default() };
    let swaps = [SwapBase { label: "bimodal".into(), base: BaseDistribution::standard_bimodal() }];
    let a = run_energy_cell(&cfg, 3, 1, 0, &swaps).unwrap();
    assert_eq!(a, run_energy_cell(&cfg, 3, 1, 0, &swaps).unwrap());
    assert_ne!(a, run_energy_cell(&cfg, 3, 1, 1, &swaps).unwrap());
    assert_eq!(a.rows.len(), 2);
    assert!(a.rows.iter().all(|r| r.kl >= 0.0 && r.final_loss.is_finite()));
}

#[test]
fn trained_regression_model_is_roughly_calibrated() {
    let cfg = RegressionConfig {
        train_n: 2000,
        test_n: 300,
        width: 8,
        depth: 2,
        mle: MleConfig { epochs: 40, ..Default::default() },
        vi: TrainConfig { epochs: 3, ..Default::default() },
        grid_points: 21,
        predictive_draws: 200,
        ..Default::default()
    };
    let out = run_regression_experiment(&cfg, &[]).unwrap();
    let test = generate_regression_data(300, Split::Test, 77).unwrap();
    // restrict to the training range, where the fit is meaningful
    let (x, y): (Vec<f64>, Vec<f64>) = test.x.iter().zip(&test.y).filter(|(x, _)| **x <= 1.0).unzip();
    let samples = predictive_samples(&out.model, &x, 200, &mut seeded_rng(3, 0)).unwrap();
    let curve = calibration_curve(&samples, &y, &default_levels()).unwrap();
    for p in &curve {
        assert!((p.coverage - p.level).abs() < 0.2, "{p:?}");
    }
}
