use devnoise_core::distributions::BaseDistribution;
use devnoise_core::experiments::calibration::{calibration_curve, default_levels};
use devnoise_core::experiments::{energy_distance_empirical, predictive_kl_1d};
use devnoise_core::inverse_sampler::build_inverse_cdf;
use devnoise_core::quadrature::{piecewise_device_rule, wheeler_rule};
use devnoise_core::special::{normal_cdf, normal_quantile};
use devnoise_core::{DeviceDistParams, Kernel};
use proptest::prelude::*;

fn kernel() -> impl Strategy<Value = Kernel> {
    prop_oneof![Just(Kernel::AbsExp), Just(Kernel::SqExp)]
}

/// Valid device parameters: `C` must come out positive.
fn device() -> impl Strategy<Value = DeviceDistParams> {
    (0.2f64..2.0, 0.08f64..0.5, kernel()).prop_filter_map("normalization needs C > 0", |(a, b, k)| DeviceDistParams::new(a, b, k).ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn density_is_normalized(p in device()) {
        let rule = piecewise_device_rule(&p, 16, 0.05).unwrap();
        prop_assert!((rule.total_weight() - 1.0).abs() < 1e-8);
        prop_assert!((rule.integrate(|x| x * x).unwrap() - p.variance()).abs() < 1e-8);
    }

    #[test]
    fn cdf_is_a_distribution_function(p in device(), xs in prop::collection::vec(-1.0f64..1.0, 2..20)) {
        prop_assert!(p.cdf(-1.0).abs() < 1e-12);
        prop_assert!((p.cdf(1.0) - 1.0).abs() < 1e-12);
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        for w in xs.windows(2) {
            prop_assert!(p.cdf(w[0]) <= p.cdf(w[1]) + 1e-15);
        }
        for &x in &xs {
            prop_assert!((p.cdf(x) + p.cdf(-x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wheeler_rule_matches_raw_moments(p in device(), n in 1usize..=4) {
        let rule = wheeler_rule(&p, n).unwrap();
        prop_assert!(rule.weights().iter().all(|&w| w > 0.0));
        prop_assert!(rule.abscissas().iter().all(|&x| (-1.0..=1.0).contains(&x)));
        for k in 0..2 * n {
            let q = rule.integrate(|x| x.powi(k as i32)).unwrap();
            prop_assert!((q - p.raw_moment(k).unwrap()).abs() < 1e-10, "k={} q={} m={}", k, q, p.raw_moment(k).unwrap());
        }
    }

    #[test]
    fn inverse_cdf_is_monotone_and_inverts(p in device(), us in prop::collection::vec(0.001f64..0.999, 2..20)) {
        let g = build_inverse_cdf(&p, 80).unwrap();
        let mut us = us;
        us.sort_by(f64::total_cmp);
        for w in us.windows(2) {
            prop_assert!(g.eval(w[0]) <= g.eval(w[1]));
        }
        for &u in &us {
            prop_assert!((p.cdf(g.eval(u)) - u).abs() < 1e-4);
        }
    }

    #[test]
    fn normal_quantile_inverts(p in 1e-12f64..(1.0 - 1e-12)) {
        let x = normal_quantile(p);
        prop_assert!((normal_cdf(x) - p).abs() <= 1e-13 * p.max(1e-3));
    }

    #[test]
    fn uniform_transform_is_monotone(a in 0.001f64..0.999, b in 0.001f64..0.999) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let device = BaseDistribution::device(DeviceDistParams::reference_ecram()).unwrap();
        for base in [BaseDistribution::Gaussian, device] {
            prop_assert!(base.from_uniform(lo) <= base.from_uniform(hi));
        }
    }

    #[test]
    fn predictive_kl_is_nonnegative_and_zero_on_itself(
        q in prop::collection::vec(-3.0f64..3.0, 1000..1200),
        p in prop::collection::vec(-2.0f64..4.0, 1000..1200),
    ) {
        prop_assert!(predictive_kl_1d(&q, &p).unwrap() >= 0.0);
        prop_assert_eq!(predictive_kl_1d(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn energy_distance_is_nonnegative(
        xs in prop::collection::vec(-5.0f64..5.0, 1..40),
        ys in prop::collection::vec(-5.0f64..5.0, 1..40),
        alpha in 0.1f64..1.9,
    ) {
        prop_assert!(energy_distance_empirical(&xs, &ys, alpha).unwrap() >= -1e-12);
        prop_assert!(energy_distance_empirical(&xs, &xs, alpha).unwrap().abs() < 1e-12);
    }

    #[test]
    fn calibration_curve_is_nondecreasing(
        samples in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 100), 100),
        y in prop::collection::vec(-0.1f64..1.1, 100),
    ) {
        let curve = calibration_curve(&samples, &y, &default_levels()).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0].coverage <= w[1].coverage));
    }
}
