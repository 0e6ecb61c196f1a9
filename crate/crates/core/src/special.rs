//! Scalar special functions shared by the densities, rules and networks.

use core::f64::consts::{FRAC_1_SQRT_2, PI};

/// `ln(2π) / 2`.
pub const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

pub fn normal_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI)
}

pub fn normal_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - HALF_LN_TWO_PI
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn horner(coeffs: &[f64; 8], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Standard normal quantile `Φ⁻¹(p)` by Wichura's AS 241 rational
/// approximations (relative error about 1e-16). `±∞` at the end points.
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_6,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_4e3,
        1.373_169_376_550_946_1e4,
        4.592_195_393_154_987_1e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_854_5e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_6,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_8e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];
    if !(p > 0.0 && p < 1.0) {
        return match p {
            0.0 => f64::NEG_INFINITY,
            1.0 => f64::INFINITY,
            _ => f64::NAN,
        };
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }
    let r = libm::sqrt(-libm::log(p.min(1.0 - p)));
    let x = if r <= 5.0 {
        let r = r - 1.6;
        horner(&C, r) / horner(&D, r)
    } else {
        let r = r - 5.0;
        horner(&E, r) / horner(&F, r)
    };
    if q < 0.0 { -x } else { x }
}

/// Log-density of `N(mean, std²)`.
pub fn gaussian_log_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - libm::log(std) - HALF_LN_TWO_PI
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + libm::log1p(-libm::exp(-y))
    } else {
        libm::log(libm::expm1(y))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `eʸ − 1 − y`, accurate for small `y`.
pub fn expm1_minus_x(y: f64) -> f64 {
    if y.abs() < 1e-3 {
        let y2 = y * y;
        0.5 * y2 * (1.0 + y / 3.0 * (1.0 + y / 4.0 * (1.0 + y / 5.0)))
    } else {
        libm::expm1(y) - y
    }
}

/// `∫₀¹ y^(s−1) e^(−t·y) dy` for `s > 0`, `t ≥ 0`.
///
/// Uses the all-positive series `e^(−t) Σₙ tⁿ / (s(s+1)…(s+n))`, which is the
/// closed-form lower incomplete gamma `t^(−s) γ(s, t)` without the cancellation
/// of the finite-sum form.
pub fn unit_incomplete_gamma(s: f64, t: f64) -> f64 {
    let mut term = 1.0 / s;
    let mut sum = term;
    let mut n = 0.0;
    while n < 5000.0 {
        n += 1.0;
        term *= t / (s + n);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    libm::exp(-t) * sum
}

/// Legendre polynomial `Pₙ(x)` and its derivative.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    let nf = n as f64;
    let dp = if (x * x - 1.0).abs() < 1e-300 {
        // Pₙ'(±1) = (±1)^(n−1) n(n+1)/2
        let sign = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        sign * nf * (nf + 1.0) / 2.0
    } else {
        nf * (x * p - p_prev) / (x * x - 1.0)
    };
    (p, dp)
}

/// `Σₖ cₖ Pₖ(x)` by Clenshaw's recurrence.
pub fn legendre_series(coeffs: &[f64], x: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for k in (0..coeffs.len()).rev() {
        let kf = k as f64;
        // Pₖ₊₁ = αₖ x Pₖ + βₖ₊₁ Pₖ₋₁ with αₖ = (2k+1)/(k+1), βₖ = −k/(k+1)
        let alpha = (2.0 * kf + 1.0) / (kf + 1.0);
        let beta = -(kf + 1.0) / (kf + 2.0);
        let b0 = coeffs[k] + alpha * x * b1 + beta * b2;
        b2 = b1;
        b1 = b0;
    }
    b1
}
