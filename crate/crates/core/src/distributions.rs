//! The device noise density family, its Gaussian and bimodal comparators, and
//! the standardized base distributions the variational layers draw from.
//!
//! The device density on `[−1, 1]` is
//!
//! ```text
//! q_D(x) = A·exp(−g(x)/B) − A·exp(−1/B) + C·(1 − x²),   g(x) = |x| or x²
//! ```
//!
//! and zero elsewhere. `C` is never free: it is solved from `∫ q_D = 1`.
//! Nonnegativity on `[−1, 1]` follows from `A·exp(−g(x)/B) ≥ A·exp(−1/B)` for
//! every positive `A, B, C`.

use core::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::inverse_sampler::{build_inverse_cdf_to_tolerance, InverseCdfApprox, ROUND_TRIP_TOL};
use crate::quadrature::{gauss_hermite, piecewise_device_rule, two_sided_laguerre_rule, wheeler_rule, QuadratureRule};
use crate::special::{expm1_minus_x, normal_cdf, normal_quantile, unit_incomplete_gamma, HALF_LN_TWO_PI};

/// Highest raw moment order with a closed form.
pub const MAX_MOMENT_ORDER: usize = 64;

/// Exponential term of the device density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Kernel {
    /// `exp(−|x|/B)`: the magnetic tunnel junction fit.
    #[cfg_attr(feature = "serde", serde(rename = "abs"))]
    AbsExp,
    /// `exp(−x²/B)`: the ECRAM fit.
    #[cfg_attr(feature = "serde", serde(rename = "sq"))]
    SqExp,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::AbsExp => "abs",
            Kernel::SqExp => "sq",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "abs" => Some(Kernel::AbsExp),
            "sq" => Some(Kernel::SqExp),
            _ => None,
        }
    }

    fn profile(self, x: f64) -> f64 {
        match self {
            Kernel::AbsExp => x.abs(),
            Kernel::SqExp => x * x,
        }
    }
}

/// `∫₀¹ xᵏ exp(−g(x)/B) dx`.
fn kernel_moment(kernel: Kernel, b: f64, k: usize) -> f64 {
    let t = 1.0 / b;
    match kernel {
        Kernel::AbsExp => unit_incomplete_gamma(k as f64 + 1.0, t),
        Kernel::SqExp => 0.5 * unit_incomplete_gamma(0.5 * (k as f64 + 1.0), t),
    }
}

/// `K(B) = ∫₋₁¹ (exp(−g(x)/B) − exp(−1/B)) dx`, so that `C = ¾(1 − A·K)`.
pub(crate) fn kernel_excess_mass(kernel: Kernel, b: f64) -> f64 {
    2.0 * (kernel_moment(kernel, b, 0) - libm::exp(-1.0 / b))
}

/// `dK/dB`.
pub(crate) fn kernel_excess_mass_db(kernel: Kernel, b: f64) -> f64 {
    // d/dB exp(−g/B) = g/B² exp(−g/B); g = x or x² on [0, 1]
    let p = match kernel {
        Kernel::AbsExp => 1,
        Kernel::SqExp => 2,
    };
    2.0 * (kernel_moment(kernel, b, p) - libm::exp(-1.0 / b)) / (b * b)
}

/// Parameters `(A, B, C)` of the device density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceDistParams {
    a: f64,
    b: f64,
    c: f64,
    kernel: Kernel,
}

impl DeviceDistParams {
    /// Normalization tolerance accepted by [`DeviceDistParams::with_c`].
    pub const NORMALIZATION_TOL: f64 = 1e-10;

    /// Builds the density from `(A, B)`, solving `C` from normalization.
    pub fn new(a: f64, b: f64, kernel: Kernel) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidParams(alloc::format!("A and B must be positive and finite (A={a}, B={b})")));
        }
        let c = Self::normalizing_c(a, b, kernel);
        if !(c > 0.0) {
            return Err(Error::InvalidParams(alloc::format!(
                "normalization forces C = {c} ≤ 0 for A={a}, B={b}"
            )));
        }
        Ok(Self { a, b, c, kernel })
    }

    /// Accepts an explicit `C`, which must agree with normalization.
    pub fn with_c(a: f64, b: f64, c: f64, kernel: Kernel) -> Result<Self> {
        let p = Self::new(a, b, kernel)?;
        if (p.c - c).abs() * 4.0 / 3.0 > Self::NORMALIZATION_TOL {
            return Err(Error::InvalidParams(alloc::format!(
                "C = {c} violates normalization (expected {})",
                p.c
            )));
        }
        Ok(p)
    }

    /// `C` such that the density integrates to one.
    pub fn normalizing_c(a: f64, b: f64, kernel: Kernel) -> f64 {
        0.75 * (1.0 - a * kernel_excess_mass(kernel, b))
    }

    /// Synthetic stand-in for the magnetic tunnel junction noise fit: sharply
    /// peaked with a parabolic shoulder.
    pub fn reference_mtj() -> Self {
        Self::new(1.5, 0.15, Kernel::AbsExp).expect("valid preset")
    }

    /// Synthetic stand-in for the ECRAM noise fit: close to a truncated Gaussian.
    pub fn reference_ecram() -> Self {
        Self::new(1.15, 0.25, Kernel::SqExp).expect("valid preset")
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(-1.0..=1.0).contains(&x) {
            return 0.0;
        }
        let e1 = libm::exp(-1.0 / self.b);
        let v = self.a * (libm::exp(-self.kernel.profile(x) / self.b) - e1) + self.c * (1.0 - x * x);
        v.max(0.0)
    }

    /// `log q_D(x)`, `−∞` where the density vanishes (endpoints and outside).
    pub fn log_pdf(&self, x: f64) -> f64 {
        let p = self.pdf(x);
        if p > 0.0 {
            libm::log(p)
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Closed-form CDF `Q_D(x) = ∫₋₁ˣ q_D`, clamped to `[0, 1]`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        if x > 0.0 {
            return (1.0 - self.lower_cdf(-x)).clamp(0.0, 1.0);
        }
        if x == 0.0 {
            return 0.5;
        }
        self.lower_cdf(x).clamp(0.0, 1.0)
    }

    /// `Q_D(x)` for `x ∈ [−1, 0]`, written in `h = x + 1` to keep precision
    /// near the lower endpoint.
    fn lower_cdf(&self, x: f64) -> f64 {
        let h = x + 1.0;
        let (a, b, c) = (self.a, self.b, self.c);
        let e1 = libm::exp(-1.0 / b);
        let exp_part = match self.kernel {
            // A·e^(−1/B)·[B(e^(h/B) − 1) − h]
            Kernel::AbsExp => a * e1 * b * expm1_minus_x(h / b),
            Kernel::SqExp => {
                let rb = libm::sqrt(b);
                a * libm::sqrt(PI * b) / 2.0 * (libm::erfc(-x / rb) - libm::erfc(1.0 / rb)) - a * e1 * h
            }
        };
        // C·[(x+1) − (x³+1)/3] = C·h²(2 − x)/3
        exp_part + c * h * h * (2.0 - x) / 3.0
    }

    /// `E[xᵏ]` in closed form, for `k ≤ MAX_MOMENT_ORDER`.
    pub fn raw_moment(&self, k: usize) -> Result<f64> {
        if k > MAX_MOMENT_ORDER {
            return Err(Error::MomentOrder { order: k, max: MAX_MOMENT_ORDER });
        }
        if k == 0 {
            return Ok(1.0);
        }
        if k % 2 == 1 {
            return Ok(0.0);
        }
        let kf = k as f64;
        let e1 = libm::exp(-1.0 / self.b);
        let half = self.a * kernel_moment(self.kernel, self.b, k) - self.a * e1 / (kf + 1.0)
            + self.c * (1.0 / (kf + 1.0) - 1.0 / (kf + 3.0));
        Ok(2.0 * half)
    }

    pub fn variance(&self) -> f64 {
        self.raw_moment(2).expect("order 2 is supported")
    }

    /// Right derivative `q_D'(−1)`: the leading coefficient of the CDF's
    /// quadratic behaviour at the lower endpoint.
    pub fn lower_slope(&self) -> f64 {
        let s = match self.kernel {
            Kernel::AbsExp => 1.0,
            Kernel::SqExp => 2.0,
        };
        self.a * libm::exp(-1.0 / self.b) * s / self.b + 2.0 * self.c
    }
}

/// Which family a [`BaseDistribution`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseKind {
    Gaussian,
    Device,
    Bimodal,
}

impl BaseKind {
    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Gaussian => "gaussian",
            BaseKind::Device => "device",
            BaseKind::Bimodal => "bimodal",
        }
    }
}

/// Device density rescaled by `std_scale`: `z = x / std_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceBase {
    params: DeviceDistParams,
    std_scale: f64,
    entropy: f64,
    sampler: InverseCdfApprox,
}

impl DeviceBase {
    /// Standardized device base (`std_scale = √E[x²]`).
    pub fn new(params: DeviceDistParams) -> Result<Self> {
        Self::with_scale(params, libm::sqrt(params.variance()))
    }

    /// Device base with an explicit scale, e.g. loaded from a file. Not
    /// necessarily standardized; see [`BaseDistribution::check_standardized`].
    pub fn with_scale(params: DeviceDistParams, std_scale: f64) -> Result<Self> {
        if !(std_scale > 0.0 && std_scale.is_finite()) {
            return Err(Error::InvalidParams(alloc::format!("std_scale must be positive, got {std_scale}")));
        }
        let entropy_x = -piecewise_device_rule(&params, ENTROPY_RULE_POINTS, crate::quadrature::DEFAULT_EPSILON)?
            .integrate(|x| params.log_pdf(x))?;
        let sampler = build_inverse_cdf_to_tolerance(&params, ROUND_TRIP_TOL)?;
        Ok(Self { params, std_scale, entropy: entropy_x - libm::log(std_scale), sampler })
    }

    pub fn params(&self) -> &DeviceDistParams {
        &self.params
    }

    pub fn std_scale(&self) -> f64 {
        self.std_scale
    }

    pub fn sampler(&self) -> &InverseCdfApprox {
        &self.sampler
    }
}

/// Per-piece order of the composite rule used for the device entropy.
const ENTROPY_RULE_POINTS: usize = 400;
/// Points per side of the two-sided Laguerre rule for the bimodal entropy.
const BIMODAL_ENTROPY_POINTS: usize = 96;

/// Symmetric mixture `½N(−m, s²) + ½N(m, s²)` with `m² + s² = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BimodalBase {
    separation: f64,
    component_std: f64,
    entropy: f64,
}

impl BimodalBase {
    pub const DEFAULT_SEPARATION: f64 = 0.95;

    pub fn new(separation: f64) -> Result<Self> {
        if !(separation >= 0.0 && separation < 1.0) {
            return Err(Error::InvalidParams(alloc::format!("separation must lie in [0, 1), got {separation}")));
        }
        let component_std = libm::sqrt(1.0 - separation * separation);
        let mut base = Self { separation, component_std, entropy: 0.0 };
        let rule = two_sided_laguerre_rule(&BaseDistribution::Bimodal(base), BIMODAL_ENTROPY_POINTS)?;
        base.entropy = -rule.integrate(|x| base.log_pdf(x))?;
        Ok(base)
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    pub fn component_std(&self) -> f64 {
        self.component_std
    }

    pub fn pdf(&self, x: f64) -> f64 {
        libm::exp(self.log_pdf(x))
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let s = self.component_std;
        let u = (x - self.separation) / s;
        let v = (x + self.separation) / s;
        let (lu, lv) = (-0.5 * u * u, -0.5 * v * v);
        let hi = lu.max(lv);
        let lse = hi + libm::log(libm::exp(lu - hi) + libm::exp(lv - hi));
        lse - libm::log(2.0) - libm::log(s) - HALF_LN_TWO_PI
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let s = self.component_std;
        0.5 * (normal_cdf((x - self.separation) / s) + normal_cdf((x + self.separation) / s))
    }
}

/// Standardized (zero mean, unit variance) distribution of the per-weight
/// noise `z` in `θ = σ·z + μ`.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseDistribution {
    Gaussian,
    Device(DeviceBase),
    Bimodal(BimodalBase),
}

impl BaseDistribution {
    pub fn device(params: DeviceDistParams) -> Result<Self> {
        Ok(Self::Device(DeviceBase::new(params)?))
    }

    pub fn standard_bimodal() -> Self {
        Self::Bimodal(BimodalBase::new(BimodalBase::DEFAULT_SEPARATION).expect("valid preset"))
    }

    pub fn kind(&self) -> BaseKind {
        match self {
            Self::Gaussian => BaseKind::Gaussian,
            Self::Device(_) => BaseKind::Device,
            Self::Bimodal(_) => BaseKind::Bimodal,
        }
    }

    pub fn pdf(&self, z: f64) -> f64 {
        match self {
            Self::Gaussian => crate::special::normal_pdf(z),
            Self::Device(d) => d.std_scale * d.params.pdf(d.std_scale * z),
            Self::Bimodal(m) => m.pdf(z),
        }
    }

    pub fn log_pdf(&self, z: f64) -> f64 {
        match self {
            Self::Gaussian => crate::special::normal_log_pdf(z),
            Self::Device(d) => libm::log(d.std_scale) + d.params.log_pdf(d.std_scale * z),
            Self::Bimodal(m) => m.log_pdf(z),
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match self {
            Self::Gaussian => normal_cdf(z),
            Self::Device(d) => d.params.cdf(d.std_scale * z),
            Self::Bimodal(m) => m.cdf(z),
        }
    }

    /// Closed interval carrying all the mass (infinite for the Gaussian kinds).
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Device(d) => (-1.0 / d.std_scale, 1.0 / d.std_scale),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Differential entropy `−E[log q(z)]`.
    pub fn entropy(&self) -> f64 {
        match self {
            Self::Gaussian => 0.5 * (1.0 + libm::log(2.0 * PI)),
            Self::Device(d) => d.entropy,
            Self::Bimodal(m) => m.entropy,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Gaussian => rng.sample(StandardNormal),
            Self::Device(d) => d.sampler.eval(rng.random::<f64>()) / d.std_scale,
            Self::Bimodal(m) => {
                let n: f64 = rng.sample(StandardNormal);
                let centre = if rng.random::<bool>() { m.separation } else { -m.separation };
                centre + m.component_std * n
            }
        }
    }

    /// Maps `u ∈ (0, 1)` to a draw from the base: the quantile function for
    /// the Gaussian and device bases, and for the mixture the component
    /// quantile of `2u mod 1` shifted to the side `u` falls on. Feeding the
    /// same `u` to two bases couples their draws.
    pub fn from_uniform(&self, u: f64) -> f64 {
        match self {
            Self::Gaussian => normal_quantile(u),
            Self::Device(d) => d.sampler.eval(u) / d.std_scale,
            Self::Bimodal(m) => {
                if u < 0.5 {
                    -m.separation + m.component_std * normal_quantile(2.0 * u)
                } else {
                    m.separation + m.component_std * normal_quantile(2.0 * u - 1.0)
                }
            }
        }
    }

    /// The matching rule for expectations over `z`: Gauss–Hermite for the
    /// Gaussian, the two-point moment rule (rescaled) for the device, the
    /// two-sided Laguerre rule for the mixture. The device rule is exact
    /// only for polynomials of degree ≤ 3.
    pub fn moment_rule(&self) -> Result<QuadratureRule> {
        match self {
            Self::Gaussian => gauss_hermite(2),
            Self::Device(d) => {
                let r = wheeler_rule(&d.params, 2)?;
                let x = r.abscissas().iter().map(|x| x / d.std_scale).collect();
                QuadratureRule::new(x, r.weights().to_vec(), *r.weighting(), r.exact_degree())
            }
            Self::Bimodal(_) => two_sided_laguerre_rule(self, 64),
        }
    }

    /// `(mean, variance)` computed with [`BaseDistribution::moment_rule`].
    pub fn mean_and_variance(&self) -> Result<(f64, f64)> {
        let rule = self.moment_rule()?;
        let mass = rule.integrate(|_| 1.0)?;
        let mean = rule.integrate(|z| z)? / mass;
        let second = rule.integrate(|z| z * z)? / mass;
        Ok((mean, second - mean * mean))
    }

    /// Errors unless mean and variance are 0 and 1 within `1e-8`.
    pub fn check_standardized(&self) -> Result<()> {
        let (mean, var) = self.mean_and_variance()?;
        if mean.abs() > 1e-8 || (var - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParams(alloc::format!(
                "{} base is not standardized (mean {mean}, variance {var})",
                self.kind().name()
            )));
        }
        Ok(())
    }
}
