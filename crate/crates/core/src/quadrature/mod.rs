//! Quadrature rules for expectations against the base densities, and the
//! cross-entropy / KL estimators built on them.
//!
//! Rules carry their weight function in the weights: `E[f] ≈ Σ wᵢ f(xᵢ)`.

mod classical;
mod composite;
mod wheeler;

use alloc::vec::Vec;

pub use classical::{gauss_hermite, gauss_laguerre, gauss_legendre, gauss_lobatto, golub_welsch, tridiagonal_eigen};
pub use composite::{
    piecewise_device_rule, piecewise_device_rule_with_panels, standard_device_rule, two_sided_laguerre_rule,
    two_sided_laguerre_rule_scaled, DEFAULT_EPSILON, DEFAULT_LAGUERRE_SCALE, DEFAULT_TRAPEZOID_PANELS,
};
pub use wheeler::{legendre_modified_moments, modified_chebyshev, wheeler_rule, MAX_WHEELER_POINTS};

use crate::distributions::DeviceDistParams;
use crate::error::{Error, Result};
use crate::special::gaussian_log_pdf;

/// Weight function a rule integrates against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    /// Plain Lebesgue measure on `[lo, hi]`.
    Lebesgue { lo: f64, hi: f64 },
    /// `e^(−x)` on `[0, ∞)`.
    Exponential,
    StandardNormal,
    Device(DeviceDistParams),
    Bimodal { separation: f64, component_std: f64 },
}

impl Weighting {
    pub fn is_probability(&self) -> bool {
        !matches!(self, Weighting::Lebesgue { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    abscissas: Vec<f64>,
    weights: Vec<f64>,
    weighting: Weighting,
    /// Highest polynomial degree integrated exactly; `-1` for composite rules.
    exact_degree: i32,
    symmetric: bool,
}

impl QuadratureRule {
    pub fn new(abscissas: Vec<f64>, weights: Vec<f64>, weighting: Weighting, exact_degree: i32) -> Result<Self> {
        if abscissas.len() != weights.len() {
            return Err(Error::Shape { expected: abscissas.len(), got: weights.len() });
        }
        if abscissas.is_empty() {
            return Err(Error::InvalidArgument("empty quadrature rule".into()));
        }
        if let Some(i) = abscissas.windows(2).position(|p| !(p[0] < p[1])) {
            return Err(Error::InvalidArgument(alloc::format!(
                "abscissas not strictly increasing at index {}",
                i + 1
            )));
        }
        let n = abscissas.len();
        let symmetric = (0..n / 2).all(|i| abscissas[i] == -abscissas[n - 1 - i] && weights[i] == weights[n - 1 - i])
            && (n % 2 == 0 || abscissas[n / 2] == 0.0);
        Ok(Self { abscissas, weights, weighting, exact_degree, symmetric })
    }

    pub fn len(&self) -> usize {
        self.abscissas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissas.is_empty()
    }

    pub fn abscissas(&self) -> &[f64] {
        &self.abscissas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weighting(&self) -> &Weighting {
        &self.weighting
    }

    pub fn exact_degree(&self) -> i32 {
        self.exact_degree
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Rule for the Lebesgue measure on `[lo, hi]`, from a rule on `[-1, 1]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> Result<Self> {
        if !matches!(self.weighting, Weighting::Lebesgue { lo: -1.0, hi: 1.0 }) {
            return Err(Error::InvalidArgument("only [-1, 1] Lebesgue rules can be mapped".into()));
        }
        let half = 0.5 * (hi - lo);
        let x = self.abscissas.iter().map(|t| lo + half * (t + 1.0)).collect();
        let w = self.weights.iter().map(|w| half * w).collect();
        Self::new(x, w, Weighting::Lebesgue { lo, hi }, self.exact_degree)
    }

    /// `Σ wᵢ f(xᵢ)`; mirrored node pairs of a symmetric rule are summed
    /// together, so odd integrands vanish exactly.
    ///
    /// Fails with the offending node index if `f` is not finite there.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> Result<f64> {
        let mut eval = |i: usize| {
            let v = f(self.abscissas[i]);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite { stage: "quadrature integrand", index: i })
            }
        };
        let n = self.len();
        let mut acc = 0.0;
        if self.symmetric {
            for i in 0..n / 2 {
                let j = n - 1 - i;
                acc += self.weights[i] * (eval(i)? + eval(j)?);
            }
            if n % 2 == 1 {
                acc += self.weights[n / 2] * eval(n / 2)?;
            }
        } else {
            for i in 0..n {
                acc += self.weights[i] * eval(i)?;
            }
        }
        Ok(acc)
    }
}

/// `E[f] = Σ wᵢ f(xᵢ)` over a rule whose weights carry the density.
pub fn expectation<F: FnMut(f64) -> f64>(rule: &QuadratureRule, f: F) -> Result<f64> {
    rule.integrate(f)
}

/// `H(q_D, N(μ, σ²)) = −E_{q_D}[log N(x; μ, σ²)]` with the two-point
/// moment-based rule; exact because the Gaussian log-density is quadratic.
pub fn cross_entropy_to_gaussian(params: &DeviceDistParams, mu: f64, sigma: f64) -> Result<f64> {
    cross_entropy_to_gaussian_with(&wheeler_rule(params, 2)?, mu, sigma)
}

pub fn cross_entropy_to_gaussian_with(rule: &QuadratureRule, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("sigma must be positive, got {sigma}")));
    }
    rule.integrate(|x| -gaussian_log_pdf(x, mu, sigma))
}

/// KL estimates below this are treated as a rule/integrand mismatch; smaller
/// negative values are quadrature round-off and clamp to zero.
pub const KL_INCONSISTENT: f64 = -1e-6;

/// `KL(q_D ‖ p) = E_{q_D}[log q_D − log p]` over a device-weighted rule.
pub fn kl_device_to_density<F>(params: &DeviceDistParams, mut log_p: F, rule: &QuadratureRule) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let kl = rule.integrate(|x| params.log_pdf(x) - log_p(x))?;
    clamp_kl(kl)
}

pub(crate) fn clamp_kl(kl: f64) -> Result<f64> {
    if kl >= KL_INCONSISTENT {
        Ok(kl.max(0.0))
    } else {
        Err(Error::Inconsistent { value: kl })
    }
}

/// Which rule family a convergence study uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleFamily {
    /// Piecewise Gauss–Legendre + trapezoid, `order` points per piece.
    Custom,
    /// Gauss–Legendre on `[−1, 1]` with `order` points and the density folded in.
    Standard,
}

/// Quantity estimated in a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyTarget {
    Variance,
    /// KL from the device density to the centred Gaussian of equal variance.
    KlToGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub order: usize,
    pub estimate: f64,
    /// Squared difference to the previous row's estimate (`None` on the first row).
    pub sq_diff: Option<f64>,
}

/// Estimate `target` at each order and report squared successive differences.
pub fn convergence_study(
    params: &DeviceDistParams,
    family: RuleFamily,
    orders: &[usize],
    target: StudyTarget,
) -> Result<alloc::vec::Vec<ConvergenceRow>> {
    if orders.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::InvalidArgument("orders must be nondecreasing".into()));
    }
    let var = params.raw_moment(2)?;
    let std = libm::sqrt(var);
    let mut rows = Vec::with_capacity(orders.len());
    let mut prev: Option<f64> = None;
    for &order in orders {
        let rule = match family {
            RuleFamily::Custom => piecewise_device_rule(params, order, DEFAULT_EPSILON)?,
            RuleFamily::Standard => standard_device_rule(params, order)?,
        };
        let estimate = match target {
            StudyTarget::Variance => rule.integrate(|x| x * x)?,
            StudyTarget::KlToGaussian => rule.integrate(|x| params.log_pdf(x) - gaussian_log_pdf(x, 0.0, std))?,
        };
        let sq_diff = prev.map(|p| (estimate - p) * (estimate - p));
        rows.push(ConvergenceRow { order, estimate, sq_diff });
        prev = Some(estimate);
    }
    Ok(rows)
}
