//! Composite rules with a density absorbed into the weights.

use alloc::vec::Vec;

use super::classical::{gauss_laguerre, gauss_legendre};
use super::{QuadratureRule, Weighting};
use crate::distributions::{BaseDistribution, DeviceDistParams};
use crate::error::{Error, Result};

/// Half-width of the trapezoid strip around the kink at `x = 0`.
pub const DEFAULT_EPSILON: f64 = 0.05;
/// Trapezoid panels across `[−ε, ε]`.
pub const DEFAULT_TRAPEZOID_PANELS: usize = 4096;
/// Abscissa scale of the two-sided Laguerre rule (`x = scale · t`).
pub const DEFAULT_LAGUERRE_SCALE: f64 = 0.1;

/// Gauss–Legendre on `[−1, −ε]` and `[ε, 1]`, trapezoid on `[−ε, ε]`, with the
/// device density folded into the weights so that `E[f] ≈ Σ wᵢ f(xᵢ)`.
pub fn piecewise_device_rule(params: &DeviceDistParams, n_per_piece: usize, epsilon: f64) -> Result<QuadratureRule> {
    piecewise_device_rule_with_panels(params, n_per_piece, epsilon, DEFAULT_TRAPEZOID_PANELS)
}

pub fn piecewise_device_rule_with_panels(
    params: &DeviceDistParams,
    n_per_piece: usize,
    epsilon: f64,
    panels: usize,
) -> Result<QuadratureRule> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidArgument(alloc::format!("epsilon must lie in (0, 0.5), got {epsilon}")));
    }
    if panels == 0 {
        return Err(Error::InvalidArgument("trapezoid strip needs at least one panel".into()));
    }
    let gl = gauss_legendre(n_per_piece)?;
    let half = 0.5 * (1.0 - epsilon);
    let mut x = Vec::with_capacity(2 * n_per_piece + panels + 1);
    let mut w = Vec::with_capacity(x.capacity());

    // [−1, −ε]
    for (&t, &wt) in gl.abscissas().iter().zip(gl.weights()) {
        x.push(-1.0 + half * (t + 1.0));
        w.push(half * wt);
    }
    let h = 2.0 * epsilon / panels as f64;
    for i in 0..=panels {
        x.push(if i == panels { epsilon } else { -epsilon + h * i as f64 });
        w.push(if i == 0 || i == panels { 0.5 * h } else { h });
    }
    // [ε, 1]
    for (&t, &wt) in gl.abscissas().iter().zip(gl.weights()) {
        x.push(epsilon + half * (t + 1.0));
        w.push(half * wt);
    }
    if panels % 2 == 0 {
        x[n_per_piece + panels / 2] = 0.0;
    }
    for (wi, &xi) in w.iter_mut().zip(&x) {
        *wi *= params.pdf(xi);
    }
    QuadratureRule::new(x, w, Weighting::Device(*params), -1)
}

/// Plain `n`-point Gauss–Legendre on `[−1, 1]` with the device density folded
/// into the weights: the baseline the composite rule is compared against.
pub fn standard_device_rule(params: &DeviceDistParams, n: usize) -> Result<QuadratureRule> {
    let gl = gauss_legendre(n)?;
    let w = gl.abscissas().iter().zip(gl.weights()).map(|(&x, &wt)| wt * params.pdf(x)).collect();
    QuadratureRule::new(gl.abscissas().to_vec(), w, Weighting::Device(*params), -1)
}

/// Two-sided Gauss–Laguerre rule for the bimodal base: an `n`-point Laguerre
/// rule on `[0, ∞)` plus its reflection, with the density absorbed.
pub fn two_sided_laguerre_rule(base: &BaseDistribution, n: usize) -> Result<QuadratureRule> {
    two_sided_laguerre_rule_scaled(base, n, DEFAULT_LAGUERRE_SCALE)
}

/// As [`two_sided_laguerre_rule`] with abscissas `x = scale · t` for Laguerre
/// nodes `t`. Nodes whose absorbed weight underflows to zero are dropped.
pub fn two_sided_laguerre_rule_scaled(base: &BaseDistribution, n: usize, scale: f64) -> Result<QuadratureRule> {
    let BaseDistribution::Bimodal(bimodal) = base else {
        return Err(Error::InvalidArgument("two-sided Laguerre rule requires the bimodal base".into()));
    };
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("scale must be positive, got {scale}")));
    }
    let lag = gauss_laguerre(n)?;
    // ∫₀^∞ f(x) q(x) dx = ∫₀^∞ f(st) q(st) s eᵗ e^(−t) dt
    let mut pos_x = Vec::with_capacity(n);
    let mut pos_w = Vec::with_capacity(n);
    for (&t, &wt) in lag.abscissas().iter().zip(lag.weights()) {
        if wt <= 0.0 {
            continue;
        }
        let x = scale * t;
        let w = libm::exp(libm::log(wt) + t + bimodal.log_pdf(x) + libm::log(scale));
        if w > 0.0 && w.is_finite() {
            pos_x.push(x);
            pos_w.push(w);
        }
    }
    let mut x: Vec<f64> = pos_x.iter().rev().map(|v| -v).collect();
    let mut w: Vec<f64> = pos_w.iter().rev().copied().collect();
    x.extend_from_slice(&pos_x);
    w.extend_from_slice(&pos_w);
    QuadratureRule::new(x, w, Weighting::Bimodal { separation: bimodal.separation(), component_std: bimodal.component_std() }, -1)
}
