//! Moment-based Gaussian rules for the device density (Wheeler's algorithm).

use alloc::vec;
use alloc::vec::Vec;

use super::classical::golub_welsch;
use super::{QuadratureRule, Weighting};
use crate::distributions::DeviceDistParams;
use crate::error::{Error, Result};

/// Largest rule the moment-based construction will build. Beyond this the
/// recurrence loses too many digits to be trusted.
pub const MAX_WHEELER_POINTS: usize = 8;

/// Recurrence coefficient `bₖ` of the monic Legendre polynomials.
fn monic_legendre_b(k: usize) -> f64 {
    let k2 = (k * k) as f64;
    k2 / (4.0 * k2 - 1.0)
}

/// Modified moments `νₗ = ∫ πₗ dλ` against the monic Legendre polynomials
/// `πₗ`, assembled from raw moments `mⱼ = ∫ xʲ dλ`.
pub fn legendre_modified_moments(raw: &[f64]) -> Vec<f64> {
    let count = raw.len();
    let mut out = Vec::with_capacity(count);
    let mut prev: Vec<f64> = Vec::new();
    let mut cur: Vec<f64> = vec![1.0];
    for l in 0..count {
        out.push(cur.iter().zip(raw).map(|(c, m)| c * m).sum());
        // π_{l+1} = x·π_l − b_l·π_{l−1}
        let mut next = vec![0.0; cur.len() + 1];
        for (j, c) in cur.iter().enumerate() {
            next[j + 1] += c;
        }
        if l > 0 {
            let b = monic_legendre_b(l);
            for (j, c) in prev.iter().enumerate() {
                next[j] -= b * c;
            }
        }
        prev = core::mem::replace(&mut cur, next);
    }
    out
}

/// Modified Chebyshev (Wheeler) algorithm.
///
/// Given `2n` modified moments `nu` with respect to auxiliary monic
/// polynomials with recurrence coefficients `(a, b)`, returns the recurrence
/// coefficients `(α, β)` of the first `n` monic polynomials orthogonal with
/// respect to the measure, with `β₀ = ν₀`.
pub fn modified_chebyshev(nu: &[f64], a: &[f64], b: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = 2 * n;
    if nu.len() < len || a.len() < len || b.len() < len {
        return Err(Error::Shape { expected: len, got: nu.len().min(a.len()).min(b.len()) });
    }
    if !(nu[0] > 0.0) {
        return Err(Error::Breakdown(alloc::format!("zeroth moment {} is not positive", nu[0])));
    }
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    alpha[0] = a[0] + nu[1] / nu[0];
    beta[0] = nu[0];

    let mut sig_prev2 = vec![0.0; len];
    let mut sig_prev = nu[..len].to_vec();
    for k in 1..n {
        let mut sig = vec![0.0; len];
        for l in k..(len - k) {
            sig[l] = sig_prev[l + 1] - (alpha[k - 1] - a[l]) * sig_prev[l] - beta[k - 1] * sig_prev2[l]
                + b[l] * sig_prev[l - 1];
        }
        if !(sig[k] > 0.0) || !sig[k].is_finite() {
            return Err(Error::Breakdown(alloc::format!(
                "non-positive recurrence coefficient at order {k} (sigma = {})",
                sig[k]
            )));
        }
        alpha[k] = a[k] + sig[k + 1] / sig[k] - sig_prev[k] / sig_prev[k - 1];
        beta[k] = sig[k] / sig_prev[k - 1];
        sig_prev2 = core::mem::replace(&mut sig_prev, sig);
    }
    Ok((alpha, beta))
}

/// `n`-point Gaussian rule whose weight function is the device density.
///
/// Built from closed-form raw moments converted to Legendre modified moments,
/// Wheeler's recurrence, and the eigen-decomposition of the Jacobi matrix.
/// Integrates every polynomial of degree `≤ 2n − 1` exactly (up to rounding).
pub fn wheeler_rule(params: &DeviceDistParams, n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::InvalidArgument("rule needs at least one point".into()));
    }
    if n > MAX_WHEELER_POINTS {
        return Err(Error::UnstableOrder { points: n, max: MAX_WHEELER_POINTS });
    }
    let raw = (0..2 * n).map(|k| params.raw_moment(k)).collect::<Result<Vec<_>>>()?;
    let nu = legendre_modified_moments(&raw);
    let a = vec![0.0; 2 * n];
    let b: Vec<f64> = (0..2 * n).map(monic_legendre_b).collect();
    let (mut alpha, beta) = modified_chebyshev(&nu, &a, &b, n)?;
    // the density is even; remove round-off in the diagonal
    alpha.iter_mut().for_each(|v| *v = 0.0);
    let (mut x, mut w) = golub_welsch(&alpha, &beta, beta[0])?;
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let v = 0.5 * (x[j] - x[i]);
        let m = 0.5 * (w[i] + w[j]);
        (x[i], x[j]) = (-v, v);
        (w[i], w[j]) = (m, m);
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    QuadratureRule::new(x, w, Weighting::Device(*params), 2 * n as i32 - 1)
}
