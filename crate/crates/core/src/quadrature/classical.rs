//! Classical Gaussian rules and the Golub–Welsch eigen-solve behind them.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::{QuadratureRule, Weighting};
use crate::error::{Error, Result};
use crate::special::legendre_with_derivative;

/// Deflation threshold of the tridiagonal QL iteration, relative to the
/// neighbouring diagonal magnitudes. Machine epsilon, so the 1e-12 budget on
/// abscissas is met with room to spare.
const EIGEN_TOL: f64 = f64::EPSILON;
const EIGEN_MAX_SWEEPS: usize = 60;

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `diag` and
/// off-diagonal `offdiag`, together with the first component of each
/// normalized eigenvector. Output is sorted by ascending eigenvalue.
///
/// Implicit QL with Wilkinson shifts, tracking only the first row of the
/// eigenvector matrix.
pub fn tridiagonal_eigen(diag: &[f64], offdiag: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    if n == 0 || offdiag.len() + 1 != n {
        return Err(Error::Shape { expected: n.saturating_sub(1), got: offdiag.len() });
    }
    let mut d = diag.to_vec();
    let mut e = offdiag.to_vec();
    e.push(0.0);
    let mut z = vec![0.0; n];
    z[0] = 1.0;

    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= EIGEN_TOL * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > EIGEN_MAX_SWEEPS {
                return Err(Error::Breakdown("tridiagonal QL iteration did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = libm::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = libm::hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    Ok((order.iter().map(|&i| d[i]).collect(), order.iter().map(|&i| z[i]).collect()))
}

/// Golub–Welsch: nodes and weights of the Gaussian rule for the three-term
/// recurrence `p_{k+1} = (x − αₖ) pₖ − βₖ p_{k−1}` with total mass `mu0`.
///
/// `beta[k]` is used for `k ≥ 1`; `beta[0]` is ignored.
pub fn golub_welsch(alpha: &[f64], beta: &[f64], mu0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = alpha.len();
    if beta.len() < n {
        return Err(Error::Shape { expected: n, got: beta.len() });
    }
    let mut off = Vec::with_capacity(n.saturating_sub(1));
    for (k, &b) in beta.iter().enumerate().take(n).skip(1) {
        if !(b > 0.0) {
            return Err(Error::Breakdown(alloc::format!(
                "recurrence coefficient beta[{k}] = {b} is not positive"
            )));
        }
        off.push(libm::sqrt(b));
    }
    let (nodes, first) = tridiagonal_eigen(alpha, &off)?;
    let weights = first.iter().map(|v| mu0 * v * v).collect();
    Ok((nodes, weights))
}

/// `n`-point Gauss–Legendre rule on `[-1, 1]` (Newton iteration on `Pₙ`).
pub fn gauss_legendre(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::InvalidArgument("Gauss-Legendre rule needs at least one point".into()));
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut xi = libm::cos(PI * (i as f64 + 0.75) / (nf + 0.5));
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, xi);
            let dx = p / dp;
            xi -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, xi);
        let wi = 2.0 / ((1.0 - xi * xi) * dp * dp);
        x[i] = -xi;
        x[n - 1 - i] = xi;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    QuadratureRule::new(x, w, Weighting::Lebesgue { lo: -1.0, hi: 1.0 }, 2 * n as i32 - 1)
}

/// `n`-point Gauss–Lobatto–Legendre rule on `[-1, 1]` (`n ≥ 2`, endpoints included).
pub fn gauss_lobatto(n: usize) -> Result<QuadratureRule> {
    if n < 2 {
        return Err(Error::InvalidArgument("Gauss-Lobatto rule needs at least two points".into()));
    }
    let degree = n - 1;
    let df = degree as f64;
    let mut x: Vec<f64> = (0..n).map(|i| -libm::cos(PI * i as f64 / df)).collect();
    for xi in x.iter_mut().take(n - 1).skip(1) {
        for _ in 0..100 {
            let (p_n, _) = legendre_with_derivative(degree, *xi);
            let (p_nm1, _) = legendre_with_derivative(degree - 1, *xi);
            let dx = (*xi * p_n - p_nm1) / ((df + 1.0) * p_n);
            *xi -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
    }
    x[0] = -1.0;
    x[n - 1] = 1.0;
    // symmetrize against round-off
    for i in 0..n / 2 {
        let v = 0.5 * (x[n - 1 - i] - x[i]);
        x[i] = -v;
        x[n - 1 - i] = v;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let w = x
        .iter()
        .map(|&xi| {
            let (p, _) = legendre_with_derivative(degree, xi);
            2.0 / (df * (df + 1.0) * p * p)
        })
        .collect();
    QuadratureRule::new(x, w, Weighting::Lebesgue { lo: -1.0, hi: 1.0 }, 2 * n as i32 - 3)
}

/// `n`-point Gauss–Laguerre rule for the weight `e^(−x)` on `[0, ∞)`.
pub fn gauss_laguerre(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::InvalidArgument("Gauss-Laguerre rule needs at least one point".into()));
    }
    let alpha: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + 1.0).collect();
    let beta: Vec<f64> = (0..n).map(|k| (k * k) as f64).collect();
    let (x, w) = golub_welsch(&alpha, &beta, 1.0)?;
    QuadratureRule::new(x, w, Weighting::Exponential, 2 * n as i32 - 1)
}

/// `n`-point Gauss–Hermite rule for the standard normal density.
pub fn gauss_hermite(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::InvalidArgument("Gauss-Hermite rule needs at least one point".into()));
    }
    let alpha = vec![0.0; n];
    let beta: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let (mut x, w) = golub_welsch(&alpha, &beta, 1.0)?;
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    QuadratureRule::new(x, w, Weighting::StandardNormal, 2 * n as i32 - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 16, 64] {
            let rule = gauss_legendre(n).unwrap();
            for k in 0..(2 * n) {
                let got = rule.integrate(|x| libm::pow(x, k as f64)).unwrap();
                let expect = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!(approx(got, expect, 1e-13), "n={n} k={k}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn lobatto_known_five_point_rule() {
        let rule = gauss_lobatto(5).unwrap();
        let s = libm::sqrt(3.0 / 7.0);
        let expect_x = [-1.0, -s, 0.0, s, 1.0];
        let expect_w = [0.1, 49.0 / 90.0, 32.0 / 45.0, 49.0 / 90.0, 0.1];
        for i in 0..5 {
            assert!(approx(rule.abscissas()[i], expect_x[i], 1e-15));
            assert!(approx(rule.weights()[i], expect_w[i], 1e-14));
        }
    }

    #[test]
    fn lobatto_exactness() {
        let rule = gauss_lobatto(21).unwrap();
        for k in 0..=39 {
            let got = rule.integrate(|x| libm::pow(x, k as f64)).unwrap();
            let expect = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!(approx(got, expect, 1e-13), "k={k}");
        }
    }

    #[test]
    fn laguerre_moments_are_factorials() {
        let rule = gauss_laguerre(12).unwrap();
        let mut fact = 1.0;
        for k in 0..=23 {
            if k > 0 {
                fact *= k as f64;
            }
            let got = rule.integrate(|x| libm::pow(x, k as f64)).unwrap();
            assert!((got - fact).abs() <= 1e-10 * fact, "k={k}: {got} vs {fact}");
        }
    }

    #[test]
    fn hermite_moments_are_double_factorials() {
        let rule = gauss_hermite(32).unwrap();
        let mut df = 1.0;
        for k in (0..=20).step_by(2) {
            if k > 0 {
                df *= (k - 1) as f64;
            }
            let got = rule.integrate(|x| libm::pow(x, k as f64)).unwrap();
            assert!((got - df).abs() <= 1e-10 * df, "k={k}");
        }
    }

    #[test]
    fn eigen_of_diagonal_matrix() {
        let (vals, first) = tridiagonal_eigen(&[3.0, 1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(vals, [1.0, 2.0, 3.0]);
        assert_eq!(first, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn nonpositive_beta_is_breakdown() {
        let err = golub_welsch(&[0.0, 0.0], &[1.0, -0.5], 1.0).unwrap_err();
        assert!(matches!(err, Error::Breakdown(_)));
    }
}
