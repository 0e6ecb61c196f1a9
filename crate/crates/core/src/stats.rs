//! Sample summaries and two-sample diagnostics.

use alloc::vec::Vec;

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn std_dev(xs: &[f64]) -> f64 {
    libm::sqrt(variance(xs))
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    libm::sqrt(variance(xs) / xs.len() as f64)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `xs` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let v = sorted(xs);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Quantile of already sorted data by linear interpolation between order
/// statistics (the "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Smoothed histogram estimate of `KL(q‖p)` from two sample sets on shared
/// equal-width bins spanning the pooled range, clamped at zero.
pub fn histogram_kl(samples_q: &[f64], samples_p: &[f64], bins: usize, smoothing: f64) -> Result<f64> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    if samples_q.is_empty() || samples_p.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in samples_q.iter().chain(samples_p) {
        if !x.is_finite() {
            return Err(Error::InvalidArgument("non-finite sample".into()));
        }
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !(hi > lo) {
        return Err(Error::InvalidArgument("pooled samples have zero spread".into()));
    }
    let width = (hi - lo) / bins as f64;
    let density = |xs: &[f64]| {
        let mut counts = alloc::vec![0.0; bins];
        for &x in xs {
            let i = (((x - lo) / width) as usize).min(bins - 1);
            counts[i] += 1.0;
        }
        let total = xs.len() as f64 + smoothing * bins as f64;
        counts.iter().map(|c| (c + smoothing) / total).collect::<Vec<f64>>()
    };
    let q = density(samples_q);
    let p = density(samples_p);
    let kl: f64 = q.iter().zip(&p).map(|(&qi, &pi)| qi * libm::log(qi / pi)).sum();
    Ok(kl.max(0.0))
}
