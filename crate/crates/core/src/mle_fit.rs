//! Maximum-likelihood fit of the device density to raw noise samples.
//!
//! The optimizer works on `(log A, log B)`; `C` is eliminated by the
//! normalization constraint, so every iterate is a proper density.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::distributions::{kernel_excess_mass, kernel_excess_mass_db, DeviceDistParams, Kernel};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::seeded_rng;

pub const MIN_SAMPLES: usize = 100;
/// Step halvings tried when an Adam step leaves the valid parameter region.
const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct FitConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// `None` for full-batch optimization.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Initial `(A, B)`.
    pub init: (f64, f64),
    pub kernel: Kernel,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, iterations: 3000, batch_size: None, seed: 0, init: (1.0, 0.25), kernel: Kernel::AbsExp }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: DeviceDistParams,
    /// Loss before each update, then the full-sample loss at the returned
    /// parameters; one entry per iteration plus one.
    pub trace: Vec<f64>,
}

fn check_support(samples: &[f64]) -> Result<()> {
    match samples.iter().position(|x| !(-1.0..=1.0).contains(x)) {
        Some(index) => Err(Error::OutOfSupport { index, value: samples[index] }),
        None => Ok(()),
    }
}

/// `−(1/n) Σ log q_D(xᵢ)`; `+∞` if any sample sits where the density is zero.
pub fn negative_log_likelihood(params: &DeviceDistParams, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    check_support(samples)?;
    let total: f64 = samples.iter().map(|&x| params.log_pdf(x)).sum();
    Ok(-total / samples.len() as f64)
}

/// NLL and its gradient with respect to `(log A, log B)` over `samples`.
pub fn nll_and_gradient<I>(params: &DeviceDistParams, samples: I) -> (f64, [f64; 2])
where
    I: IntoIterator<Item = f64>,
{
    let (a, b, c, kernel) = (params.a(), params.b(), params.c(), params.kernel());
    let k = kernel_excess_mass(kernel, b);
    let dk = kernel_excess_mass_db(kernel, b);
    let floor = libm::exp(-1.0 / b);
    let (dc_da, dc_db) = (-0.75 * k, -0.75 * a * dk);
    let (mut loss, mut ga, mut gb, mut n) = (0.0, 0.0, 0.0, 0usize);
    for x in samples {
        let g = match kernel {
            Kernel::AbsExp => x.abs(),
            Kernel::SqExp => x * x,
        };
        let e = libm::exp(-g / b);
        let shoulder = 1.0 - x * x;
        let q = a * (e - floor) + c * shoulder;
        let dq_da = e - floor + dc_da * shoulder;
        let dq_db = a * (e * g - floor) / (b * b) + dc_db * shoulder;
        loss -= libm::log(q);
        ga -= dq_da / q;
        gb -= dq_db / q;
        n += 1;
    }
    let n = n as f64;
    (loss / n, [a * ga / n, b * gb / n])
}

/// Fits `(A, B)` by Adam on the log-parameters, full batch unless
/// `cfg.batch_size` asks for minibatches.
pub fn fit_device_params(samples: &[f64], cfg: &FitConfig) -> Result<FitResult> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InvalidArgument(alloc::format!(
            "fit needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    check_support(samples)?;
    if cfg.iterations == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("iterations and learning rate must be positive".into()));
    }
    if let Some(bs) = cfg.batch_size {
        if bs == 0 || bs > samples.len() {
            return Err(Error::InvalidArgument(alloc::format!("batch size {bs} outside 1..={}", samples.len())));
        }
    }
    let mut params = DeviceDistParams::new(cfg.init.0, cfg.init.1, cfg.kernel)?;
    let mut theta = [libm::log(cfg.init.0), libm::log(cfg.init.1)];
    let mut adam = Adam::new(cfg.learning_rate, 2);
    let mut rng = seeded_rng(cfg.seed, 0);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);

    for iteration in 0..cfg.iterations {
        let (loss, grad) = match cfg.batch_size {
            Some(bs) if bs < samples.len() => {
                let batch = (0..bs).map(|_| samples[rng.random_range(0..samples.len())]);
                nll_and_gradient(&params, batch)
            }
            _ => nll_and_gradient(&params, samples.iter().copied()),
        };
        if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::Diverged { iteration, loss });
        }
        trace.push(loss);
        let d = adam.direction(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let t = [theta[0] - scale * d[0], theta[1] - scale * d[1]];
            if let Ok(p) = DeviceDistParams::new(libm::exp(t[0]), libm::exp(t[1]), cfg.kernel) {
                theta = t;
                params = p;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::Diverged { iteration, loss });
        }
    }
    let final_loss = negative_log_likelihood(&params, samples)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged { iteration: cfg.iterations, loss: final_loss });
    }
    trace.push(final_loss);
    Ok(FitResult { params, trace })
}
