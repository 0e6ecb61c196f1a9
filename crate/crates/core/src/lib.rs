//! Mean-field variational inference for small Bayesian neural networks whose
//! per-weight noise follows an arbitrary standardized base distribution, in
//! particular the bounded, kinked densities measured on analog memory devices.
//!
//! The crate is `no_std` and only needs an allocator. Everything here is pure
//! computation: file formats, the command line and parallel sweeps live in the
//! `devnoise` companion crate.
//!
//! Layout:
//!
//! - [`distributions`]: the device density family, the Gaussian and bimodal
//!   references, and the standardized [`BaseDistribution`] wrapper.
//! - [`mle_fit`]: maximum-likelihood fit of device parameters to raw samples.
//! - [`quadrature`]: moment-based (Wheeler) rules, composite rules, two-sided
//!   Laguerre rules, cross-entropy and KL estimators.
//! - [`inverse_sampler`]: singularity-corrected inverse CDF and inverse
//!   transform sampling.
//! - [`nn`]: dense networks with hand-written reverse-mode gradients and
//!   reparameterized mean-field layers.
//! - [`mfvi`]: ELBO, KL to the prior, Adam, MLE pre-training and VI training.
//! - [`experiments`]: energy-distance sweeps, heteroscedastic regression and
//!   calibration curves.

#![no_std]

extern crate alloc;

pub mod distributions;
pub mod error;
pub mod experiments;
pub mod inverse_sampler;
pub mod mfvi;
pub mod mle_fit;
pub mod nn;
pub mod optim;
pub mod quadrature;
pub mod roots;
pub mod special;
pub mod stats;

pub use distributions::{BaseDistribution, BaseKind, DeviceDistParams, Kernel};
pub use error::{Error, Result};
pub use inverse_sampler::InverseCdfApprox;
pub use quadrature::QuadratureRule;

/// Seeded random stream used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the random stream for `seed`, optionally split into an independent
/// sub-stream (one per worker, sweep cell or Monte Carlo replicate).
pub fn seeded_rng(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
