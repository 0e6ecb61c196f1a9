//! Mean-field variational training of a regression network with a
//! heteroscedastic Gaussian likelihood.
//!
//! The mean network `f_nn` carries the variational weights; a deterministic
//! aleatoric network `f_nn′` predicts the noise scale `σ_a(x)`. Training
//! follows the usual recipe: MSE pre-training of the mean network, a Gaussian
//! NLL fit of the aleatoric network with the mean frozen, then VI on the
//! kernels with biases fixed, tempering the KL term by `T = exp(−i/τ)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::distributions::BaseDistribution;
use crate::error::{Error, Result};
use crate::nn::{DenseWeights, MeanFieldNet, NetworkSpec};
use crate::optim::Adam;
use crate::quadrature::gauss_hermite;
use crate::seeded_rng;
use crate::special::{gaussian_log_pdf, sigmoid, softplus, HALF_LN_TWO_PI};

/// Lower clamp on the predicted aleatoric scale.
pub const SIGMA_A_FLOOR: f64 = 1e-4;
/// Initial variational scale of every stochastic weight.
pub const DEFAULT_INIT_SIGMA: f64 = 1e-2;
/// A training loss above this aborts the run.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// `KL(q_{μ,σ} ‖ N(0, s²))` for one weight `θ = σz + μ`, `z` from `base`:
/// `−H(q_z) − log σ + E[−log N(σz + μ; 0, s²)]`.
///
/// The cross-entropy term is quadratic in `z`, so for a standardized base it
/// equals the Gaussian value; each base still evaluates it its own way (closed
/// form, the two-point moment rule, the mixture decomposition).
pub fn kl_to_prior(mu: f64, sigma: f64, base: &BaseDistribution, prior_std: f64) -> f64 {
    let s2 = prior_std * prior_std;
    match base {
        BaseDistribution::Gaussian => libm::log(prior_std / sigma) + (sigma * sigma + mu * mu) / (2.0 * s2) - 0.5,
        BaseDistribution::Device(d) => {
            let rule = crate::quadrature::wheeler_rule(d.params(), 2).expect("two-point rule exists for valid params");
            let scale = sigma / d.std_scale();
            let ce = rule
                .integrate(|x| -gaussian_log_pdf(scale * x + mu, 0.0, prior_std))
                .expect("finite integrand");
            -base.entropy() - libm::log(sigma) + ce
        }
        BaseDistribution::Bimodal(m) => {
            // ½ Σ± E[(σ(±c + s_c n) + μ)²] / 2s² + log normalizer
            let (c, sc) = (m.separation(), m.component_std());
            let second: f64 = [c, -c]
                .iter()
                .map(|&centre| 0.5 * (libm::pow(sigma * centre + mu, 2.0) + sigma * sigma * sc * sc))
                .sum();
            let ce = HALF_LN_TWO_PI + libm::log(prior_std) + second / (2.0 * s2);
            -base.entropy() - libm::log(sigma) + ce
        }
    }
}

/// Same KL through a generic quadrature rule over `z` (Gauss–Hermite for the
/// Gaussian): the independent route the closed forms are checked against.
pub fn kl_to_prior_quadrature(mu: f64, sigma: f64, base: &BaseDistribution, prior_std: f64) -> Result<f64> {
    let rule = match base {
        BaseDistribution::Gaussian => gauss_hermite(8)?,
        _ => base.moment_rule()?,
    };
    let ce = rule.integrate(|z| -gaussian_log_pdf(sigma * z + mu, 0.0, prior_std))?;
    Ok(-base.entropy() - libm::log(sigma) + ce)
}

/// `(∂KL/∂μ, ∂KL/∂σ)` for a standardized base.
pub fn kl_to_prior_grad(mu: f64, sigma: f64, prior_std: f64) -> (f64, f64) {
    let s2 = prior_std * prior_std;
    (mu / s2, sigma / s2 - 1.0 / sigma)
}

/// Temperature `T(i) = exp(−i/τ)`.
pub fn temperature(iteration: u64, temper_scale: f64) -> f64 {
    libm::exp(-(iteration as f64) / temper_scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldModel {
    mean_net: MeanFieldNet,
    aleatoric_spec: NetworkSpec,
    aleatoric: DenseWeights,
    base: BaseDistribution,
    prior_std: f64,
}

impl MeanFieldModel {
    pub fn new(
        mean_net: MeanFieldNet,
        aleatoric_spec: NetworkSpec,
        aleatoric: DenseWeights,
        base: BaseDistribution,
        prior_std: f64,
    ) -> Result<Self> {
        if !(prior_std > 0.0 && prior_std.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!("prior std must be positive, got {prior_std}")));
        }
        if mean_net.spec().outputs() != 1 || aleatoric_spec.outputs() != 1 {
            return Err(Error::InvalidArgument("regression networks must have a single output".into()));
        }
        if mean_net.spec().inputs() != aleatoric_spec.inputs() {
            return Err(Error::Shape { expected: mean_net.spec().inputs(), got: aleatoric_spec.inputs() });
        }
        aleatoric_spec.forward(&aleatoric, &vec![0.0; aleatoric_spec.inputs()])?;
        base.check_standardized()?;
        Ok(Self { mean_net, aleatoric_spec, aleatoric, base, prior_std })
    }

    pub fn mean_net(&self) -> &MeanFieldNet {
        &self.mean_net
    }

    pub fn mean_net_mut(&mut self) -> &mut MeanFieldNet {
        &mut self.mean_net
    }

    pub fn aleatoric_spec(&self) -> &NetworkSpec {
        &self.aleatoric_spec
    }

    pub fn aleatoric_weights(&self) -> &DenseWeights {
        &self.aleatoric
    }

    pub fn base(&self) -> &BaseDistribution {
        &self.base
    }

    pub fn prior_std(&self) -> f64 {
        self.prior_std
    }

    /// Same `μ`, `σ` and aleatoric network under a different base.
    pub fn swap_base(&self, new_base: BaseDistribution) -> Result<Self> {
        new_base.check_standardized()?;
        Ok(Self { base: new_base, ..self.clone() })
    }

    /// `σ_a(x) = max(exp(f_nn′(x)), floor)` for row-major inputs.
    pub fn aleatoric_std(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let batch = xs.len() / self.aleatoric_spec.inputs();
        let t = self.aleatoric_spec.forward_batch(&self.aleatoric, xs, batch)?;
        Ok(t.output().iter().map(|&r| aleatoric_transform(r)).collect())
    }

    /// Sum of per-weight KL terms over every stochastic parameter.
    pub fn kl_total(&self) -> f64 {
        self.mean_net.stochastic_params().iter().map(|&(m, s)| kl_to_prior(m, s, &self.base, self.prior_std)).sum()
    }
}

fn aleatoric_transform(raw: f64) -> f64 {
    libm::exp(raw).max(SIGMA_A_FLOOR)
}

/// Gaussian negative log-likelihood of `y` under `N(f, σ²)`.
fn gaussian_nll(y: f64, f: f64, sigma: f64) -> f64 {
    let r = (y - f) / sigma;
    HALF_LN_TWO_PI + libm::log(sigma) + 0.5 * r * r
}

fn check_data(spec: &NetworkSpec, xs: &[f64], ys: &[f64]) -> Result<()> {
    if ys.is_empty() {
        return Err(Error::InvalidArgument("empty data set".into()));
    }
    if xs.len() != ys.len() * spec.inputs() {
        return Err(Error::Shape { expected: ys.len() * spec.inputs(), got: xs.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Monte Carlo weight draws per gradient step.
    pub mc_samples: usize,
    pub learning_rate: f64,
    /// `τ` in `T = exp(−i/τ)`.
    pub temper_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 100, mc_samples: 4, learning_rate: Adam::DEFAULT_LEARNING_RATE, temper_scale: 1000.0, seed: 0 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.mc_samples == 0 {
            return Err(Error::InvalidArgument("epochs, batch size and MC samples must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.temper_scale > 0.0) {
            return Err(Error::InvalidArgument("learning rate and temper scale must be positive".into()));
        }
        Ok(())
    }
}

/// Loss and gradient of one ELBO evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboEval {
    pub loss: f64,
    /// Monte Carlo mean of the per-example negative log-likelihood.
    pub nll: f64,
    /// Untempered KL sum.
    pub kl: f64,
    /// Gradient in [`MeanFieldNet::to_flat`] order.
    pub grad: Vec<f64>,
}

/// `loss = (1/N) Σₛ mean_b[−log N(y_b; f(x_b; θₛ), σ_a(x_b))] + T·KL/dataset_size`
/// with the weight noise `zₛ` given. Gradients flow to `μ` and `σ_raw`.
pub fn elbo_with_noise(
    model: &MeanFieldModel,
    xs: &[f64],
    ys: &[f64],
    noises: &[DenseWeights],
    temperature: f64,
    dataset_size: usize,
) -> Result<ElboEval> {
    let spec = model.mean_net.spec();
    check_data(spec, xs, ys)?;
    if noises.is_empty() {
        return Err(Error::InvalidArgument("at least one Monte Carlo draw is needed".into()));
    }
    let batch = ys.len();
    let sigma_a = model.aleatoric_std(xs)?;
    let n_mc = noises.len() as f64;
    let scale = 1.0 / (n_mc * batch as f64);

    let half = model.mean_net.mean_weights().param_count();
    let mut grad = vec![0.0; 2 * half];
    let mut nll = 0.0;
    for (s, z) in noises.iter().enumerate() {
        let theta = model.mean_net.theta(z);
        let trace = spec.forward_batch(&theta, xs, batch)?;
        let f = trace.output();
        let mut upstream = Vec::with_capacity(batch);
        let mut sample_nll = 0.0;
        for b in 0..batch {
            sample_nll += gaussian_nll(ys[b], f[b], sigma_a[b]);
            upstream.push(scale * (f[b] - ys[b]) / (sigma_a[b] * sigma_a[b]));
        }
        if !sample_nll.is_finite() {
            return Err(Error::NonFinite { stage: "ELBO likelihood, Monte Carlo draw", index: s });
        }
        nll += sample_nll * scale;
        let (g_theta, _) = spec.backward(&theta, &trace, &upstream)?;
        let (gm, gs) = model.mean_net.reparam_grads(&g_theta, z);
        for (g, v) in grad.iter_mut().zip(gm.to_flat().into_iter().chain(gs.to_flat())) {
            *g += v;
        }
    }

    // KL over stochastic entries, walking the flat layout
    let kl_weight = temperature / dataset_size as f64;
    let mut kl = 0.0;
    let mut k = 0;
    for layer in model.mean_net.layers() {
        let entries = layer
            .mu()
            .weights()
            .iter()
            .zip(layer.sigma_raw().weights())
            .map(|(m, r)| (*m, *r, true))
            .chain(layer.mu().bias().iter().zip(layer.sigma_raw().bias()).map(|(m, r)| (*m, *r, layer.bias_stochastic())));
        for (m, r, stochastic) in entries {
            if stochastic {
                let sigma = softplus(r);
                kl += kl_to_prior(m, sigma, &model.base, model.prior_std);
                let (dm, ds) = kl_to_prior_grad(m, sigma, model.prior_std);
                grad[k] += kl_weight * dm;
                grad[half + k] += kl_weight * ds * sigmoid(r);
            }
            k += 1;
        }
    }
    let loss = nll + kl_weight * kl;
    if !loss.is_finite() {
        return Err(Error::NonFinite { stage: "ELBO", index: 0 });
    }
    Ok(ElboEval { loss, nll, kl, grad })
}

/// [`elbo_with_noise`] with `cfg.mc_samples` fresh noise draws from the
/// model's base and `T = exp(−iteration/τ)`.
pub fn elbo_loss<R: Rng + ?Sized>(
    model: &MeanFieldModel,
    xs: &[f64],
    ys: &[f64],
    cfg: &TrainConfig,
    dataset_size: usize,
    iteration: u64,
    rng: &mut R,
) -> Result<ElboEval> {
    let noises: Vec<DenseWeights> = (0..cfg.mc_samples).map(|_| model.mean_net.sample(&model.base, rng).1).collect();
    elbo_with_noise(model, xs, ys, &noises, temperature(iteration, cfg.temper_scale), dataset_size)
}

fn gather(xs: &[f64], ys: &[f64], idx: &[usize], inputs: usize) -> (Vec<f64>, Vec<f64>) {
    let mut bx = Vec::with_capacity(idx.len() * inputs);
    let mut by = Vec::with_capacity(idx.len());
    for &i in idx {
        bx.extend_from_slice(&xs[i * inputs..(i + 1) * inputs]);
        by.push(ys[i]);
    }
    (bx, by)
}

fn masked(grad: &mut [f64], mask: &[bool]) {
    grad.iter_mut().zip(mask).filter(|(_, &m)| !m).for_each(|(g, _)| *g = 0.0);
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct MleConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 100, learning_rate: Adam::DEFAULT_LEARNING_RATE, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub mean: DenseWeights,
    pub aleatoric: DenseWeights,
    /// Per-epoch mean squared error of the mean network.
    pub mse_trace: Vec<f64>,
    /// Per-epoch Gaussian NLL of the aleatoric network (mean frozen).
    pub nll_trace: Vec<f64>,
}

/// Deterministic pre-training: MSE on the mean network, then Gaussian NLL on
/// the aleatoric network with the mean frozen. Both start from fan-in
/// initialization; the aleatoric output bias starts at the log residual RMS.
pub fn train_mle(mean_spec: &NetworkSpec, aleatoric_spec: &NetworkSpec, xs: &[f64], ys: &[f64], cfg: &MleConfig) -> Result<MleResult> {
    check_data(mean_spec, xs, ys)?;
    check_data(aleatoric_spec, xs, ys)?;
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("epochs, batch size and learning rate must be positive".into()));
    }
    let n = ys.len();
    let inputs = mean_spec.inputs();
    let mut rng = seeded_rng(cfg.seed, 0);
    let mut order: Vec<usize> = (0..n).collect();

    let mut mean = DenseWeights::init_fan_in(mean_spec, &mut rng);
    let mut flat = mean.to_flat();
    let mut adam = Adam::new(cfg.learning_rate, flat.len());
    let mut mse_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let (bx, by) = gather(xs, ys, idx, inputs);
            let t = mean_spec.forward_batch(&mean, &bx, idx.len())?;
            let scale = 1.0 / idx.len() as f64;
            let resid: Vec<f64> = t.output().iter().zip(&by).map(|(f, y)| f - y).collect();
            total += resid.iter().map(|r| r * r).sum::<f64>();
            let upstream: Vec<f64> = resid.iter().map(|r| 2.0 * scale * r).collect();
            let (g, _) = mean_spec.backward(&mean, &t, &upstream)?;
            adam.step(&mut flat, &g.to_flat());
            mean.set_flat(&flat)?;
        }
        let mse = total / n as f64;
        if !(mse <= DIVERGENCE_LOSS) {
            return Err(Error::Diverged { iteration: epoch, loss: mse });
        }
        mse_trace.push(mse);
    }

    let preds = mean_spec.forward_batch(&mean, xs, n)?.into_output();
    let rms = libm::sqrt(preds.iter().zip(ys).map(|(f, y)| (f - y) * (f - y)).sum::<f64>() / n as f64);
    let mut aleatoric = DenseWeights::init_fan_in(aleatoric_spec, &mut rng);
    if let Some(last) = aleatoric.layers_mut().last_mut() {
        last.bias_mut()[0] = libm::log(rms.max(SIGMA_A_FLOOR));
    }
    let mut flat = aleatoric.to_flat();
    let mut adam = Adam::new(cfg.learning_rate, flat.len());
    let mut nll_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let (bx, by) = gather(xs, ys, idx, inputs);
            let t = aleatoric_spec.forward_batch(&aleatoric, &bx, idx.len())?;
            let scale = 1.0 / idx.len() as f64;
            let mut upstream = Vec::with_capacity(idx.len());
            for (k, (&raw, &y)) in t.output().iter().zip(&by).enumerate() {
                let sigma = aleatoric_transform(raw);
                let r = y - preds[idx[k]];
                total += gaussian_nll(y, preds[idx[k]], sigma);
                // d/draw [log σ + r²/2σ²] with σ = e^raw; zero where clamped
                let d = if libm::exp(raw) > SIGMA_A_FLOOR { 1.0 - r * r / (sigma * sigma) } else { 0.0 };
                upstream.push(scale * d);
            }
            let (g, _) = aleatoric_spec.backward(&aleatoric, &t, &upstream)?;
            adam.step(&mut flat, &g.to_flat());
            aleatoric.set_flat(&flat)?;
        }
        let nll = total / n as f64;
        if !(nll.abs() <= DIVERGENCE_LOSS) {
            return Err(Error::Diverged { iteration: epoch, loss: nll });
        }
        nll_trace.push(nll);
    }
    Ok(MleResult { mean, aleatoric, mse_trace, nll_trace })
}

/// Variational training of the kernels' `(μ, σ_raw)` with biases frozen at
/// their current values. Returns the trained model and the per-step loss.
pub fn train_vi(model: &MeanFieldModel, xs: &[f64], ys: &[f64], cfg: &TrainConfig) -> Result<(MeanFieldModel, Vec<f64>)> {
    cfg.validate()?;
    let spec = model.mean_net.spec().clone();
    check_data(&spec, xs, ys)?;
    let n = ys.len();
    let inputs = spec.inputs();
    let mut model = model.clone();
    let mut rng = seeded_rng(cfg.seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mask = model.mean_net.trainable_mask(false);
    let mut flat = model.mean_net.to_flat();
    let mut adam = Adam::new(cfg.learning_rate, flat.len());
    let mut trace = Vec::with_capacity(cfg.epochs * n.div_ceil(cfg.batch_size));
    let mut iteration = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let (bx, by) = gather(xs, ys, idx, inputs);
            let mut eval = elbo_loss(&model, &bx, &by, cfg, n, iteration, &mut rng)?;
            if !(eval.loss <= DIVERGENCE_LOSS) {
                return Err(Error::Diverged { iteration: iteration as usize, loss: eval.loss });
            }
            trace.push(eval.loss);
            masked(&mut eval.grad, &mask);
            adam.step(&mut flat, &eval.grad);
            model.mean_net.set_flat(&flat)?;
            iteration += 1;
        }
    }
    Ok((model, trace))
}

/// Predictive draws and their summary on a grid of 1-D inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub x: Vec<f64>,
    /// `draws[d][j]`: mean-network output at `x[j]` under weight draw `d`.
    pub draws: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Standard deviation of the draws at each `x`.
    pub epistemic_std: Vec<f64>,
    pub aleatoric_std: Vec<f64>,
    /// `√(σ_e² + σ_a²)`.
    pub total_std: Vec<f64>,
}

/// Evaluates `n_draws` weight draws, each across the whole grid.
pub fn predictive_ensemble<R: Rng + ?Sized>(model: &MeanFieldModel, x_grid: &[f64], n_draws: usize, rng: &mut R) -> Result<PredictiveSummary> {
    if n_draws < 2 {
        return Err(Error::InvalidArgument("at least two draws are needed for a spread".into()));
    }
    let spec = model.mean_net.spec();
    if spec.inputs() != 1 {
        return Err(Error::Shape { expected: 1, got: spec.inputs() });
    }
    let m = x_grid.len();
    let mut draws = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let (theta, _) = model.mean_net.sample(&model.base, rng);
        draws.push(spec.forward_batch(&theta, x_grid, m)?.into_output());
    }
    let mut mean = vec![0.0; m];
    let mut epistemic_std = vec![0.0; m];
    for j in 0..m {
        let mu = draws.iter().map(|d| d[j]).sum::<f64>() / n_draws as f64;
        let var = draws.iter().map(|d| (d[j] - mu) * (d[j] - mu)).sum::<f64>() / (n_draws - 1) as f64;
        mean[j] = mu;
        epistemic_std[j] = libm::sqrt(var);
    }
    let aleatoric_std = model.aleatoric_std(x_grid)?;
    let total_std = epistemic_std.iter().zip(&aleatoric_std).map(|(e, a)| libm::sqrt(e * e + a * a)).collect();
    Ok(PredictiveSummary { x: x_grid.to_vec(), draws, mean, epistemic_std, aleatoric_std, total_std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DeviceDistParams;
    use crate::nn::{Activation, DenseLayer, MeanFieldLayer};

    fn device() -> BaseDistribution {
        BaseDistribution::device(DeviceDistParams::reference_mtj()).unwrap()
    }

    fn bases() -> [BaseDistribution; 3] {
        [BaseDistribution::Gaussian, device(), BaseDistribution::standard_bimodal()]
    }

    #[test]
    fn gaussian_kl_closed_form_values() {
        assert!(kl_to_prior(0.0, 1.0, &BaseDistribution::Gaussian, 1.0).abs() < 1e-15);
        assert!((kl_to_prior(1.0, 1.0, &BaseDistribution::Gaussian, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_kl_matches_quadrature_route() {
        for &(mu, sigma, s) in &[(0.0, 1.0, 1.0), (0.3, 0.01, 1.0), (-2.0, 0.7, 0.5), (0.1, 3.0, 2.0)] {
            let a = kl_to_prior(mu, sigma, &BaseDistribution::Gaussian, s);
            let b = kl_to_prior_quadrature(mu, sigma, &BaseDistribution::Gaussian, s).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn all_bases_agree_with_quadrature_route() {
        for base in bases() {
            for &(mu, sigma) in &[(0.2, 0.5), (-1.0, 0.05), (0.0, 2.0)] {
                let a = kl_to_prior(mu, sigma, &base, 1.0);
                let b = kl_to_prior_quadrature(mu, sigma, &base, 1.0).unwrap();
                assert!((a - b).abs() < 1e-10, "{:?}: {a} vs {b}", base.kind());
            }
        }
    }

    #[test]
    fn device_kl_matches_trapezoid() {
        let base = device();
        let BaseDistribution::Device(d) = &base else { unreachable!() };
        let (mu, sigma) = (0.2, 0.5);
        // E_q[log q(θ)] − E_q[log p(θ)] over θ = σ z + μ, z = x / std_scale
        let p = *d.params();
        let scale = sigma / d.std_scale();
        let n = 1_000_000;
        let h = 2.0 / n as f64;
        let mut acc = 0.0;
        for i in 1..n {
            let x = -1.0 + h * i as f64;
            let q = p.pdf(x);
            if q > 0.0 {
                let log_q_theta = libm::log(q) - libm::log(scale);
                acc += h * q * (log_q_theta - gaussian_log_pdf(scale * x + mu, 0.0, 1.0));
            }
        }
        let kl = kl_to_prior(mu, sigma, &base, 1.0);
        assert!((kl - acc).abs() < 1e-8, "{kl} vs {acc}");
    }

    #[test]
    fn kl_is_nonnegative() {
        for base in bases() {
            for &mu in &[-2.0, 0.0, 0.5] {
                for &sigma in &[1e-3, 0.1, 1.0, 1.5, 5.0] {
                    for &s in &[0.3, 1.0, 3.0] {
                        assert!(kl_to_prior(mu, sigma, &base, s) >= -1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn kl_gradient_matches_finite_difference() {
        let h = 1e-6;
        for base in bases() {
            let (mu, sigma) = (0.4, 0.3);
            let (dm, ds) = kl_to_prior_grad(mu, sigma, 1.5);
            let fm = (kl_to_prior(mu + h, sigma, &base, 1.5) - kl_to_prior(mu - h, sigma, &base, 1.5)) / (2.0 * h);
            let fs = (kl_to_prior(mu, sigma + h, &base, 1.5) - kl_to_prior(mu, sigma - h, &base, 1.5)) / (2.0 * h);
            assert!((dm - fm).abs() < 1e-7 && (ds - fs).abs() < 1e-7);
        }
    }

    #[test]
    fn temperature_schedule() {
        assert_eq!(temperature(0, 1000.0), 1.0);
        let i = (1000.0 * libm::log(10.0)) as u64;
        assert!((temperature(i, 1000.0) - 0.1).abs() < 1e-3);
    }

    fn small_model(base: BaseDistribution, sigma: f64, seed: u64) -> MeanFieldModel {
        let spec = NetworkSpec::mlp(1, 6, 2, 1, Activation::Elu).unwrap();
        let mut rng = seeded_rng(seed, 0);
        let mut mu = DenseWeights::init_fan_in(&spec, &mut rng);
        for l in mu.layers_mut() {
            l.bias_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
        let net = MeanFieldNet::from_weights(spec.clone(), &mu, sigma, false).unwrap();
        let ale = DenseWeights::init_fan_in(&spec, &mut rng);
        MeanFieldModel::new(net, spec, ale, base, 1.0).unwrap()
    }

    fn toy_data(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = seeded_rng(seed, 0);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ys = xs.iter().map(|x| libm::sin(3.0 * x) + 0.1 * rng.random_range(-1.0..1.0)).collect();
        (xs, ys)
    }

    #[test]
    fn degenerate_family_reduces_to_deterministic_nll() {
        let model = small_model(BaseDistribution::Gaussian, 1e-12, 1);
        let (xs, ys) = toy_data(20, 2);
        let noise = model.mean_net().sample(model.base(), &mut seeded_rng(0, 0)).1;
        let eval = elbo_with_noise(&model, &xs, &ys, &[noise], 0.0, 20).unwrap();
        let spec = model.mean_net().spec();
        let f = spec.forward_batch(&model.mean_net().mean_weights(), &xs, 20).unwrap().into_output();
        let sa = model.aleatoric_std(&xs).unwrap();
        let expect: f64 = (0..20).map(|i| gaussian_nll(ys[i], f[i], sa[i])).sum::<f64>() / 20.0;
        assert!((eval.loss - expect).abs() < 1e-9);
    }

    #[test]
    fn elbo_gradient_matches_frozen_noise_finite_differences() {
        for base in bases() {
            let model = small_model(base, 0.2, 3);
            let (xs, ys) = toy_data(12, 4);
            let mut rng = seeded_rng(5, 0);
            let noises: Vec<DenseWeights> = (0..3).map(|_| model.mean_net().sample(model.base(), &mut rng).1).collect();
            let eval = elbo_with_noise(&model, &xs, &ys, &noises, 0.7, 50).unwrap();
            let flat = model.mean_net().to_flat();
            let mask = model.mean_net().trainable_mask(true);
            let h = 1e-5;
            for k in (0..flat.len()).filter(|&k| mask[k]) {
                let f = |delta: f64| {
                    let mut m = model.clone();
                    let mut p = flat.clone();
                    p[k] += delta;
                    m.mean_net_mut().set_flat(&p).unwrap();
                    elbo_with_noise(&m, &xs, &ys, &noises, 0.7, 50).unwrap().loss
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let rel = (eval.grad[k] - fd).abs() / eval.grad[k].abs().max(fd.abs()).max(1e-3);
                assert!(rel <= 1e-5, "{:?} param {k}: {} vs {fd}", model.base().kind(), eval.grad[k]);
            }
        }
    }

    #[test]
    fn swap_base_preserves_parameters_and_round_trips() {
        let model = small_model(BaseDistribution::Gaussian, 0.1, 6);
        let swapped = model.swap_base(device()).unwrap();
        assert_eq!(swapped.mean_net(), model.mean_net());
        assert_eq!(swapped.base().kind(), crate::BaseKind::Device);
        assert_eq!(swapped.swap_base(BaseDistribution::Gaussian).unwrap(), model);
    }

    #[test]
    fn swap_base_refuses_unstandardized() {
        let model = small_model(BaseDistribution::Gaussian, 0.1, 6);
        let d = crate::distributions::DeviceBase::with_scale(DeviceDistParams::reference_mtj(), 1.0).unwrap();
        assert!(model.swap_base(BaseDistribution::Device(d)).is_err());
    }

    #[test]
    fn gaussian_to_gaussian_swap_gives_identical_draws() {
        let model = small_model(BaseDistribution::Gaussian, 0.1, 7);
        let swapped = model.swap_base(BaseDistribution::Gaussian).unwrap();
        let grid = [-0.5, 0.0, 0.5];
        let a = predictive_ensemble(&model, &grid, 10, &mut seeded_rng(1, 0)).unwrap();
        let b = predictive_ensemble(&swapped, &grid, 10, &mut seeded_rng(1, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_sigma_has_zero_epistemic_spread() {
        let model = small_model(device(), 0.0, 8);
        let s = predictive_ensemble(&model, &[-1.0, 0.3], 5, &mut seeded_rng(1, 0)).unwrap();
        assert!(s.epistemic_std.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_epistemic_std_matches_closed_form() {
        // y = (μ + σ z) x + b: σ_e(x) = σ|x|
        let spec = NetworkSpec::new(vec![1, 1], Activation::Identity, crate::nn::OutputTransform::None).unwrap();
        let layer = MeanFieldLayer::new(DenseLayer::from_parts(1, 1, vec![0.7], vec![0.2]).unwrap(), 0.3, false).unwrap();
        let net = MeanFieldNet::from_layers(spec.clone(), vec![layer]).unwrap();
        for base in bases() {
            let model = MeanFieldModel::new(net.clone(), spec.clone(), DenseWeights::zeros(&spec), base, 1.0).unwrap();
            let s = predictive_ensemble(&model, &[2.0], 20_000, &mut seeded_rng(2, 0)).unwrap();
            let expect = 0.3 * 2.0;
            // standard error of a sample std ≈ σ/√(2n) · √((κ − 1)/2)·√2; κ ≤ 3 here
            let se = expect * libm::sqrt(2.0 / (2.0 * 20_000.0));
            assert!((s.epistemic_std[0] - expect).abs() < 3.0 * se * 1.5, "{:?}: {}", model.base().kind(), s.epistemic_std[0]);
            assert!((s.mean[0] - 1.6).abs() < 3.0 * expect / libm::sqrt(20_000.0));
        }
    }

    #[test]
    fn mle_recovers_linear_slope() {
        let spec = NetworkSpec::new(vec![1, 1], Activation::Identity, crate::nn::OutputTransform::None).unwrap();
        let xs: Vec<f64> = (0..200).map(|i| -1.0 + 2.0 * i as f64 / 199.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let cfg = MleConfig { epochs: 300, batch_size: 20, learning_rate: 0.05, seed: 1 };
        let fit = train_mle(&spec, &spec, &xs, &ys, &cfg).unwrap();
        assert!((fit.mean.layers()[0].weights()[0] - 2.0).abs() < 1e-3);
        assert!(fit.mse_trace.last().unwrap() <= &fit.mse_trace[0]);
    }

    #[test]
    fn mle_fits_constant() {
        let spec = NetworkSpec::mlp(1, 4, 1, 1, Activation::Identity).unwrap();
        let xs: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let ys = vec![0.75; 100];
        let cfg = MleConfig { epochs: 3000, batch_size: 100, learning_rate: 0.01, seed: 2 };
        let fit = train_mle(&spec, &spec, &xs, &ys, &cfg).unwrap();
        let pred = spec.forward_batch(&fit.mean, &xs, 100).unwrap().into_output();
        assert!(pred.iter().all(|p| (p - 0.75).abs() < 1e-4), "{:?}", &pred[..3]);
    }

    #[test]
    fn mle_rejects_empty_data() {
        let spec = NetworkSpec::mlp(1, 4, 1, 1, Activation::Elu).unwrap();
        assert!(train_mle(&spec, &spec, &[], &[], &MleConfig::default()).is_err());
    }

    #[test]
    fn vi_shrinks_sigma_on_noiseless_data_and_is_deterministic() {
        let spec = NetworkSpec::mlp(1, 8, 1, 1, Activation::Elu).unwrap();
        let xs: Vec<f64> = (0..400).map(|i| -1.0 + 2.0 * i as f64 / 399.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| libm::sin(2.0 * x)).collect();
        let mle = train_mle(&spec, &spec, &xs, &ys, &MleConfig { epochs: 50, batch_size: 40, learning_rate: 0.01, seed: 3 }).unwrap();
        let net = MeanFieldNet::from_weights(spec.clone(), &mle.mean, 0.05, false).unwrap();
        let model = MeanFieldModel::new(net, spec.clone(), mle.aleatoric, BaseDistribution::Gaussian, 1.0).unwrap();
        // τ = 1 switches the prior off after a handful of steps
        let cfg = TrainConfig { epochs: 5, batch_size: 40, mc_samples: 2, learning_rate: 0.01, temper_scale: 1.0, seed: 4 };
        let (trained, trace) = train_vi(&model, &xs, &ys, &cfg).unwrap();
        let mean_sigma = |m: &MeanFieldModel| {
            let s = m.mean_net().stochastic_params();
            s.iter().map(|p| p.1).sum::<f64>() / s.len() as f64
        };
        assert!(mean_sigma(&trained) < 0.9 * mean_sigma(&model));
        let (again, trace2) = train_vi(&model, &xs, &ys, &cfg).unwrap();
        assert_eq!(trace, trace2);
        assert_eq!(again, trained);
        // biases untouched
        for (a, b) in trained.mean_net().layers().iter().zip(model.mean_net().layers()) {
            assert_eq!(a.mu().bias(), b.mu().bias());
        }
    }
}
