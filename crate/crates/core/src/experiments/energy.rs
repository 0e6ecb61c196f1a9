//! Matching a standard normal at `x = 0` by minimizing the energy distance
//! between the stochastic network output and the target, then comparing the
//! predictive distributions obtained after swapping the weight base.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::distributions::BaseDistribution;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseWeights, MeanFieldNet, NetworkSpec, Trace};
use crate::optim::Adam;
use crate::quadrature::{gauss_hermite, QuadratureRule};
use crate::seeded_rng;
use crate::stats;

use super::predictive_kl_1d;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(alloc::format!("energy distance needs alpha in (0, 2), got {alpha}")))
    }
}

/// `|d|^α` and its derivative in `d`.
fn pow_abs(d: f64, alpha: f64) -> (f64, f64) {
    let a = d.abs();
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let p = libm::pow(a, alpha - 1.0);
    (p * a, alpha * p * d.signum())
}

/// Energy-distance loss of network draws `f` against the target carried by
/// `target_rule` (a probability-weighted rule over the target):
/// `2·(1/n)Σᵢ Σₖ wₖ|fᵢ − yₖ|^α − 1/(n(n−1)) Σ_{i≠j} |fᵢ − fⱼ|^α`.
///
/// The target's own `E|y − y′|^α` is constant and omitted. Returns the loss
/// and its gradient with respect to each draw.
pub fn energy_distance_loss(outputs: &[f64], target_rule: &QuadratureRule, alpha: f64) -> Result<(f64, Vec<f64>)> {
    check_alpha(alpha)?;
    let n = outputs.len();
    if n < 2 {
        return Err(Error::InvalidArgument("energy distance needs at least two draws".into()));
    }
    let nf = n as f64;
    let mut grad = vec![0.0; n];
    let mut cross = 0.0;
    for (i, &f) in outputs.iter().enumerate() {
        for (&y, &w) in target_rule.abscissas().iter().zip(target_rule.weights()) {
            let (v, dv) = pow_abs(f - y, alpha);
            cross += w * v;
            grad[i] += 2.0 * w * dv / nf;
        }
    }
    let pair_scale = 1.0 / (nf * (nf - 1.0));
    let mut own = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (v, dv) = pow_abs(outputs[i] - outputs[j], alpha);
            own += 2.0 * v;
            grad[i] -= 2.0 * pair_scale * dv;
            grad[j] += 2.0 * pair_scale * dv;
        }
    }
    Ok((2.0 * cross / nf - own * pair_scale, grad))
}

/// Energy distance between two empirical samples (V-statistic form):
/// `2E|X − Y|^α − E|X − X′|^α − E|Y − Y′|^α`. Nonnegative, zero iff the
/// samples coincide as multisets.
pub fn energy_distance_empirical(xs: &[f64], ys: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let mean_pair = |a: &[f64], b: &[f64]| {
        a.iter().map(|&x| b.iter().map(|&y| pow_abs(x - y, alpha).0).sum::<f64>()).sum::<f64>() / (a.len() * b.len()) as f64
    };
    Ok(2.0 * mean_pair(xs, ys) - mean_pair(xs, xs) - mean_pair(ys, ys))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct EnergySweepConfig {
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub alpha: f64,
    /// Independent training replicates per cell.
    pub seeds: usize,
    pub seed: u64,
    /// Predictive samples per base per cell.
    pub mc_samples: usize,
    pub train_iterations: usize,
    /// Network draws per training step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Initial scale of every variational parameter.
    pub init_sigma: f64,
    /// Whether biases carry noise as well as kernels.
    pub stochastic_biases: bool,
    /// Gauss–Hermite order of the cross term.
    pub hermite_order: usize,
    /// Null replicates for the estimator noise floor.
    pub floor_replicates: usize,
}

impl Default for EnergySweepConfig {
    fn default() -> Self {
        Self {
            widths: vec![2, 4, 8, 16, 32],
            depths: vec![1, 2, 4],
            alpha: 1.5,
            seeds: 5,
            seed: 0,
            mc_samples: 10_000,
            train_iterations: 1500,
            batch_size: 64,
            learning_rate: 0.01,
            init_sigma: 0.1,
            stochastic_biases: true,
            hermite_order: 32,
            floor_replicates: 50,
        }
    }
}

impl EnergySweepConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.widths.is_empty() || self.depths.is_empty() || self.widths.contains(&0) || self.depths.contains(&0) {
            return Err(Error::InvalidArgument("widths and depths must be non-empty and positive".into()));
        }
        if self.seeds == 0 || self.train_iterations == 0 || self.batch_size < 2 || self.mc_samples < 1000 {
            return Err(Error::InvalidArgument(
                "need ≥ 1 seed, ≥ 1 iteration, ≥ 2 draws per step and ≥ 1000 predictive samples".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.init_sigma > 0.0) || self.hermite_order == 0 {
            return Err(Error::InvalidArgument("learning rate, init sigma and Hermite order must be positive".into()));
        }
        if self.floor_replicates < 2 {
            return Err(Error::InvalidArgument("noise floor needs at least two replicates".into()));
        }
        Ok(())
    }

    /// Random stream of one cell replicate, independent of every other cell.
    pub fn cell_rng(&self, width: usize, depth: usize, replicate: usize) -> crate::Rng {
        let stream = ((replicate as u64) << 40) | ((width as u64) << 20) | depth as u64;
        seeded_rng(self.seed, stream)
    }
}

/// `1 → width × depth → 1` ELU network with variational kernels (and biases
/// when `stochastic_biases`), means from fan-in initialization (biases
/// included), scales `init_sigma`.
pub fn init_energy_net<R: Rng + ?Sized>(
    width: usize,
    depth: usize,
    init_sigma: f64,
    stochastic_biases: bool,
    rng: &mut R,
) -> Result<MeanFieldNet> {
    let spec = NetworkSpec::mlp(1, width, depth, 1, Activation::Elu)?;
    let mut mu = DenseWeights::init_fan_in(&spec, rng);
    for layer in mu.layers_mut() {
        let limit = libm::sqrt(3.0 / layer.inputs() as f64);
        layer.bias_mut().iter_mut().for_each(|b| *b = rng.random_range(-limit..limit));
    }
    MeanFieldNet::from_weights(spec, &mu, init_sigma, stochastic_biases)
}

/// Trains `net` (Gaussian base) so its output at `x = 0` matches the standard
/// normal in energy distance. Returns the per-step loss.
pub fn train_energy_net<R: Rng + ?Sized>(net: &mut MeanFieldNet, cfg: &EnergySweepConfig, rng: &mut R) -> Result<Vec<f64>> {
    let rule = gauss_hermite(cfg.hermite_order)?;
    let spec = net.spec().clone();
    let base = BaseDistribution::Gaussian;
    let mut flat = net.to_flat();
    let mut adam = Adam::new(cfg.learning_rate, flat.len());
    let mut trace = Vec::with_capacity(cfg.train_iterations);
    for iteration in 0..cfg.train_iterations {
        let mut draws: Vec<(DenseWeights, DenseWeights, Trace)> = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let (theta, z) = net.sample(&base, rng);
            let t = spec.forward_batch(&theta, &[0.0], 1)?;
            draws.push((theta, z, t));
        }
        let outputs: Vec<f64> = draws.iter().map(|d| d.2.output()[0]).collect();
        let (loss, dl_df) = energy_distance_loss(&outputs, &rule, cfg.alpha)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration, loss });
        }
        trace.push(loss);
        let mut grad = vec![0.0; flat.len()];
        for ((theta, z, t), &g_out) in draws.iter().zip(&dl_df) {
            let (g_theta, _) = spec.backward(theta, t, &[g_out])?;
            let (gm, gs) = net.reparam_grads(&g_theta, z);
            for (g, v) in grad.iter_mut().zip(gm.to_flat().into_iter().chain(gs.to_flat())) {
                *g += v;
            }
        }
        adam.step(&mut flat, &grad);
        net.set_flat(&flat)?;
    }
    Ok(trace)
}

/// `n` samples of the network output at `x = 0`, one fresh weight draw each.
pub fn predictive_at_zero<R: Rng + ?Sized>(net: &MeanFieldNet, base: &BaseDistribution, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let (mut theta, mut z) = net.sample(base, rng);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            net.sample_into(base, rng, &mut theta, &mut z);
        }
        out.push(net.spec().forward(&theta, &[0.0])?[0]);
    }
    Ok(out)
}

/// `n` network outputs at `x = 0` per base, where draw `k` of every base
/// pushes the same per-weight uniforms through that base's quantile map.
pub fn coupled_predictive_at_zero<R: Rng + ?Sized>(net: &MeanFieldNet, bases: &[&BaseDistribution], n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let mut u = net.mean_weights();
    let mut theta = u.clone();
    let mut out = vec![Vec::with_capacity(n); bases.len()];
    for _ in 0..n {
        net.draw_uniforms(rng, &mut u);
        for (base, samples) in bases.iter().zip(&mut out) {
            net.theta_from_uniforms(base, &u, &mut theta);
            samples.push(net.spec().forward(&theta, &[0.0])?[0]);
        }
    }
    Ok(out)
}

/// A base the trained Gaussian network is evaluated under after training.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapBase {
    pub label: String,
    pub base: BaseDistribution,
}

/// KL estimate for one swapped base in one trained cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRow {
    pub width: usize,
    pub depth: usize,
    pub replicate: usize,
    /// Swap label, or `"gaussian"` for an independent Gaussian-weight redraw.
    pub base: String,
    /// `KL(swapped predictive ‖ Gaussian predictive)`.
    pub kl: f64,
    pub final_loss: f64,
}

/// One trained cell replicate: KL rows and the predictive samples behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyCell {
    pub rows: Vec<EnergyRow>,
    /// `("gaussian", reference)` first, then one coupled sample set per swap.
    pub predictive: Vec<(String, Vec<f64>)>,
}

/// Trains one cell replicate and evaluates every swap. Swapped predictives
/// are coupled to the Gaussian reference through shared uniforms; an
/// independent Gaussian redraw is reported under the label `"gaussian"`.
pub fn run_energy_cell(cfg: &EnergySweepConfig, width: usize, depth: usize, replicate: usize, swaps: &[SwapBase]) -> Result<EnergyCell> {
    let mut rng = cfg.cell_rng(width, depth, replicate);
    let mut net = init_energy_net(width, depth, cfg.init_sigma, cfg.stochastic_biases, &mut rng)?;
    let trace = train_energy_net(&mut net, cfg, &mut rng)?;
    // average over the last tenth of training smooths the stochastic loss
    let tail = &trace[trace.len() - (trace.len() / 10).max(1)..];
    let final_loss = stats::mean(tail);

    let gaussian = BaseDistribution::Gaussian;
    let bases: Vec<&BaseDistribution> = core::iter::once(&gaussian).chain(swaps.iter().map(|s| &s.base)).collect();
    let coupled = coupled_predictive_at_zero(&net, &bases, cfg.mc_samples, &mut rng)?;
    let reference = &coupled[0];
    let row = |base: &str, kl| EnergyRow { width, depth, replicate, base: base.into(), kl, final_loss };
    let mut rows = Vec::with_capacity(swaps.len() + 1);
    let redraw = predictive_at_zero(&net, &gaussian, cfg.mc_samples, &mut rng)?;
    rows.push(row("gaussian", predictive_kl_1d(&redraw, reference)?));
    for (swap, samples) in swaps.iter().zip(&coupled[1..]) {
        rows.push(row(&swap.label, predictive_kl_1d(samples, reference)?));
    }
    let labels = core::iter::once(String::from("gaussian")).chain(swaps.iter().map(|s| s.label.clone()));
    Ok(EnergyCell { rows, predictive: labels.zip(coupled).collect() })
}

/// Null distribution of the histogram KL estimator between two independent
/// standard normal samples of the sweep's predictive size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseFloor {
    pub mean: f64,
    pub std: f64,
    /// `mean + 3·std/√seeds`: the level a seed-averaged KL of two identical
    /// distributions stays below.
    pub floor: f64,
}

pub fn estimator_noise_floor(cfg: &EnergySweepConfig) -> Result<NoiseFloor> {
    let mut rng = seeded_rng(cfg.seed, u64::MAX);
    let mut kls = Vec::with_capacity(cfg.floor_replicates);
    for _ in 0..cfg.floor_replicates {
        let a: Vec<f64> = (0..cfg.mc_samples).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..cfg.mc_samples).map(|_| rng.sample(StandardNormal)).collect();
        kls.push(predictive_kl_1d(&a, &b)?);
    }
    let mean = stats::mean(&kls);
    let std = stats::std_dev(&kls);
    Ok(NoiseFloor { mean, std, floor: mean + 3.0 * std / libm::sqrt(cfg.seeds as f64) })
}

/// Seed-averaged KL of one `(width, depth, base)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySummary {
    pub width: usize,
    pub depth: usize,
    pub base: String,
    pub mean_kl: f64,
    pub std_kl: f64,
}

/// Averages rows over replicates, in the order cells first appear.
pub fn summarize_energy(rows: &[EnergyRow]) -> Vec<EnergySummary> {
    let mut keys: Vec<(usize, usize, &str)> = Vec::new();
    for r in rows {
        let key = (r.width, r.depth, r.base.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(width, depth, base)| {
            let kls: Vec<f64> = rows.iter().filter(|r| r.width == width && r.depth == depth && r.base == base).map(|r| r.kl).collect();
            let std_kl = if kls.len() > 1 { stats::std_dev(&kls) } else { 0.0 };
            EnergySummary { width, depth, base: base.into(), mean_kl: stats::mean(&kls), std_kl }
        })
        .collect()
}

/// Every cell in deterministic order: depth, then width, then replicate.
pub fn sweep_cells(cfg: &EnergySweepConfig) -> Vec<(usize, usize, usize)> {
    let mut cells = Vec::new();
    for &depth in &cfg.depths {
        for &width in &cfg.widths {
            for replicate in 0..cfg.seeds {
                cells.push((width, depth, replicate));
            }
        }
    }
    cells
}

/// Runs the whole sweep sequentially.
pub fn run_energy_sweep(cfg: &EnergySweepConfig, swaps: &[SwapBase]) -> Result<Vec<EnergyRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (width, depth, replicate) in sweep_cells(cfg) {
        rows.extend(run_energy_cell(cfg, width, depth, replicate, swaps)?.rows);
    }
    Ok(rows)
}
