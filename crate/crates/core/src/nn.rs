//! Dense feed-forward networks with hand-written reverse-mode gradients, and
//! mean-field layers whose weights are reparameterized as `θ = σ·z + μ`.
//!
//! Inputs are processed in row-major batches; a forward pass keeps every
//! layer's pre- and post-activations so the backward pass is a single sweep.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::distr::Open01;

use crate::distributions::BaseDistribution;
use crate::error::{Error, Result};
use crate::special::{sigmoid, softplus, softplus_inverse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum Activation {
    Elu,
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    libm::expm1(x)
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at pre-activation `x`, given `y = apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum OutputTransform {
    None,
    Sigmoid,
}

impl OutputTransform {
    fn activation(self) -> Activation {
        match self {
            OutputTransform::None => Activation::Identity,
            OutputTransform::Sigmoid => Activation::Sigmoid,
        }
    }
}

/// Topology of a dense network: the activation is applied after every hidden
/// layer, the output transform after the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    layer_widths: Vec<usize>,
    activation: Activation,
    output_transform: OutputTransform,
}

impl NetworkSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, output_transform: OutputTransform) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidArgument("a network needs input and output widths".into()));
        }
        if layer_widths.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(Self { layer_widths, activation, output_transform })
    }

    /// `inputs → width × depth hidden layers → outputs`.
    pub fn mlp(inputs: usize, width: usize, depth: usize, outputs: usize, activation: Activation) -> Result<Self> {
        let mut widths = vec![inputs];
        widths.extend(core::iter::repeat(width).take(depth));
        widths.push(outputs);
        Self::new(widths, activation, OutputTransform::None)
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_transform(&self) -> OutputTransform {
        self.output_transform
    }

    pub fn inputs(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn outputs(&self) -> usize {
        *self.layer_widths.last().expect("at least two widths")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    fn layer_activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_transform.activation()
        } else {
            self.activation
        }
    }

    fn check_weights(&self, weights: &DenseWeights) -> Result<()> {
        if weights.layers.len() != self.num_layers() {
            return Err(Error::Shape { expected: self.num_layers(), got: weights.layers.len() });
        }
        for (l, layer) in weights.layers.iter().enumerate() {
            if layer.inputs != self.layer_widths[l] {
                return Err(Error::Shape { expected: self.layer_widths[l], got: layer.inputs });
            }
            if layer.outputs != self.layer_widths[l + 1] {
                return Err(Error::Shape { expected: self.layer_widths[l + 1], got: layer.outputs });
            }
        }
        Ok(())
    }

    /// Output for a single input vector.
    pub fn forward(&self, weights: &DenseWeights, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(weights, x, 1)?.into_output())
    }

    /// Forward pass over `batch` inputs stored row-major in `inputs`.
    pub fn forward_batch(&self, weights: &DenseWeights, inputs: &[f64], batch: usize) -> Result<Trace> {
        self.check_weights(weights)?;
        if inputs.len() != batch * self.inputs() {
            return Err(Error::Shape { expected: batch * self.inputs(), got: inputs.len() });
        }
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut post = Vec::with_capacity(self.num_layers() + 1);
        post.push(inputs.to_vec());
        for (l, layer) in weights.layers.iter().enumerate() {
            let act = self.layer_activation(l);
            let a = post.last().expect("input row present");
            let mut z = vec![0.0; batch * layer.outputs];
            for b in 0..batch {
                let row = &a[b * layer.inputs..(b + 1) * layer.inputs];
                for o in 0..layer.outputs {
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    z[b * layer.outputs + o] = layer.bias[o] + w.iter().zip(row).map(|(w, a)| w * a).sum::<f64>();
                }
            }
            let y = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            post.push(y);
        }
        Ok(Trace { batch, pre, post })
    }

    /// Reverse sweep: gradients of a scalar loss with respect to every weight
    /// and bias and to the inputs, given `upstream = ∂loss/∂output`.
    pub fn backward(&self, weights: &DenseWeights, trace: &Trace, upstream: &[f64]) -> Result<(DenseWeights, Vec<f64>)> {
        self.check_weights(weights)?;
        let batch = trace.batch;
        if upstream.len() != batch * self.outputs() {
            return Err(Error::Shape { expected: batch * self.outputs(), got: upstream.len() });
        }
        let mut grads = DenseWeights::zeros(self);
        let mut g = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let layer = &weights.layers[l];
            let act = self.layer_activation(l);
            let (z, y, a) = (&trace.pre[l], &trace.post[l + 1], &trace.post[l]);
            for (k, gk) in g.iter_mut().enumerate() {
                *gk *= act.derivative(z[k], y[k]);
            }
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { stage: "backward pass", index: k });
            }
            let gl = &mut grads.layers[l];
            let mut g_prev = vec![0.0; batch * layer.inputs];
            for b in 0..batch {
                let row = &a[b * layer.inputs..(b + 1) * layer.inputs];
                let prev = &mut g_prev[b * layer.inputs..(b + 1) * layer.inputs];
                for o in 0..layer.outputs {
                    let d = g[b * layer.outputs + o];
                    if d == 0.0 {
                        continue;
                    }
                    gl.bias[o] += d;
                    let gw = &mut gl.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for i in 0..layer.inputs {
                        gw[i] += d * row[i];
                        prev[i] += d * w[i];
                    }
                }
            }
            g = g_prev;
        }
        Ok((grads, g))
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    batch: usize,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Trace {
    /// Network outputs, row-major `batch × outputs`.
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("trace has an output layer")
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.post.pop().expect("trace has an output layer")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// One affine layer: `outputs × inputs` row-major kernel plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    pub fn from_parts(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs {
            return Err(Error::Shape { expected: inputs * outputs, got: weights.len() });
        }
        if bias.len() != outputs {
            return Err(Error::Shape { expected: outputs, got: bias.len() });
        }
        Ok(Self { inputs, outputs, weights, bias })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

}

/// Concrete weights of a whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights {
    layers: Vec<DenseLayer>,
}

impl DenseWeights {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let w = spec.layer_widths();
        Self { layers: (0..spec.num_layers()).map(|l| DenseLayer::zeros(w[l], w[l + 1])).collect() }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Self {
        Self { layers }
    }

    /// Kernels uniform in `±√(3 / fan_in)` (unit-variance-preserving fan-in
    /// scaling), biases zero.
    pub fn init_fan_in<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let mut w = Self::zeros(spec);
        for layer in &mut w.layers {
            let limit = libm::sqrt(3.0 / layer.inputs as f64);
            for v in &mut layer.weights {
                *v = rng.random_range(-limit..limit);
            }
        }
        w
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in layer order, kernel before bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`DenseWeights::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape { expected: self.param_count(), got: flat.len() });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &DenseWeights, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += scale * y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += scale * y);
        }
    }
}

/// Mean-field Gaussian-style layer: every kernel entry (and optionally every
/// bias) is `θ = σ·z + μ` with `σ = softplus(σ_raw)` and `z` from the base.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldLayer {
    mu: DenseLayer,
    sigma_raw: DenseLayer,
    bias_stochastic: bool,
    // softplus(σ_raw) and sigmoid(σ_raw), refreshed whenever σ_raw changes
    scale: DenseLayer,
    dscale: DenseLayer,
}

impl MeanFieldLayer {
    /// Shift `mu`, every scale set to `sigma` (zero allowed).
    pub fn new(mu: DenseLayer, sigma: f64, bias_stochastic: bool) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("sigma must be nonnegative, got {sigma}")));
        }
        let raw = softplus_inverse(sigma);
        let mut sigma_raw = DenseLayer::zeros(mu.inputs, mu.outputs);
        sigma_raw.weights.iter_mut().for_each(|v| *v = raw);
        let bias_raw = if bias_stochastic { raw } else { f64::NEG_INFINITY };
        sigma_raw.bias.iter_mut().for_each(|v| *v = bias_raw);
        Ok(Self::assemble(mu, sigma_raw, bias_stochastic))
    }

    fn assemble(mu: DenseLayer, sigma_raw: DenseLayer, bias_stochastic: bool) -> Self {
        let scale = sigma_raw.clone();
        let dscale = sigma_raw.clone();
        let mut layer = Self { mu, sigma_raw, bias_stochastic, scale, dscale };
        layer.refresh_scales();
        layer
    }

    fn refresh_scales(&mut self) {
        let pairs = self.sigma_raw.weights.iter().zip(self.scale.weights.iter_mut().zip(self.dscale.weights.iter_mut()));
        let bias = self.sigma_raw.bias.iter().zip(self.scale.bias.iter_mut().zip(self.dscale.bias.iter_mut()));
        for (&r, (s, d)) in pairs.chain(bias) {
            *s = softplus(r);
            *d = sigmoid(r);
        }
    }

    pub fn from_parts(mu: DenseLayer, sigma_raw: DenseLayer, bias_stochastic: bool) -> Result<Self> {
        if mu.inputs != sigma_raw.inputs || mu.outputs != sigma_raw.outputs {
            return Err(Error::Shape { expected: mu.weights.len(), got: sigma_raw.weights.len() });
        }
        let mut sigma_raw = sigma_raw;
        if !bias_stochastic {
            sigma_raw.bias.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        }
        Ok(Self::assemble(mu, sigma_raw, bias_stochastic))
    }

    pub fn mu(&self) -> &DenseLayer {
        &self.mu
    }

    pub fn mu_mut(&mut self) -> &mut DenseLayer {
        &mut self.mu
    }

    /// Unconstrained scales; deterministic biases hold `−∞` (σ = 0).
    pub fn sigma_raw(&self) -> &DenseLayer {
        &self.sigma_raw
    }

    pub fn bias_stochastic(&self) -> bool {
        self.bias_stochastic
    }

    pub fn sigma(&self) -> &DenseLayer {
        &self.scale
    }

    /// Draws `z` from `base` for every stochastic entry (kernel first, then
    /// bias) and returns `(θ, z)`.
    pub fn sample<R: Rng + ?Sized>(&self, base: &BaseDistribution, rng: &mut R) -> (DenseLayer, DenseLayer) {
        let mut z = DenseLayer::zeros(self.mu.inputs, self.mu.outputs);
        let mut theta = self.mu.clone();
        self.sample_into(base, rng, &mut theta, &mut z);
        (theta, z)
    }

    /// As [`MeanFieldLayer::sample`], writing into preallocated buffers of the
    /// layer's shape.
    pub fn sample_into<R: Rng + ?Sized>(&self, base: &BaseDistribution, rng: &mut R, theta: &mut DenseLayer, z: &mut DenseLayer) {
        for (((t, zi), &m), &s) in theta.weights.iter_mut().zip(z.weights.iter_mut()).zip(&self.mu.weights).zip(&self.scale.weights) {
            *zi = base.sample(rng);
            *t = m + s * *zi;
        }
        if self.bias_stochastic {
            for (((t, zi), &m), &s) in theta.bias.iter_mut().zip(z.bias.iter_mut()).zip(&self.mu.bias).zip(&self.scale.bias) {
                *zi = base.sample(rng);
                *t = m + s * *zi;
            }
        } else {
            theta.bias.copy_from_slice(&self.mu.bias);
            z.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `θ` for noise `z = base.from_uniform(u)`, with `u` holding one open-unit
    /// uniform per stochastic entry.
    pub fn theta_from_uniforms(&self, base: &BaseDistribution, u: &DenseLayer, theta: &mut DenseLayer) {
        for (((t, &ui), &m), &s) in theta.weights.iter_mut().zip(&u.weights).zip(&self.mu.weights).zip(&self.scale.weights) {
            *t = m + s * base.from_uniform(ui);
        }
        if self.bias_stochastic {
            for (((t, &ui), &m), &s) in theta.bias.iter_mut().zip(&u.bias).zip(&self.mu.bias).zip(&self.scale.bias) {
                *t = m + s * base.from_uniform(ui);
            }
        } else {
            theta.bias.copy_from_slice(&self.mu.bias);
        }
    }

    /// `θ = softplus(σ_raw)·z + μ` for given noise.
    pub fn theta(&self, z: &DenseLayer) -> DenseLayer {
        let mut theta = self.mu.clone();
        for ((t, &s), &zi) in theta.weights.iter_mut().zip(&self.scale.weights).zip(&z.weights) {
            *t += s * zi;
        }
        if self.bias_stochastic {
            for ((t, &s), &zi) in theta.bias.iter_mut().zip(&self.scale.bias).zip(&z.bias) {
                *t += s * zi;
            }
        }
        theta
    }

    /// Chain rule through the reparameterization: `∂/∂μ = ∂/∂θ` and
    /// `∂/∂σ_raw = ∂/∂θ · z · sigmoid(σ_raw)`. Deterministic biases get zero
    /// scale gradient.
    pub fn reparam_grads(&self, grad_theta: &DenseLayer, z: &DenseLayer) -> (DenseLayer, DenseLayer) {
        let mut g_raw = DenseLayer::zeros(self.mu.inputs, self.mu.outputs);
        for (((g, &gt), &zi), &d) in g_raw.weights.iter_mut().zip(&grad_theta.weights).zip(&z.weights).zip(&self.dscale.weights) {
            *g = gt * zi * d;
        }
        if self.bias_stochastic {
            for (((g, &gt), &zi), &d) in g_raw.bias.iter_mut().zip(&grad_theta.bias).zip(&z.bias).zip(&self.dscale.bias) {
                *g = gt * zi * d;
            }
        }
        (grad_theta.clone(), g_raw)
    }
}

/// A network whose every layer is a [`MeanFieldLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldNet {
    spec: NetworkSpec,
    layers: Vec<MeanFieldLayer>,
}

impl MeanFieldNet {
    /// Mean-field net centred on `mu` with every scale set to `sigma`.
    pub fn from_weights(spec: NetworkSpec, mu: &DenseWeights, sigma: f64, bias_stochastic: bool) -> Result<Self> {
        spec.check_weights(mu)?;
        let layers = mu.layers.iter().map(|l| MeanFieldLayer::new(l.clone(), sigma, bias_stochastic)).collect::<Result<_>>()?;
        Ok(Self { spec, layers })
    }

    pub fn from_layers(spec: NetworkSpec, layers: Vec<MeanFieldLayer>) -> Result<Self> {
        let mu = DenseWeights { layers: layers.iter().map(|l| l.mu.clone()).collect() };
        spec.check_weights(&mu)?;
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[MeanFieldLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [MeanFieldLayer] {
        &mut self.layers
    }

    pub fn mean_weights(&self) -> DenseWeights {
        DenseWeights { layers: self.layers.iter().map(|l| l.mu.clone()).collect() }
    }

    /// One draw of all weights: `(θ, z)`, layer by layer.
    pub fn sample<R: Rng + ?Sized>(&self, base: &BaseDistribution, rng: &mut R) -> (DenseWeights, DenseWeights) {
        let (theta, z) = self.layers.iter().map(|l| l.sample(base, rng)).unzip();
        (DenseWeights { layers: theta }, DenseWeights { layers: z })
    }

    /// As [`MeanFieldNet::sample`], reusing buffers shaped like the network.
    pub fn sample_into<R: Rng + ?Sized>(&self, base: &BaseDistribution, rng: &mut R, theta: &mut DenseWeights, z: &mut DenseWeights) {
        for ((l, t), zl) in self.layers.iter().zip(&mut theta.layers).zip(&mut z.layers) {
            l.sample_into(base, rng, t, zl);
        }
    }

    /// Fills `u` (shaped like the network) with open-unit uniforms, kernel
    /// then bias per layer, skipping deterministic biases.
    pub fn draw_uniforms<R: Rng + ?Sized>(&self, rng: &mut R, u: &mut DenseWeights) {
        for (l, ul) in self.layers.iter().zip(&mut u.layers) {
            ul.weights.iter_mut().for_each(|v| *v = rng.sample(Open01));
            if l.bias_stochastic {
                ul.bias.iter_mut().for_each(|v| *v = rng.sample(Open01));
            }
        }
    }

    /// Weights for shared uniforms `u` pushed through `base`; the same `u`
    /// under two bases gives coupled draws.
    pub fn theta_from_uniforms(&self, base: &BaseDistribution, u: &DenseWeights, theta: &mut DenseWeights) {
        for ((l, ul), t) in self.layers.iter().zip(&u.layers).zip(&mut theta.layers) {
            l.theta_from_uniforms(base, ul, t);
        }
    }

    pub fn theta(&self, z: &DenseWeights) -> DenseWeights {
        DenseWeights { layers: self.layers.iter().zip(&z.layers).map(|(l, z)| l.theta(z)).collect() }
    }

    /// `(∂/∂μ, ∂/∂σ_raw)` for every layer from `∂/∂θ` at noise `z`.
    pub fn reparam_grads(&self, grad_theta: &DenseWeights, z: &DenseWeights) -> (DenseWeights, DenseWeights) {
        let (gm, gs) = self
            .layers
            .iter()
            .zip(&grad_theta.layers)
            .zip(&z.layers)
            .map(|((l, g), z)| l.reparam_grads(g, z))
            .unzip();
        (DenseWeights { layers: gm }, DenseWeights { layers: gs })
    }

    pub fn sigma_raw_weights(&self) -> DenseWeights {
        DenseWeights { layers: self.layers.iter().map(|l| l.sigma_raw.clone()).collect() }
    }

    /// `[μ…, σ_raw…]`, each half in [`DenseWeights::to_flat`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.mean_weights().to_flat();
        out.extend(self.sigma_raw_weights().to_flat());
        out
    }

    /// Inverse of [`MeanFieldNet::to_flat`]. Deterministic biases keep σ = 0
    /// whatever the flat vector holds.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let half = self.mean_weights().param_count();
        if flat.len() != 2 * half {
            return Err(Error::Shape { expected: 2 * half, got: flat.len() });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.mu.weights.len();
            let nb = l.mu.bias.len();
            l.mu.weights.copy_from_slice(&flat[k..k + nw]);
            l.mu.bias.copy_from_slice(&flat[k + nw..k + nw + nb]);
            l.sigma_raw.weights.copy_from_slice(&flat[half + k..half + k + nw]);
            if l.bias_stochastic {
                l.sigma_raw.bias.copy_from_slice(&flat[half + k + nw..half + k + nw + nb]);
            }
            l.refresh_scales();
            k += nw + nb;
        }
        Ok(())
    }

    /// Which entries of [`MeanFieldNet::to_flat`] an optimizer may move:
    /// every kernel `μ` and `σ_raw`, bias `μ` when `train_bias_mean`, and bias
    /// `σ_raw` for stochastic biases.
    pub fn trainable_mask(&self, train_bias_mean: bool) -> Vec<bool> {
        let mut mu = Vec::new();
        let mut raw = Vec::new();
        for l in &self.layers {
            mu.extend(core::iter::repeat(true).take(l.mu.weights.len()));
            mu.extend(core::iter::repeat(train_bias_mean).take(l.mu.bias.len()));
            raw.extend(core::iter::repeat(true).take(l.mu.weights.len()));
            raw.extend(core::iter::repeat(l.bias_stochastic).take(l.mu.bias.len()));
        }
        mu.extend(raw);
        mu
    }

    /// Every variational scale `(μ, σ)` pair that carries noise, in sampling order.
    pub fn stochastic_params(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.mu.weights.iter().copied().zip(l.scale.weights.iter().copied()));
            if l.bias_stochastic {
                out.extend(l.mu.bias.iter().copied().zip(l.scale.bias.iter().copied()));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DeviceDistParams;
    use crate::seeded_rng;
    use crate::stats;

    fn random_weights(spec: &NetworkSpec, seed: u64) -> DenseWeights {
        let mut rng = seeded_rng(seed, 0);
        let mut w = DenseWeights::init_fan_in(spec, &mut rng);
        for l in w.layers_mut() {
            l.bias_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        w
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::new(vec![3], Activation::Elu, OutputTransform::None).is_err());
        assert!(NetworkSpec::new(vec![3, 0, 1], Activation::Elu, OutputTransform::None).is_err());
        let s = NetworkSpec::mlp(1, 16, 4, 1, Activation::Elu).unwrap();
        assert_eq!(s.layer_widths(), &[1, 16, 16, 16, 16, 1]);
    }

    #[test]
    fn identity_network_is_identity() {
        let spec = NetworkSpec::new(vec![3, 3, 3], Activation::Identity, OutputTransform::None).unwrap();
        let mut w = DenseWeights::zeros(&spec);
        for l in w.layers_mut() {
            for i in 0..3 {
                l.weights_mut()[i * 3 + i] = 1.0;
            }
        }
        let x = [0.3, -1.2, 7.0];
        assert_eq!(spec.forward(&w, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn matches_hand_rolled_forward() {
        let spec = NetworkSpec::mlp(1, 16, 1, 1, Activation::Elu).unwrap();
        let w = random_weights(&spec, 3);
        let (l0, l1) = (&w.layers()[0], &w.layers()[1]);
        let x = 0.5;
        let mut out = l1.bias()[0];
        for j in 0..16 {
            let z = l0.weights()[j] * x + l0.bias()[j];
            let h = if z > 0.0 { z } else { libm::exp(z) - 1.0 };
            out += l1.weights()[j] * h;
        }
        let got = spec.forward(&w, &[x]).unwrap()[0];
        assert!((got - out).abs() < 1e-12);
    }

    #[test]
    fn relu_net_without_bias_is_homogeneous() {
        let spec = NetworkSpec::mlp(2, 8, 3, 2, Activation::Relu).unwrap();
        let mut w = random_weights(&spec, 4);
        w.layers_mut().iter_mut().for_each(|l| l.bias_mut().iter_mut().for_each(|b| *b = 0.0));
        let x = [0.7, -0.4];
        let f = spec.forward(&w, &x).unwrap();
        let g = spec.forward(&w, &[2.5 * x[0], 2.5 * x[1]]).unwrap();
        for (a, b) in f.iter().zip(&g) {
            assert!((2.5 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_forward_equals_rowwise() {
        let spec = NetworkSpec::mlp(2, 5, 2, 3, Activation::Elu).unwrap();
        let w = random_weights(&spec, 5);
        let xs = [0.1, 0.2, -0.3, 0.9, 1.5, -2.0];
        let batch = spec.forward_batch(&w, &xs, 3).unwrap();
        for b in 0..3 {
            let row = spec.forward(&w, &xs[2 * b..2 * b + 2]).unwrap();
            assert_eq!(&batch.output()[3 * b..3 * b + 3], row.as_slice());
        }
    }

    #[test]
    fn shape_errors() {
        let spec = NetworkSpec::mlp(2, 4, 1, 1, Activation::Elu).unwrap();
        let w = DenseWeights::zeros(&spec);
        assert!(spec.forward(&w, &[1.0]).is_err());
        let other = NetworkSpec::mlp(3, 4, 1, 1, Activation::Elu).unwrap();
        assert!(other.forward(&w, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let spec = NetworkSpec::mlp(1, 4, 2, 1, Activation::Elu).unwrap();
        let w = random_weights(&spec, 6);
        let t = spec.forward_batch(&w, &[0.3], 1).unwrap();
        let (g, gx) = spec.backward(&w, &t, &[0.0]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert_eq!(gx, vec![0.0]);
    }

    /// Half squared norm of the outputs over a batch.
    fn loss(spec: &NetworkSpec, w: &DenseWeights, xs: &[f64], batch: usize) -> f64 {
        0.5 * spec.forward_batch(w, xs, batch).unwrap().output().iter().map(|v| v * v).sum::<f64>()
    }

    pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-5;
        for act in [Activation::Elu, Activation::Relu, Activation::Identity, Activation::Sigmoid] {
            for out in [OutputTransform::None, OutputTransform::Sigmoid] {
                let spec = NetworkSpec::new(vec![1, 8, 8, 1], act, out).unwrap();
                let w = random_weights(&spec, 7);
                let xs = [0.4, -0.8, 1.3];
                let t = spec.forward_batch(&w, &xs, 3).unwrap();
                let (g, gx) = spec.backward(&w, &t, &t.output().to_vec()).unwrap();
                let flat = w.to_flat();
                for (k, &gk) in g.to_flat().iter().enumerate() {
                    let (mut wp, mut wm) = (w.clone(), w.clone());
                    let (mut fp, mut fm) = (flat.clone(), flat.clone());
                    fp[k] += h;
                    fm[k] -= h;
                    wp.set_flat(&fp).unwrap();
                    wm.set_flat(&fm).unwrap();
                    let fd = (loss(&spec, &wp, &xs, 3) - loss(&spec, &wm, &xs, 3)) / (2.0 * h);
                    assert!(rel_err(gk, fd) <= 1e-5, "{act:?}/{out:?} param {k}: {gk} vs {fd}");
                }
                for i in 0..3 {
                    let (mut xp, mut xm) = (xs, xs);
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (loss(&spec, &w, &xp, 3) - loss(&spec, &w, &xm, 3)) / (2.0 * h);
                    assert!(rel_err(gx[i], fd) <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn elu_is_c1_at_zero() {
        let eps = 1e-9;
        let a = Activation::Elu;
        let left = a.derivative(-eps, a.apply(-eps));
        let right = a.derivative(eps, a.apply(eps));
        assert!((left - right).abs() < 1e-8);
    }

    #[test]
    fn reparam_derivatives() {
        let mu = DenseLayer::from_parts(2, 1, vec![0.3, -0.2], vec![0.1]).unwrap();
        let layer = MeanFieldLayer::new(mu, 0.5, true).unwrap();
        let z = DenseLayer::from_parts(2, 1, vec![1.5, -0.7], vec![0.2]).unwrap();
        let ones = DenseLayer::from_parts(2, 1, vec![1.0, 1.0], vec![1.0]).unwrap();
        let (gm, gs) = layer.reparam_grads(&ones, &z);
        assert_eq!(gm, ones);
        // ∂θ/∂σ = z, times dσ/dσ_raw
        let dsig = sigmoid(softplus_inverse(0.5));
        for (g, zi) in gs.weights().iter().zip(z.weights()) {
            assert!((g / dsig - zi).abs() < 1e-14);
        }
        assert!((gs.bias()[0] / dsig - 0.2).abs() < 1e-14);
    }

    #[test]
    fn zero_sigma_gives_mean_weights() {
        let spec = NetworkSpec::mlp(1, 4, 2, 1, Activation::Elu).unwrap();
        let w = random_weights(&spec, 8);
        for base in [BaseDistribution::Gaussian, BaseDistribution::standard_bimodal()] {
            let net = MeanFieldNet::from_weights(spec.clone(), &w, 0.0, true).unwrap();
            let (theta, _) = net.sample(&base, &mut seeded_rng(1, 0));
            assert_eq!(theta, w);
        }
    }

    #[test]
    fn sampled_weight_moments() {
        let (mu, sigma) = (0.3, 0.8);
        let layer = MeanFieldLayer::new(DenseLayer::from_parts(1, 1, vec![mu], vec![0.0]).unwrap(), sigma, false).unwrap();
        let device = BaseDistribution::device(DeviceDistParams::reference_mtj()).unwrap();
        for base in [BaseDistribution::Gaussian, device, BaseDistribution::standard_bimodal()] {
            let mut rng = seeded_rng(2, 0);
            let xs: Vec<f64> = (0..100_000).map(|_| layer.sample(&base, &mut rng).0.weights()[0]).collect();
            let m = stats::mean(&xs);
            let s = stats::std_dev(&xs);
            let n = xs.len() as f64;
            assert!((m - mu).abs() < 3.0 * sigma / libm::sqrt(n), "{:?} mean {m}", base.kind());
            // standard error of a sample variance is σ²·√((κ − 1)/n)
            let kurt = xs.iter().map(|x| libm::pow((x - m) / s, 4.0)).sum::<f64>() / n;
            let se_var = sigma * sigma * libm::sqrt((kurt - 1.0) / n);
            assert!((s * s - sigma * sigma).abs() < 3.0 * se_var, "{:?} var {}", base.kind(), s * s);
        }
    }

    #[test]
    fn deterministic_bias_is_not_sampled() {
        let layer = MeanFieldLayer::new(DenseLayer::from_parts(1, 2, vec![0.0, 0.0], vec![0.5, -0.5]).unwrap(), 1.0, false).unwrap();
        let (theta, z) = layer.sample(&BaseDistribution::Gaussian, &mut seeded_rng(3, 0));
        assert_eq!(theta.bias(), &[0.5, -0.5]);
        assert_eq!(z.bias(), &[0.0, 0.0]);
        assert_eq!(layer.sigma().bias(), &[0.0, 0.0]);
    }
}
