//! On-disk documents: device parameters, base descriptors, network
//! checkpoints, and CSV output.

use std::fs;
use std::path::Path;

use devnoise_core::distributions::{BimodalBase, DeviceBase};
use devnoise_core::experiments::SwapBase;
use devnoise_core::mfvi::MeanFieldModel;
use devnoise_core::nn::{Activation, DenseLayer, DenseWeights, MeanFieldLayer, MeanFieldNet, NetworkSpec, OutputTransform};
use devnoise_core::{BaseDistribution, DeviceDistParams, Kernel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// `(A, B, kernel)` of a device density; `C` follows from normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub kernel: Kernel,
}

impl DeviceSpec {
    pub fn mtj() -> Self {
        Self::from(&DeviceDistParams::reference_mtj())
    }

    pub fn ecram() -> Self {
        Self::from(&DeviceDistParams::reference_ecram())
    }

    pub fn params(&self) -> Result<DeviceDistParams> {
        Ok(DeviceDistParams::new(self.a, self.b, self.kernel)?)
    }
}

impl From<&DeviceDistParams> for DeviceSpec {
    fn from(p: &DeviceDistParams) -> Self {
        Self { a: p.a(), b: p.b(), kernel: p.kernel() }
    }
}

/// `{"A", "B", "C", "kernel", "std_scale"}` document of a fitted density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub kernel: Kernel,
    pub std_scale: f64,
}

impl From<&DeviceDistParams> for ParamsDoc {
    fn from(p: &DeviceDistParams) -> Self {
        Self { a: p.a(), b: p.b(), c: p.c(), kernel: p.kernel(), std_scale: p.variance().sqrt() }
    }
}

impl ParamsDoc {
    /// Rebuilds the density; `C` must agree with normalization.
    pub fn params(&self) -> Result<DeviceDistParams> {
        Ok(DeviceDistParams::with_c(self.a, self.b, self.c, self.kernel)?)
    }
}

/// Serializable description of a [`BaseDistribution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BaseSpec {
    Gaussian,
    Device {
        #[serde(rename = "A")]
        a: f64,
        #[serde(rename = "B")]
        b: f64,
        kernel: Kernel,
        /// Defaults to the standardizing scale `√E[x²]`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        std_scale: Option<f64>,
    },
    Bimodal {
        separation: f64,
    },
}

impl BaseSpec {
    pub fn device(spec: DeviceSpec) -> Self {
        Self::Device { a: spec.a, b: spec.b, kernel: spec.kernel, std_scale: None }
    }

    pub fn bimodal() -> Self {
        Self::Bimodal { separation: BimodalBase::DEFAULT_SEPARATION }
    }

    pub fn build(&self) -> Result<BaseDistribution> {
        Ok(match *self {
            Self::Gaussian => BaseDistribution::Gaussian,
            Self::Device { a, b, kernel, std_scale } => {
                let params = DeviceDistParams::new(a, b, kernel)?;
                match std_scale {
                    None => BaseDistribution::device(params)?,
                    Some(s) => BaseDistribution::Device(DeviceBase::with_scale(params, s)?),
                }
            }
            Self::Bimodal { separation } => BaseDistribution::Bimodal(BimodalBase::new(separation)?),
        })
    }

    pub fn describe(base: &BaseDistribution) -> Self {
        match base {
            BaseDistribution::Gaussian => Self::Gaussian,
            BaseDistribution::Device(d) => {
                let p = d.params();
                Self::Device { a: p.a(), b: p.b(), kernel: p.kernel(), std_scale: Some(d.std_scale()) }
            }
            BaseDistribution::Bimodal(m) => Self::Bimodal { separation: m.separation() },
        }
    }
}

/// A labelled base the trained Gaussian model is re-evaluated under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapSpec {
    pub label: String,
    pub base: BaseSpec,
}

impl SwapSpec {
    pub fn new(label: &str, base: BaseSpec) -> Self {
        Self { label: label.into(), base }
    }
}

pub fn build_swaps(specs: &[SwapSpec]) -> Result<Vec<SwapBase>> {
    let mut out = Vec::with_capacity(specs.len());
    for s in specs {
        if s.label == "gaussian" || out.iter().any(|o: &SwapBase| o.label == s.label) {
            return Err(CliError::MalformedConfig(format!("swap label {:?} is reserved or repeated", s.label)));
        }
        out.push(SwapBase { label: s.label.clone(), base: s.base.build()? });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub output_transform: OutputTransform,
}

impl NetworkDoc {
    pub fn from_spec(spec: &NetworkSpec) -> Self {
        Self { layer_widths: spec.layer_widths().to_vec(), activation: spec.activation(), output_transform: spec.output_transform() }
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        Ok(NetworkSpec::new(self.layer_widths.clone(), self.activation, self.output_transform)?)
    }
}

/// One dense layer keyed by index; `kernel` is row-major `[outputs × inputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayerDoc {
    pub index: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseCheckpoint {
    pub network: NetworkDoc,
    pub layers: Vec<DenseLayerDoc>,
}

fn layer_from_doc(spec: &NetworkSpec, index: usize, kernel: &[f64], bias: &[f64]) -> Result<DenseLayer> {
    let w = spec.layer_widths();
    Ok(DenseLayer::from_parts(w[index], w[index + 1], kernel.to_vec(), bias.to_vec())?)
}

fn check_indices<T>(layers: &[T], index: impl Fn(&T) -> usize, spec: &NetworkSpec) -> Result<()> {
    if layers.len() != spec.num_layers() || layers.iter().enumerate().any(|(i, l)| index(l) != i) {
        return Err(CliError::MalformedConfig("checkpoint layers must be indexed 0, 1, … matching the network".into()));
    }
    Ok(())
}

impl DenseCheckpoint {
    pub fn new(spec: &NetworkSpec, weights: &DenseWeights) -> Self {
        let layers = weights
            .layers()
            .iter()
            .enumerate()
            .map(|(index, l)| DenseLayerDoc { index, kernel: l.weights().to_vec(), bias: l.bias().to_vec() })
            .collect();
        Self { network: NetworkDoc::from_spec(spec), layers }
    }

    pub fn restore(&self) -> Result<(NetworkSpec, DenseWeights)> {
        let spec = self.network.spec()?;
        check_indices(&self.layers, |l| l.index, &spec)?;
        let layers = self.layers.iter().map(|l| layer_from_doc(&spec, l.index, &l.kernel, &l.bias)).collect::<Result<Vec<_>>>()?;
        Ok((spec, DenseWeights::from_layers(layers)))
    }
}

/// Mean-field layer: shifts and unconstrained scales. Deterministic biases
/// carry no `sigma_raw_bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanFieldLayerDoc {
    pub index: usize,
    pub mu_kernel: Vec<f64>,
    pub mu_bias: Vec<f64>,
    pub sigma_raw_kernel: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_raw_bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanFieldCheckpoint {
    pub network: NetworkDoc,
    pub layers: Vec<MeanFieldLayerDoc>,
}

impl MeanFieldCheckpoint {
    pub fn new(net: &MeanFieldNet) -> Self {
        let layers = net
            .layers()
            .iter()
            .enumerate()
            .map(|(index, l)| MeanFieldLayerDoc {
                index,
                mu_kernel: l.mu().weights().to_vec(),
                mu_bias: l.mu().bias().to_vec(),
                sigma_raw_kernel: l.sigma_raw().weights().to_vec(),
                sigma_raw_bias: l.bias_stochastic().then(|| l.sigma_raw().bias().to_vec()),
            })
            .collect();
        Self { network: NetworkDoc::from_spec(net.spec()), layers }
    }

    pub fn restore(&self) -> Result<MeanFieldNet> {
        let spec = self.network.spec()?;
        check_indices(&self.layers, |l| l.index, &spec)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let mu = layer_from_doc(&spec, l.index, &l.mu_kernel, &l.mu_bias)?;
            let raw_bias = l.sigma_raw_bias.clone().unwrap_or_else(|| vec![f64::NEG_INFINITY; l.mu_bias.len()]);
            let raw = layer_from_doc(&spec, l.index, &l.sigma_raw_kernel, &raw_bias)?;
            layers.push(MeanFieldLayer::from_parts(mu, raw, l.sigma_raw_bias.is_some())?);
        }
        Ok(MeanFieldNet::from_layers(spec, layers)?)
    }
}

/// Trained regression model: variational mean network, deterministic
/// aleatoric network, base and prior scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub mean: MeanFieldCheckpoint,
    pub aleatoric: DenseCheckpoint,
    pub base: BaseSpec,
    pub prior_std: f64,
}

impl ModelCheckpoint {
    pub fn new(model: &MeanFieldModel) -> Self {
        Self {
            mean: MeanFieldCheckpoint::new(model.mean_net()),
            aleatoric: DenseCheckpoint::new(model.aleatoric_spec(), model.aleatoric_weights()),
            base: BaseSpec::describe(model.base()),
            prior_std: model.prior_std(),
        }
    }

    pub fn restore(&self) -> Result<MeanFieldModel> {
        let (spec, weights) = self.aleatoric.restore()?;
        Ok(MeanFieldModel::new(self.mean.restore()?, spec, weights, self.base.build()?, self.prior_std)?)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("documents serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io { path: path.into(), source: e })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::MalformedInput { path: path.into(), message: e.to_string() })
}

/// Writes a header row and data rows; floats use the shortest round-trip form.
pub fn write_csv<R>(path: &Path, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator,
    R::Item: IntoIterator,
    <R::Item as IntoIterator>::Item: AsRef<[u8]>,
{
    let io = |e: csv::Error| CliError::Io { path: path.into(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io { path: path.into(), source: e })
}

/// Reads a one-column CSV of numbers; a non-numeric first row is a header.
pub fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let bad = |message: String| CliError::MalformedInput { path: path.into(), message };
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != 1 {
            return Err(bad(format!("row {} has {} columns, expected 1", i + 1, record.len())));
        }
        match record[0].parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => {}
            Err(_) => return Err(bad(format!("row {} is not a number: {:?}", i + 1, &record[0]))),
        }
    }
    Ok(out)
}

pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}
