//! Command runners. Each writes its manifest before computing and rewrites
//! it with the outcome afterwards.

use std::fs;
use std::path::{Path, PathBuf};

use devnoise_core::experiments::energy::EnergyCell;
use devnoise_core::experiments::regression::max_relative_gap;
use devnoise_core::experiments::{
    curves_agree, estimator_noise_floor, generate_regression_data, predictive_gaps, run_calibration, run_energy_cell,
    run_regression_experiment, summarize_energy, sweep_cells, CalibrationPoint, EnergyRow, EnergySweepConfig, NoiseFloor,
    Split, SwapBase,
};
use devnoise_core::inverse_sampler::sampler_study;
use devnoise_core::mfvi::MeanFieldModel;
use devnoise_core::mle_fit::fit_device_params;
use devnoise_core::nn::NetworkSpec;
use devnoise_core::quadrature::{convergence_study, RuleFamily, StudyTarget};
use devnoise_core::seeded_rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{
    load_config, CalibrateRunConfig, Command, EnergyRunConfig, FitRunConfig, QuadStudyConfig, RegressionRunConfig, RunConfig,
    SamplerStudyConfig,
};
use crate::error::{CliError, ErrorReport, Result};
use crate::formats::{build_swaps, fmt, read_json, read_samples, write_csv, write_json, ModelCheckpoint, ParamsDoc};

pub const MANIFEST: &str = "manifest.json";
pub const ERROR_FILE: &str = "error.json";

/// One parsed command line.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub overrides: Vec<String>,
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub status: Status,
    pub config: Value,
    pub overrides: Vec<String>,
    pub outputs: Vec<String>,
    pub metrics: Map<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
}

/// Output directory plus the manifest recording what was written there.
struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn start<T: RunConfig>(dir: &Path, command: Command, cfg: &T, overrides: &[String]) -> Result<Self> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.name(),
            seed: cfg.seed(),
            status: Status::Running,
            config: serde_json::to_value(cfg).expect("configs serialize"),
            overrides: overrides.to_vec(),
            outputs: Vec::new(),
            metrics: Map::new(),
            error: None,
        };
        let run = Self { dir: dir.into(), manifest };
        run.save()?;
        Ok(run)
    }

    fn save(&self) -> Result<()> {
        write_json(&self.dir.join(MANIFEST), &self.manifest)
    }

    /// Path of a new artifact, recorded in the manifest.
    fn output(&mut self, name: String) -> PathBuf {
        self.manifest.outputs.push(name.clone());
        self.dir.join(name)
    }

    fn metric(&mut self, key: &str, value: impl Serialize) {
        self.manifest.metrics.insert(key.into(), serde_json::to_value(value).expect("metrics serialize"));
    }

    fn finish(mut self, outcome: Result<()>) -> Result<Manifest> {
        match outcome {
            Ok(()) => {
                self.manifest.status = Status::Completed;
                self.save()?;
                Ok(self.manifest)
            }
            Err(e) => {
                self.manifest.status = Status::Failed;
                self.manifest.error = Some(e.report());
                // the original error matters more than a failed rewrite
                let _ = self.save();
                Err(e)
            }
        }
    }
}

/// Runs one invocation to completion and returns its final manifest.
pub fn run(inv: &Invocation) -> Result<Manifest> {
    let command: Command = inv.command.parse()?;
    if inv.samples.is_some() && command != Command::Fit {
        return Err(CliError::MalformedConfig(format!("--samples only applies to fit, not {command}")));
    }
    fs::create_dir_all(&inv.out).map_err(|e| CliError::Io { path: inv.out.clone(), source: e })?;
    let config = inv.config.as_deref();
    match command {
        Command::Fit => {
            let mut cfg: FitRunConfig = load_config(command, config, inv.seed, &inv.overrides)?;
            if inv.samples.is_some() {
                cfg.samples.clone_from(&inv.samples);
            }
            execute(inv, command, &cfg, fit)
        }
        Command::QuadStudy => execute(inv, command, &load_config(command, config, inv.seed, &inv.overrides)?, quad_study),
        Command::SamplerStudy => execute(inv, command, &load_config(command, config, inv.seed, &inv.overrides)?, sampler_study_cmd),
        Command::Energy => execute(inv, command, &load_config(command, config, inv.seed, &inv.overrides)?, energy),
        Command::Regression => execute(inv, command, &load_config(command, config, inv.seed, &inv.overrides)?, regression),
        Command::Calibrate => execute(inv, command, &load_config(command, config, inv.seed, &inv.overrides)?, calibrate),
    }
}

fn execute<T: RunConfig>(inv: &Invocation, command: Command, cfg: &T, body: fn(&T, &mut Run) -> Result<()>) -> Result<Manifest> {
    let mut run = Run::start(&inv.out, command, cfg, &inv.overrides)?;
    let outcome = body(cfg, &mut run);
    run.finish(outcome)
}

/// Writes the machine-readable error next to the manifest.
pub fn write_error(out: &Path, err: &CliError) -> Result<()> {
    write_json(&out.join(ERROR_FILE), &err.report())
}

fn fit(cfg: &FitRunConfig, run: &mut Run) -> Result<()> {
    let path = cfg.samples.as_deref().ok_or_else(|| CliError::MalformedConfig("fit needs --samples <csv> or \"samples\"".into()))?;
    let samples = read_samples(path)?;
    let result = fit_device_params(&samples, &cfg.fit)?;
    let doc = ParamsDoc::from(&result.params);
    write_json(&run.output("fit_params.json".into()), &doc)?;
    let trace = result.trace.iter().enumerate().map(|(i, v)| [i.to_string(), fmt(*v)]);
    write_csv(&run.output("fit_trace.csv".into()), &["iteration", "nll"], trace)?;
    run.metric("n_samples", samples.len());
    run.metric("params", doc);
    run.metric("final_nll", result.trace.last());
    Ok(())
}

fn quad_study(cfg: &QuadStudyConfig, run: &mut Run) -> Result<()> {
    let params = cfg.device.params()?;
    let mut rows = Vec::new();
    for (target, target_name) in [(StudyTarget::Variance, "variance"), (StudyTarget::KlToGaussian, "kl_to_gaussian")] {
        for (family, family_name) in [(RuleFamily::Custom, "custom"), (RuleFamily::Standard, "standard")] {
            for r in convergence_study(&params, family, &cfg.orders, target)? {
                let sq = r.sq_diff.map(fmt).unwrap_or_default();
                rows.push([family_name.to_string(), target_name.into(), r.order.to_string(), fmt(r.estimate), sq]);
            }
        }
    }
    write_csv(&run.output("quad_study.csv".into()), &["family", "target", "order", "estimate", "sq_diff"], rows)
}

fn sampler_study_cmd(cfg: &SamplerStudyConfig, run: &mut Run) -> Result<()> {
    let params = cfg.device.params()?;
    let mut rng = seeded_rng(cfg.seed, 0);
    let rows = sampler_study(&params, cfg.degree, &cfg.counts, &mut rng)?;
    if let Some(last) = rows.last() {
        run.metric("quadrature_kl", last.quadrature_kl);
        run.metric("corrected_gap", (last.mc_kl_corrected - last.quadrature_kl).abs());
        run.metric("plain_gap", (last.mc_kl_plain - last.quadrature_kl).abs());
    }
    let csv_rows = rows.iter().map(|r| [r.n.to_string(), fmt(r.mc_kl_corrected), fmt(r.mc_kl_plain), fmt(r.quadrature_kl)]);
    write_csv(&run.output("sampler_study.csv".into()), &["n", "mc_kl_corrected", "mc_kl_plain", "quadrature_kl"], csv_rows)
}

/// A cell that failed to train; recorded instead of aborting the sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub width: usize,
    pub depth: usize,
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub cells: Vec<((usize, usize, usize), EnergyCell)>,
    pub failures: Vec<CellFailure>,
    pub floor: NoiseFloor,
}

impl SweepOutcome {
    pub fn rows(&self) -> Vec<EnergyRow> {
        self.cells.iter().flat_map(|(_, c)| c.rows.iter().cloned()).collect()
    }
}

/// Runs every cell on a pool of `threads` workers (all cores when `None`);
/// results come back in [`sweep_cells`] order whatever the thread count.
pub fn energy_sweep_parallel(cfg: &EnergySweepConfig, swaps: &[SwapBase], threads: Option<usize>) -> Result<SweepOutcome> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::MalformedConfig(format!("thread pool: {e}")))?;
    let cells = sweep_cells(cfg);
    let results: Vec<_> = pool.install(|| cells.par_iter().map(|&(w, d, r)| run_energy_cell(cfg, w, d, r, swaps)).collect());
    let mut outcome = SweepOutcome { cells: Vec::new(), failures: Vec::new(), floor: estimator_noise_floor(cfg)? };
    for (key, result) in cells.into_iter().zip(results) {
        match result {
            Ok(cell) => outcome.cells.push((key, cell)),
            Err(e) => outcome.failures.push(CellFailure { width: key.0, depth: key.1, replicate: key.2, error: e.to_string() }),
        }
    }
    Ok(outcome)
}

fn energy(cfg: &EnergyRunConfig, run: &mut Run) -> Result<()> {
    let swaps = build_swaps(&cfg.swaps)?;
    let outcome = energy_sweep_parallel(&cfg.sweep, &swaps, cfg.threads)?;
    let rows = outcome.rows();
    let csv_rows = rows
        .iter()
        .map(|r| [r.width.to_string(), r.depth.to_string(), r.replicate.to_string(), r.base.clone(), fmt(r.kl), fmt(r.final_loss)]);
    write_csv(&run.output("energy_results.csv".into()), &["width", "depth", "replicate", "base", "kl", "final_loss"], csv_rows)?;
    let summary = summarize_energy(&rows);
    let csv_rows = summary.iter().map(|s| [s.width.to_string(), s.depth.to_string(), s.base.clone(), fmt(s.mean_kl), fmt(s.std_kl)]);
    write_csv(&run.output("energy_summary.csv".into()), &["width", "depth", "base", "mean_kl", "std_kl"], csv_rows)?;
    let csv_rows = outcome.failures.iter().map(|f| [f.width.to_string(), f.depth.to_string(), f.replicate.to_string(), f.error.clone()]);
    write_csv(&run.output("energy_failures.csv".into()), &["width", "depth", "replicate", "error"], csv_rows)?;

    if cfg.save_predictive {
        for &depth in &cfg.sweep.depths {
            for &width in &cfg.sweep.widths {
                let in_cell: Vec<_> = outcome.cells.iter().filter(|((w, d, _), _)| (*w, *d) == (width, depth)).collect();
                let Some((_, first)) = in_cell.first() else { continue };
                for (b, (label, _)) in first.predictive.iter().enumerate() {
                    let name = format!("energy_{label}_{width}x{depth}_{}.csv", cfg.seed);
                    let rows = in_cell.iter().flat_map(|((_, _, rep), c)| c.predictive[b].1.iter().map(move |y| [rep.to_string(), fmt(*y)]));
                    write_csv(&run.output(name), &["replicate", "y"], rows)?;
                }
            }
        }
    }
    run.metric("noise_floor", json!({"mean": outcome.floor.mean, "std": outcome.floor.std, "floor": outcome.floor.floor}));
    run.metric("failed_cells", outcome.failures.len());
    Ok(())
}

/// `(width, depth)` of a one-input MLP: hidden width and hidden-layer count.
fn shape(spec: &NetworkSpec) -> (usize, usize) {
    let w = spec.layer_widths();
    (w[1], w.len() - 2)
}

fn regression(cfg: &RegressionRunConfig, run: &mut Run) -> Result<()> {
    let swaps = build_swaps(&cfg.swaps)?;
    let out = run_regression_experiment(&cfg.regression, &swaps)?;
    let (w, d) = (cfg.regression.width, cfg.regression.depth);
    for (label, s) in &out.predictive {
        let rows = (0..s.x.len()).map(|j| [fmt(s.x[j]), fmt(s.mean[j]), fmt(s.epistemic_std[j]), fmt(s.aleatoric_std[j]), fmt(s.total_std[j])]);
        let name = format!("regression_{label}_{w}x{d}_{}.csv", cfg.seed);
        write_csv(&run.output(name), &["x", "mean", "epistemic_std", "aleatoric_std", "total_std"], rows)?;
    }
    let reference = &out.predictive[0].1;
    let mut gaps = Vec::new();
    for (label, s) in &out.predictive[1..] {
        let (mean_gap, std_gap) = predictive_gaps(reference, s)?;
        let epistemic_gap = max_relative_gap(&reference.epistemic_std, &s.epistemic_std).ok();
        gaps.push(json!({"base": label, "mean_gap": mean_gap, "total_std_gap": std_gap, "epistemic_std_gap": epistemic_gap}));
    }
    let gap_rows = gaps.iter().map(|g| {
        ["base", "mean_gap", "total_std_gap"].map(|k| match &g[k] {
            Value::String(s) => s.clone(),
            v => fmt(v.as_f64().expect("gaps are numbers")),
        })
    });
    write_csv(&run.output("regression_gaps.csv".into()), &["base", "mean_gap", "total_std_gap"], gap_rows)?;
    let mle = out.mle.mse_trace.iter().zip(&out.mle.nll_trace).enumerate().map(|(i, (m, n))| [i.to_string(), fmt(*m), fmt(*n)]);
    write_csv(&run.output("regression_mle_trace.csv".into()), &["epoch", "mse", "nll"], mle)?;
    let vi = out.vi_trace.iter().enumerate().map(|(i, v)| [i.to_string(), fmt(*v)]);
    write_csv(&run.output("regression_vi_trace.csv".into()), &["step", "loss"], vi)?;
    write_json(&run.output("regression_model.json".into()), &ModelCheckpoint::new(&out.model))?;
    if cfg.save_data {
        for data in [&out.train, &out.test] {
            let rows = data.x.iter().zip(&data.y).map(|(x, y)| [fmt(*x), fmt(*y)]);
            write_csv(&run.output(format!("regression_data_{}_{}.csv", data.split.name(), cfg.seed)), &["x", "y"], rows)?;
        }
    }
    run.metric("gaps", gaps);
    run.metric("rejected_x", json!({"train": out.train.rejected, "test": out.test.rejected}));
    Ok(())
}

fn calibrate(cfg: &CalibrateRunConfig, run: &mut Run) -> Result<()> {
    let swaps = build_swaps(&cfg.swaps)?;
    let model: MeanFieldModel = match &cfg.checkpoint {
        Some(path) => read_json::<ModelCheckpoint>(path)?.restore().map_err(|e| match e {
            CliError::Compute(inner) => CliError::MalformedInput { path: path.clone(), message: inner.to_string() },
            CliError::MalformedConfig(m) => CliError::MalformedInput { path: path.clone(), message: m },
            other => other,
        })?,
        None => run_regression_experiment(&cfg.regression, &[])?.model,
    };
    let test = generate_regression_data(cfg.regression.test_n, Split::Test, cfg.regression.seed)?;
    let curves = run_calibration(&model, &test.x, &test.y, &swaps, &cfg.calibration)?;
    let (w, d) = shape(model.mean_net().spec());
    for (label, curve) in &curves {
        let rows = curve.iter().map(|p: &CalibrationPoint| [fmt(p.level), fmt(p.coverage), fmt(p.band)]);
        write_csv(&run.output(format!("calibrate_{label}_{w}x{d}_{}.csv", cfg.seed)), &["level", "coverage", "band"], rows)?;
    }
    let agree: Map<String, Value> = curves[1..].iter().map(|(label, c)| (label.clone(), curves_agree(&curves[0].1, c).into())).collect();
    run.metric("agrees_with_gaussian", agree);
    run.metric("test_points", test.x.len());
    Ok(())
}
