use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use devnoise::formats::ModelCheckpoint;
use devnoise_core::mfvi::predictive_ensemble;
use devnoise_core::seeded_rng;
use serde_json::Value;
use tempfile::TempDir;

const TINY_ENERGY: &[&str] = &[
    "--set",
    "sweep.widths=[2,3]",
    "--set",
    "sweep.depths=[1]",
    "--set",
    "sweep.seeds=2",
    "--set",
    "sweep.train_iterations=20",
    "--set",
    "sweep.mc_samples=1000",
    "--set",
    "sweep.floor_replicates=3",
];

const TINY_REGRESSION: &str = r#"{
  "train_n": 400, "test_n": 150, "width": 4, "depth": 2,
  "mle": {"epochs": 5}, "vi": {"epochs": 1}, "grid_points": 11, "predictive_draws": 50
}"#;

fn devnoise(out: &Path, args: &[&str]) -> Output {
    let o = Command::new(env!("CARGO_BIN_EXE_devnoise")).arg(args[0]).arg("--out").arg(out).args(&args[1..]).output().unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn energy_results_do_not_depend_on_thread_count() {
    let dirs: Vec<TempDir> = ["1", "3"]
        .iter()
        .map(|threads| {
            let dir = TempDir::new().unwrap();
            let mut args = vec!["energy", "--seed", "4", "--set", "save_predictive=true", "--set"];
            let t = format!("threads={threads}");
            args.push(&t);
            args.extend_from_slice(TINY_ENERGY);
            devnoise(dir.path(), &args);
            dir
        })
        .collect();
    let read = |d: &TempDir, f: &str| fs::read(d.path().join(f)).unwrap();
    for f in ["energy_results.csv", "energy_summary.csv", "energy_bimodal_3x1_4.csv", "energy_gaussian_2x1_4.csv"] {
        assert_eq!(read(&dirs[0], f), read(&dirs[1], f), "{f}");
    }
    let results = String::from_utf8(read(&dirs[0], "energy_results.csv")).unwrap();
    // 2 widths × 2 replicates × (gaussian redraw + 3 swaps)
    assert_eq!(results.lines().count(), 1 + 2 * 2 * 4);
    assert_eq!(header(&dirs[0].path().join("energy_ecram_2x1_4.csv")), "replicate,y");
    let predictive = String::from_utf8(read(&dirs[0], "energy_device_2x1_4.csv")).unwrap();
    assert_eq!(predictive.lines().count(), 1 + 2 * 1000);
    let m = manifest(dirs[0].path());
    assert_eq!(m["metrics"]["failed_cells"], 0);
    assert!(m["metrics"]["noise_floor"]["floor"].as_f64().unwrap() > 0.0);
}

#[test]
fn regression_then_calibrate_from_checkpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("regression.json");
    fs::write(&cfg, format!(r#"{{"command": "regression", "regression": {TINY_REGRESSION}, "save_data": true}}"#)).unwrap();
    let reg_out = dir.path().join("reg");
    devnoise(&reg_out, &["regression", "--config", cfg.to_str().unwrap(), "--seed", "2"]);
    for base in ["gaussian", "device", "bimodal"] {
        let f = reg_out.join(format!("regression_{base}_4x2_2.csv"));
        assert_eq!(header(&f), "x,mean,epistemic_std,aleatoric_std,total_std");
        assert_eq!(fs::read_to_string(&f).unwrap().lines().count(), 12);
    }
    assert_eq!(header(&reg_out.join("regression_gaps.csv")), "base,mean_gap,total_std_gap");
    assert_eq!(fs::read_to_string(reg_out.join("regression_data_train_2.csv")).unwrap().lines().count(), 401);
    let m = manifest(&reg_out);
    assert!(m["metrics"]["rejected_x"]["train"].as_u64().unwrap() > 0);

    let ckpt_path = reg_out.join("regression_model.json");
    let ckpt: ModelCheckpoint = serde_json::from_str(&fs::read_to_string(&ckpt_path).unwrap()).unwrap();
    let model = ckpt.restore().unwrap();
    assert_eq!(ModelCheckpoint::new(&model), ckpt);

    let cal_cfg = dir.path().join("calibrate.json");
    let body = format!(
        r#"{{"command": "calibrate", "regression": {TINY_REGRESSION}, "calibration": {{"draws": 120}}, "checkpoint": {:?}}}"#,
        ckpt_path.to_str().unwrap()
    );
    fs::write(&cal_cfg, body).unwrap();
    let runs: Vec<_> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("cal{i}"));
            devnoise(&out, &["calibrate", "--config", cal_cfg.to_str().unwrap(), "--seed", "2"]);
            out
        })
        .collect();
    for base in ["gaussian", "device", "bimodal"] {
        let name = format!("calibrate_{base}_4x2_2.csv");
        let a = fs::read_to_string(runs[0].join(&name)).unwrap();
        assert_eq!(a, fs::read_to_string(runs[1].join(&name)).unwrap());
        assert_eq!(a.lines().next(), Some("level,coverage,band"));
        assert_eq!(a.lines().count(), 20);
    }
    let m = manifest(&runs[0]);
    assert_eq!(m["metrics"]["test_points"], 150);
    assert!(m["metrics"]["agrees_with_gaussian"]["device"].is_boolean());
}

#[test]
fn checkpoint_serialization_is_lossless() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("regression.json");
    fs::write(&cfg, format!(r#"{{"regression": {TINY_REGRESSION}, "swaps": []}}"#)).unwrap();
    let out = dir.path().join("reg");
    devnoise(&out, &["regression", "--config", cfg.to_str().unwrap()]);
    let text = fs::read_to_string(out.join("regression_model.json")).unwrap();
    let model = serde_json::from_str::<ModelCheckpoint>(&text).unwrap().restore().unwrap();
    let again = serde_json::to_string_pretty(&ModelCheckpoint::new(&model)).unwrap() + "\n";
    assert_eq!(again, text);
    let grid = [-0.5, 0.0, 0.7];
    let a = predictive_ensemble(&model, &grid, 10, &mut seeded_rng(1, 0)).unwrap();
    assert!(a.total_std.iter().all(|s| *s > 0.0));
}
