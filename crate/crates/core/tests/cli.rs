use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mflag::runner::io::export_dataset;
use mflag::synthdata::{generate, SynthConfig};

fn mflag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mflag"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("run.json");
    fs::write(
        &path,
        r#"{"epochs": 3, "eval_every": 1, "eval_size": 64, "synth": {"n_samples": 512}}"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gradcheck_passes_and_the_negative_control_fails() {
    let ok = mflag(&["gradcheck"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    let text = stdout(&ok);
    assert_eq!(text.lines().count(), 3 + 10);
    assert!(text.lines().all(|l| l.ends_with("ok")));

    let bad = mflag(&["gradcheck", "--corrupt"]);
    assert!(!bad.status.success());
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn pretrain_diagnose_plots_and_probe() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_string_lossy().into_owned();

    let run = mflag(&["pretrain", "--config", &cfg, "--seed", "4", "--out", &out_s]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["metrics.csv", "timing.csv", "checkpoint.mflg", "config.json", "z_v.mfem", "pca3.csv", "plots.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4);
    assert!(!metrics.contains("wall_ms"));

    let z_v = out.join("z_v.mfem").to_string_lossy().into_owned();
    let z_a = out.join("z_a.mfem").to_string_lossy().into_owned();
    let z_t = out.join("z_t.mfem").to_string_lossy().into_owned();
    let diag = mflag(&["diagnose", "--input", &z_v, "--pair-a", &z_a, "--pair-t", &z_t]);
    assert!(diag.status.success());
    let text = stdout(&diag);
    assert!(text.contains("samples 64 dims 16"));
    assert!(text.contains("effective_rank ") && text.contains("alignment_metric "));

    let pca_rows = fs::read_to_string(out.join("pca3.csv")).unwrap().lines().count();
    fs::remove_file(out.join("pca3.csv")).unwrap();
    let plots = mflag(&["plots", "--out", &out_s]);
    assert!(plots.status.success(), "{}", String::from_utf8_lossy(&plots.stderr));
    // Rebuilt from the f32 embedding file, so only the layout is compared.
    let rebuilt = fs::read_to_string(out.join("pca3.csv")).unwrap();
    assert_eq!(rebuilt.lines().count(), pca_rows);
    assert!(rebuilt.lines().nth(1).unwrap().ends_with(",both_u0"));

    let data_dir = dir.path().join("data");
    let data = generate(&SynthConfig {
        n_samples: 512,
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    export_dataset(&data_dir, &data).unwrap();
    let probe = mflag(&[
        "probe",
        "--out",
        &out_s,
        "--data",
        &data_dir.to_string_lossy(),
        "--fraction",
        "1.0",
    ]);
    assert!(probe.status.success(), "{}", String::from_utf8_lossy(&probe.stderr));
    assert!(stdout(&probe).starts_with("accuracy "));
}

#[test]
fn configuration_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"epochs": 3, "learning_rate": 0.1}"#).unwrap();
    let o = mflag(&["pretrain", "--config", &path.to_string_lossy()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let missing = mflag(&["diagnose", "--input", &dir.path().join("none.mfem").to_string_lossy()]);
    assert!(!missing.status.success());

    let few = mflag(&["probe", "--out", &dir.path().to_string_lossy()]);
    assert!(!few.status.success());
}

#[test]
fn ablate_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("abl.json");
    fs::write(&path, r#"{"epochs": 1, "eval_size": 32, "synth": {"n_samples": 300}}"#).unwrap();
    let out = dir.path().join("abl");
    let o = mflag(&["ablate", "--config", &path.to_string_lossy(), "--out", &out.to_string_lossy()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
    let pca = fs::read_to_string(out.join("pca3.csv")).unwrap();
    assert_eq!(pca.lines().count(), 1 + 9 * 32);
}
