use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vast_core::synth::{GridSpec, Geometry, SweepConfig, VortexParams};

fn vast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vast"))
        .args(args)
        .env("VAST_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn small_sweep(dir: &Path, snrs: &[f64], fractions: &[f64]) -> String {
    let cfg = SweepConfig {
        snr_list: snrs.to_vec(),
        venc_fractions: fractions.to_vec(),
        grid: GridSpec { dims: [16, 16, 8, 5], spacing: [1.0; 3], frame_interval: 60.0 },
        geometry: Geometry::Vortex(VortexParams { radius: 5.0, ..Default::default() }),
        ..Default::default()
    };
    let path = dir.join("sweep.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_default_sweep_writes_ten_cases_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = vast(&["synth", "--out", s(out), "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read_dir(a.join("cases")).unwrap().count(), 10);
    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 11);
    assert_eq!(manifest, fs::read_to_string(b.join("manifest.csv")).unwrap());
}

#[test]
fn invalid_snr_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = vast(&["synth", "--out", s(tmp.path()), "--snr", "0"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn missing_bundle_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let o = vast(&["segment", "--bundle", s(&missing), "--out", s(&tmp.path().join("out"))]);
    assert!(!o.status.success());
}

#[test]
fn out_of_range_override_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = vast(&["segment", "--bundle", s(tmp.path()), "--out", s(tmp.path()), "--sauvola-k", "-1"]);
    assert!(!o.status.success());
}

#[test]
fn identical_masks_score_one() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = small_sweep(tmp.path(), &[10.0], &[]);
    let corpus = tmp.path().join("corpus");
    assert!(vast(&["synth", "--config", &sweep, "--out", s(&corpus)]).status.success());
    let mask = corpus.join("cases").join("snr_10").join("truth").join("lumen_mask");
    let out = tmp.path().join("eval");
    let o = vast(&["evaluate", "--pred", s(&mask), "--truth", s(&mask), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("overlap.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "accuracy,precision,recall,f1,dice,jaccard,surface_mean");
    assert_eq!(lines.next().unwrap(), "1.0,1.0,1.0,1.0,1.0,1.0,0.0");
}

#[test]
fn pipeline_run_writes_reports_and_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = small_sweep(tmp.path(), &[20.0], &[0.5]);
    let out = tmp.path().join("run");
    let o = vast(&["pipeline", "--sweep-config", &sweep, "--out", s(&out), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["resolved_config.toml", "manifest.csv", "report/velocity_metrics.csv", "report/timing.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let velocity = fs::read_to_string(out.join("report/velocity_metrics.csv")).unwrap();
    assert_eq!(velocity.lines().count(), 3);
    assert!(velocity.starts_with("case_id,sweep,snr,venc_fraction,rmse_raw"));
    let timing = fs::read_to_string(out.join("report/timing.csv")).unwrap();
    assert!(timing.lines().next().unwrap().contains("segmentation_seconds"));

    let eval = tmp.path().join("eval");
    let o = vast(&["evaluate", "--pred", s(&out), "--truth", s(&out.join("corpus")), "--out", s(&eval)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(eval.join("velocity_metrics.csv")).unwrap(), velocity);
}
