use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn wglab(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wglab"));
    cmd.args(args).env_remove("WGLAB_SEED");
    if let Some(s) = env_seed {
        cmd.env("WGLAB_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn write_spec(dir: &Path, name: &str, spec: Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, spec.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A few steps of the desk model on a short regime stream.
fn tiny_regime(out: &Path, mode: &str) -> Value {
    json!({
        "preset": "desk",
        "model": { "wavelet_mode": mode },
        "train": { "epochs": 1, "steps_per_epoch": 4, "batch_size": 2, "eval_windows": 4, "eval_every": 2 },
        "data": { "kind": "regime", "train_len": 5000, "valid_len": 1000 },
        "out_dir": out,
    })
}

#[test]
fn single_regime_synth_warns_and_writes_files() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("r1");
    let spec = json!({ "preset": "desk", "data": { "kind": "regime", "n_regimes": 1, "train_len": 2000, "valid_len": 500 }, "out_dir": out });
    let o = wglab(&["synth", "--config", &write_spec(d.path(), "s.json", spec)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("degenerate: no hierarchy"), "{}", stderr(&o));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["train_tokens"], 2000);
    assert!(m["warnings"][0].as_str().unwrap().contains("degenerate"));
    assert!(out.join("train.wgds").exists() && out.join("valid.wgds").exists());
}

#[test]
fn listops_synth_covers_every_class() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("lo");
    let spec = json!({ "preset": "listops", "data": { "kind": "listops", "n_train": 1000, "n_valid": 50 }, "out_dir": out });
    let o = wglab(&["synth", "--config", &write_spec(d.path(), "s.json", spec)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read_json(&out.join("manifest.json"));
    let hist: Vec<u64> = m["label_histogram"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(hist.len(), 10);
    assert_eq!(hist.iter().sum::<u64>(), 1000);
    assert!(hist.iter().all(|&c| c > 0), "{hist:?}");
}

#[test]
fn train_reports_parameter_overhead() {
    let d = tempfile::tempdir().unwrap();
    for (mode, extra) in [("fixed", 0), ("learnable", 6240)] {
        let out = d.path().join(mode);
        let o = wglab(&["train", "--config", &write_spec(d.path(), "s.json", tiny_regime(&out, mode))], None);
        assert!(o.status.success(), "{}", stderr(&o));
        let s = read_json(&out.join("summary.json"));
        assert_eq!(s["extra_params"], extra, "{mode}");
        assert_eq!(s["wavelet_mode"], mode);
        for f in ["metrics.csv", "timing.csv", "best.ckpt", "last.ckpt", "resolved_config.json"] {
            assert!(out.join(f).exists(), "{mode}: missing {f}");
        }
    }
}

#[test]
fn seed_variable_drives_the_run() {
    let d = tempfile::tempdir().unwrap();
    let metrics = |name: &str, seed: &str| {
        let out = d.path().join(name);
        let o = wglab(&["train", "--config", &write_spec(d.path(), &format!("{name}.json"), tiny_regime(&out, "off"))], Some(seed));
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(read_json(&out.join("resolved_config.json"))["train"]["seed"], seed.parse::<u64>().unwrap());
        std::fs::read_to_string(out.join("metrics.csv")).unwrap()
    };
    let a = metrics("a", "11");
    assert_eq!(a, metrics("b", "11"));
    assert_ne!(a, metrics("c", "12"));
}

#[test]
fn set_overrides_reach_the_resolved_config() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("o");
    let cfg = write_spec(d.path(), "s.json", tiny_regime(&out, "off"));
    let o = wglab(&["train", "--config", &cfg, "--set", "train.batch_size=3", "--set", "model.wavelet_mode=ema"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&out.join("resolved_config.json"));
    assert_eq!(r["train"]["batch_size"], 3);
    assert_eq!(r["model"]["wavelet_mode"], "ema");
}

#[test]
fn trains_from_synthesised_files() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    let spec = json!({ "preset": "listops", "data": { "kind": "listops", "n_train": 200, "n_valid": 20 }, "out_dir": data });
    assert!(wglab(&["synth", "--config", &write_spec(d.path(), "s.json", spec)], None).status.success());
    let out = d.path().join("run");
    let spec = json!({
        "preset": "listops",
        "train": { "epochs": 1, "steps_per_epoch": 2, "batch_size": 2, "eval_windows": 20 },
        "data": { "kind": "file", "train": data.join("train.wgds"), "valid": data.join("valid.wgds") },
        "out_dir": out,
    });
    let o = wglab(&["train", "--config", &write_spec(d.path(), "t.json", spec)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(read_json(&out.join("summary.json"))["final_acc"].is_number());
}

#[test]
fn compare_tabulates_every_member() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("cmp");
    let cfg = write_spec(d.path(), "s.json", tiny_regime(&out, "off"));
    let o = wglab(&["compare", "--config", &cfg, "--modes", "off,fixed,ema", "--seeds", "1"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    for needle in ["| Mode", "| off", "| fixed", "| ema", "ablation (IIR smoothing)"] {
        assert!(table.contains(needle), "missing {needle:?} in\n{table}");
    }
    let report = read_json(&out.join("compare.json"));
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    assert!(out.join("compare.md").exists());
}

#[test]
fn dwt_bridges_power_of_two_input() {
    let d = tempfile::tempdir().unwrap();
    let input = d.path().join("x.txt");
    std::fs::write(&input, "1 2 3 4, 5 6 7 8\n-1 0 2.5 3 1 1 1 9").unwrap();
    let o = wglab(&["dwt", "--input", input.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let traces = r["traces"].as_array().unwrap();
    assert_eq!(traces.len(), 4);
    assert!(traces.iter().all(|t| t["bridge_pass"] == true));
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let d = tempfile::tempdir().unwrap();
    // Missing file: file system trouble.
    assert_eq!(wglab(&["train", "--config", "/nonexistent/spec.json"], None).status.code(), Some(3));
    // Unknown key: configuration.
    let bad = write_spec(d.path(), "bad.json", json!({ "preset": "desk", "data": { "kind": "regime", "bogus": 1 }, "out_dir": d.path() }));
    assert_eq!(wglab(&["train", "--config", &bad], None).status.code(), Some(2));
    // Data vocabulary larger than the model's.
    let wide = write_spec(d.path(), "wide.json", json!({ "preset": "desk", "data": { "kind": "regime", "n_symbols": 12 }, "out_dir": d.path() }));
    assert_eq!(wglab(&["train", "--config", &wide], None).status.code(), Some(2));
    // Unparsable signal.
    let sig = d.path().join("sig.txt");
    std::fs::write(&sig, "1 2 x 4").unwrap();
    let o = wglab(&["dwt", "--input", sig.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains('x'), "{}", stderr(&o));
    // Unknown gradient case.
    assert_eq!(wglab(&["verify", "--corrupt", "nope"], None).status.code(), Some(2));
}

#[test]
fn verify_passes_and_names_a_corrupted_op() {
    let ok = wglab(&["verify", "--instances", "3"], None);
    assert!(ok.status.success(), "{}", stdout(&ok));
    let bad = wglab(&["verify", "--instances", "3", "--corrupt", "gelu"], None);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("gradient/gelu"), "{}", stderr(&bad));
}

#[test]
fn off_model_learns_the_regime_source() {
    // 2000 steps of the plain model must beat the uniform predictor and
    // improve on its own starting point.
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("off");
    let spec = json!({
        "preset": "desk",
        "train": { "epochs": 4, "steps_per_epoch": 500, "batch_size": 8, "eval_windows": 32 },
        "data": { "kind": "regime", "train_len": 100000, "valid_len": 10000 },
        "out_dir": out,
    });
    let o = wglab(&["train", "--config", &write_spec(d.path(), "s.json", spec)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = read_json(&out.join("summary.json"));
    let fin = s["final_nll"].as_f64().unwrap();
    assert!(fin < 8f64.ln(), "final {fin}");
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let m = wglab_core::train::RunMetrics::from_csv(&csv).unwrap();
    let (first, last) = (m.records.first().unwrap(), m.records.last().unwrap());
    assert!(last.train_nll < first.train_nll, "{} -> {}", first.train_nll, last.train_nll);
}
