use std::path::Path;
use std::process::Command;

use sepcross::cli::Manifest;

fn sepcross(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_sepcross"))
        .current_dir(dir)
        .env_remove("SEPCROSS_THREADS")
        .args(args)
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn exit_codes_follow_errors() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    write(d, "zero.toml", "schema_version = 1\n[ensemble]\nn = 0\n");
    let (code, err) = sepcross(d, &["ensemble", "--config", "zero.toml", "--out", "o"]);
    assert_eq!(code, 21, "{err}");
    assert!(err.contains("CONFIG_INVALID"));
    write(d, "typo.toml", "schema_version = 1\n[chart]\nn_hh = 3\n");
    assert_eq!(sepcross(d, &["chart", "--config", "typo.toml"]).0, 21);
    assert_eq!(sepcross(d, &["chart", "--config", "missing.toml"]).0, 21);
    let (code, err) = sepcross(d, &["resonances", "--out", "empty"]);
    assert_eq!(code, 22, "{err}");
    assert!(err.contains("MISSING_DEPENDENCY"));
    assert_eq!(sepcross(d, &["report", "--out", "empty"]).0, 22);
    assert_eq!(sepcross(d, &["bogus"]).0, 2);
    assert_eq!(sepcross(d, &["--help"]).0, 0);
}

#[test]
fn report_bundles_and_checks_hashes() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    write(d, "c.toml", "schema_version = 1\nseed = 4\n[chart]\nn_h = 12\n");
    for cmd in ["chart", "theta", "resonances"] {
        assert_eq!(sepcross(d, &[cmd, "--config", "c.toml", "--out", "o", "--threads", "1"]).0, 0, "{cmd}");
    }
    assert_eq!(sepcross(d, &["report", "--config", "c.toml", "--out", "o"]).0, 0);
    let o = d.join("o");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(o.join("report.json")).unwrap()).unwrap();
    let cmds = report["commands"].as_array().unwrap();
    assert_eq!(cmds.len(), 3);
    for c in cmds {
        let name = c["command"].as_str().unwrap();
        let m: Manifest = serde_json::from_slice(&std::fs::read(o.join(format!("manifest_{name}.json"))).unwrap()).unwrap();
        assert_eq!(m.seed, 4);
        assert_eq!(serde_json::to_value(&m.files).unwrap(), c["files"]);
    }
    let theta: serde_json::Value = serde_json::from_slice(&std::fs::read(o.join("theta.json")).unwrap()).unwrap();
    assert!((theta["p1"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    // the echoed config is complete and loads back
    let echoed = std::fs::read_to_string(o.join("chart.resolved.toml")).unwrap();
    assert!(echoed.contains("seed = 4") && echoed.contains("[zones]"));
    sepcross::config::ExperimentConfig::from_toml(&echoed).unwrap();

    std::fs::write(o.join("theta.json"), "{}").unwrap();
    let (code, err) = sepcross(d, &["report", "--out", "o"]);
    assert_eq!(code, 22);
    assert!(err.contains("theta.json"), "{err}");
}

#[test]
fn seed_flag_and_thread_env() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    write(d, "m.toml", "schema_version = 1\n[model]\nn = 200\neps2 = [0.0, 0.002]\nexit_scan = []\n");
    let out = Command::new(env!("CARGO_BIN_EXE_sepcross"))
        .current_dir(d)
        .env("SEPCROSS_THREADS", "0")
        .args(["model", "--config", "m.toml", "--out", "a"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(21));
    assert_eq!(sepcross(d, &["model", "--config", "m.toml", "--out", "a", "--seed", "9"]).0, 0);
    assert_eq!(sepcross(d, &["model", "--config", "m.toml", "--out", "b", "--seed", "9", "--threads", "1"]).0, 0);
    assert_eq!(sepcross(d, &["model", "--config", "m.toml", "--out", "c", "--seed", "10"]).0, 0);
    let read = |s: &str| std::fs::read(d.join(s).join("model_capture.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let text = String::from_utf8(read("a")).unwrap();
    assert!(text.starts_with("eps2,n,captured"));
    assert!(text.lines().nth(1).unwrap().starts_with("0.0,200,0,"));
}
