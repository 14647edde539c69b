use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn amlconv(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amlconv"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const CONFIG: &str = r#"{
  "generate": {
    "base": {"kind": "icosphere", "resolution": 2},
    "deformations": [
      {"mode": "twist", "magnitude": 0.2},
      {"mode": "bend", "magnitude": 0.5},
      {"mode": "twist", "magnitude": 0.4}
    ],
    "train_count": 2,
    "seed": 0
  },
  "dataset": "data/manifest.json",
  "k": 30,
  "span": 8,
  "hidden": 8,
  "width": 8,
  "epochs": 2
}"#;

#[test]
fn end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), CONFIG).unwrap();

    let manifest = ok(&amlconv(d, &["--config", "cfg.json", "--out", "data", "gen-data"]));
    assert!(manifest.trim().ends_with("manifest.json"));

    // training before the spectra exist is an I/O-class failure
    let early = amlconv(d, &["--config", "cfg.json", "--out", "run", "train"]);
    assert_eq!(early.status.code(), Some(4));

    let first = ok(&amlconv(d, &["--config", "cfg.json", "spectrum"]));
    assert!(first.lines().all(|l| l.contains("Computed")), "{first}");
    let again = ok(&amlconv(d, &["--config", "cfg.json", "spectrum"]));
    assert!(again.lines().all(|l| l.contains("Cached")), "{again}");

    ok(&amlconv(d, &["--config", "cfg.json", "--out", "run", "train"]));
    let eval = ok(&amlconv(d, &["--config", "cfg.json", "--out", "run", "eval"]));
    assert!(eval.contains("mean AGE x100"));
    for f in ["history.csv", "model.ckpt", "pairs.csv", "cge_pooled.csv", "config.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }

    let frames = ok(&amlconv(d, &["--config", "cfg.json", "--out", "frames", "frames", "data/template.off"]));
    let csv = fs::read_to_string(d.join(frames.trim())).unwrap();
    assert!(csv.starts_with("vertex,k_min,k_max,dir_x,dir_y,dir_z,umbilic\n"));
    assert_eq!(csv.lines().count(), 163);

    let dump = ok(&amlconv(
        d,
        &["--config", "cfg.json", "--out", "w", "wavelet-dump", "data/template.off", "--vertex", "3", "--scale", "1"],
    ));
    assert_eq!(fs::read_to_string(d.join(dump.trim())).unwrap().lines().count(), 163);
}

#[test]
fn mesh_info_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tri.off"), "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n").unwrap();
    let info: serde_json::Value = serde_json::from_str(&ok(&amlconv(d, &["mesh-info", "tri.off"]))).unwrap();
    assert_eq!(info["vertices"], 4);
    assert_eq!(info["euler_characteristic"], 2);
    assert_eq!(info["closed"], true);

    assert_eq!(amlconv(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(amlconv(d, &["mesh-info", "missing.off"]).status.code(), Some(4));
    fs::write(d.join("bad.off"), "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n").unwrap();
    assert_eq!(amlconv(d, &["mesh-info", "bad.off"]).status.code(), Some(2));
    fs::write(d.join("cfg.json"), r#"{"directions": 3}"#).unwrap();
    assert_eq!(amlconv(d, &["--config", "cfg.json", "train"]).status.code(), Some(2));
}
