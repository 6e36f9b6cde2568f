//! End-to-end runs of the `ipdnet` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ipdnet_cli::commands::EstimatesManifest;
use ipdnet_cli::dataset::Dataset;
use ipdnet_core::wav::{read_wav, write_wav};

fn ipdnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipdnet"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = ipdnet(args, cwd);
    assert!(
        out.status.success(),
        "ipdnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    ipdnet(args, cwd).status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const ULA_CONFIG: &str = r#"{
  "seed": 11,
  "scene": {
    "array": {"kind": "uniform_linear", "mics": 3, "spacing": 0.06},
    "duration": 1.0,
    "sources": [1, 2],
    "moving_fraction": 0.5,
    "reverb_fraction": 0.25
  },
  "model": {"variant": "fixed", "mode": "online", "mics": 3, "tracks": 2, "bins": 256, "hidden": 8, "blocks": 1},
  "train": {"epochs": 1, "batch_size": 2}
}"#;

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn simulation_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "c.json", ULA_CONFIG);
    ok(&["simulate", "--config", "c.json", "--out", "a", "--count", "4"], t.path());
    ok(&["simulate", "--config", "c.json", "--out", "b", "--count", "4"], t.path());
    let (a, b) = (tree(&t.path().join("a")), tree(&t.path().join("b")));
    assert!(a.contains_key(Path::new("manifest.json")) && a.contains_key(Path::new("utt00003/mixture.wav")));
    assert_eq!(a, b);
    ok(&["simulate", "--config", "c.json", "--out", "c", "--count", "4", "--seed", "12"], t.path());
    assert_ne!(a, tree(&t.path().join("c")));
}

#[test]
fn empty_dataset() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "c.json", ULA_CONFIG);
    ok(&["simulate", "--config", "c.json", "--out", "d", "--count", "0"], t.path());
    let d = Dataset::open(&t.path().join("d")).unwrap();
    assert!(d.is_empty());
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&["--help"], t.path()), 0);
    assert_eq!(code(&["--version"], t.path()), 0);
    assert_eq!(code(&["simulate", "--bogus"], t.path()), 1);
    let bad = ULA_CONFIG.replace("\"reverb_fraction\": 0.25", "\"reverb_fraction\": 0.25, \"rt60\": 2.0");
    write(t.path(), "bad.json", &bad);
    let out = ipdnet(&["simulate", "--config", "bad.json", "--out", "x", "--count", "1"], t.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[0.2, 1.3]"));
    let snr = ULA_CONFIG.replace("\"duration\": 1.0", "\"duration\": 1.0, \"snr_db\": [-10, 5]");
    write(t.path(), "snr.json", &snr);
    assert_eq!(code(&["simulate", "--config", "snr.json", "--out", "x", "--count", "1"], t.path()), 1);
    assert_eq!(code(&["simulate", "--config", "missing.json", "--out", "x", "--count", "1"], t.path()), 1);

    // Non-empty output directories are refused; a held lock is a runtime failure.
    write(t.path(), "c.json", ULA_CONFIG);
    std::fs::create_dir(t.path().join("full")).unwrap();
    write(&t.path().join("full"), "x", "");
    assert_eq!(code(&["simulate", "--config", "c.json", "--out", "full", "--count", "1"], t.path()), 1);
    std::fs::create_dir(t.path().join("locked")).unwrap();
    write(&t.path().join("locked"), ".ipdnet.lock", "1");
    assert_eq!(code(&["simulate", "--config", "c.json", "--out", "locked", "--count", "1"], t.path()), 2);
}

#[test]
fn oracle_localizes_perfectly_and_tampering_is_caught() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "c.json", ULA_CONFIG);
    ok(&["simulate", "--config", "c.json", "--out", "d", "--count", "6"], t.path());
    ok(&["infer", "--oracle", "--data", "d", "--out", "o"], t.path());
    let report = ok(&["eval", "--data", "d", "--estimates", "o"], t.path());
    let value = |key: &str| -> f64 {
        report
            .lines()
            .find_map(|l| l.strip_prefix(key)?.trim().strip_prefix('=')?.trim().parse().ok())
            .unwrap()
    };
    assert_eq!(value("mdr_percent"), 0.0);
    assert_eq!(value("far_percent"), 0.0);
    assert!(value("mae_deg") <= 1.0);
    assert!(value("active_source_frames") > 0.0);
    for f in ["metrics.txt", "metrics.json", "results.csv"] {
        assert!(t.path().join("o").join(f).exists(), "{f}");
    }
    let m = EstimatesManifest::open(&t.path().join("o")).unwrap();
    assert_eq!(m.utterances.len(), 6);
    assert!(t.path().join("o/utt00000/detections.csv").exists());

    let wav = t.path().join("d/utt00002/mixture.wav");
    let mut bytes = std::fs::read(&wav).unwrap();
    let n = bytes.len();
    bytes[n - 2] ^= 0x55;
    std::fs::write(&wav, bytes).unwrap();
    assert_eq!(code(&["infer", "--oracle", "--data", "d", "--out", "o2"], t.path()), 1);
}

#[test]
fn train_infer_stream_and_plot() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path();
    write(dir, "c.json", ULA_CONFIG);
    ok(&["simulate", "--config", "c.json", "--out", "d", "--count", "4"], dir);
    ok(&["train", "--config", "c.json", "--data", "d", "--out", "run"], dir);
    for f in ["best.ipdw", "last.ipdw", "loss.csv", "summary.json", "optimizer.ipdw", "train_state.json"] {
        assert!(dir.join("run").join(f).exists(), "{f}");
    }
    ok(&["infer", "--checkpoint", "run/best.ipdw", "--data", "d", "--out", "e"], dir);
    ok(&["eval", "--data", "d", "--estimates", "e", "--out", "scores"], dir);
    assert!(dir.join("scores/metrics.txt").exists());

    // Streaming: an online model's estimates on a prefix equal the prefix of the full run.
    let ds = Dataset::open(&dir.join("d")).unwrap();
    let meta = ds.meta(&ds.manifest.utterances[0]).unwrap();
    write(dir, "array.txt", &meta.scene.geometry.to_text());
    let audio = read_wav(&dir.join("d/utt00000/mixture.wav")).unwrap();
    let cut: Vec<Vec<f64>> = audio.channels.iter().map(|c| c[..9000].to_vec()).collect();
    write_wav(&dir.join("prefix.wav"), audio.sample_rate, &cut).unwrap();
    std::fs::copy(dir.join("d/utt00000/mixture.wav"), dir.join("full.wav")).unwrap();
    for (wav, out) in [("full.wav", "sf"), ("prefix.wav", "sp")] {
        ok(
            &["infer", "--checkpoint", "run/best.ipdw", "--wav", wav, "--geometry", "array.txt", "--out", out],
            dir,
        );
    }
    let (full, _) = EstimatesManifest::open(&dir.join("sf")).unwrap().load(&dir.join("sf"), "full").unwrap();
    let (part, _) = EstimatesManifest::open(&dir.join("sp")).unwrap().load(&dir.join("sp"), "prefix").unwrap();
    let prefix_frames = (9000 - 512) / 256 + 1;
    let complete = prefix_frames / 12;
    assert!(complete >= 2);
    let head = full.prefix(complete);
    let n = head.values.len();
    assert_eq!(head.values, part.values[..n]);

    // A fixed-array checkpoint refuses other geometries.
    let other = ULA_CONFIG.replace("\"spacing\": 0.06", "\"spacing\": 0.05");
    write(dir, "other.json", &other);
    ok(&["simulate", "--config", "other.json", "--out", "d2", "--count", "1"], dir);
    assert_eq!(code(&["infer", "--checkpoint", "run/best.ipdw", "--data", "d2", "--out", "e2"], dir), 1);

    ok(&["plot", "loss", "--run", "run", "--out", "loss.svg"], dir);
    ok(
        &["plot", "spectrum", "--data", "d", "--estimates", "e", "--utterance", "utt00001", "--out", "s.svg"],
        dir,
    );
    for f in ["loss.svg", "s.svg"] {
        let svg = std::fs::read_to_string(dir.join(f)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("</svg>"), "{f}");
    }
}

#[test]
fn trajectory_plot_of_two_moving_sources() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path();
    let cfg = r#"{
      "seed": 5,
      "scene": {
        "array": {"kind": "circular", "mics": 4, "radius": 0.05},
        "duration": 1.5,
        "sources": [2, 2],
        "moving_fraction": 1.0,
        "azimuth": [20, 340],
        "min_separation": 40
      },
      "localize": {"grid": "full_azimuth"}
    }"#;
    write(dir, "c.json", cfg);
    ok(&["simulate", "--config", "c.json", "--out", "d", "--count", "1"], dir);
    let ds = Dataset::open(&dir.join("d")).unwrap();
    let meta = ds.meta(&ds.manifest.utterances[0]).unwrap();
    assert_eq!(meta.scene.sources.len(), 2);
    assert!(meta.scene.sources.iter().all(|s| !s.trajectory.is_static()));
    ok(&["infer", "--oracle", "--data", "d", "--config", "c.json", "--out", "o"], dir);
    ok(
        &["plot", "trajectory", "--data", "d", "--estimates", "o", "--utterance", "utt00000", "--out", "t.svg"],
        dir,
    );
    let svg = std::fs::read_to_string(dir.join("t.svg")).unwrap();
    assert!(svg.contains("source 1") && svg.contains("track 1"));
}
