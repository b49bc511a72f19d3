use std::path::Path;
use std::process::{Command, Output};

use cenc_core::dataio::load_image;

fn cenc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cenc")).args(args).output().expect("spawn cenc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status,
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "image_size = 32\nbase_channels = 4\nbatch_size = 4\nheld_out_fraction = 0.25\nseed = 5\n";

/// Writes 12 synthetic images and trains for a handful of steps.
fn trained(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = root.join("data");
    let out = root.join("run");
    let cfg = root.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    assert_ok(&cenc(&["synth-data", "--out", s(&data), "--count", "12", "--size", "32", "--seed", "3"]));
    assert_ok(&cenc(&[
        "train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--iterations", "3",
    ]));
    (data, out.join("final"))
}

#[test]
fn train_inpaint_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path());
    assert!(ckpt.exists());
    let run = ckpt.parent().unwrap();
    for f in ["config.toml", "split.json", "train.log"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    assert_eq!(std::fs::read_to_string(run.join("train.log")).unwrap().lines().count(), 3);

    let input = data.join("synth-0000.ppm");
    let out = dir.path().join("filled.ppm");
    assert_ok(&cenc(&["inpaint", "--ckpt", s(&ckpt), "--input", s(&input), "--out", s(&out)]));
    let original = load_image(&input).unwrap();
    let composite = load_image(&out).unwrap();
    let mask = load_image(&dir.path().join("filled-mask.pgm")).unwrap();
    assert!(dir.path().join("filled-raw.ppm").exists());
    let mut kept = 0;
    for y in 0..32 {
        for x in 0..32 {
            if mask.get(0, 0, y, x) == 0.0 {
                for c in 0..3 {
                    assert_eq!(composite.get(0, c, y, x), original.get(0, c, y, x), "context pixel ({y},{x})");
                }
                kept += 1;
            }
        }
    }
    assert!(kept > 0 && kept < 32 * 32);

    let report = dir.path().join("report");
    let o = cenc(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--format", "json", "--out", s(&report)]);
    assert_ok(&o);
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(json.is_object());
    assert!(report.join("report.json").exists() && report.join("report.txt").exists());
}

#[test]
fn nn_finds_exact_duplicate() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path());
    let query = data.join("synth-0007.ppm");
    let o = cenc(&["nn", "--ckpt", s(&ckpt), "--data", s(&data), "--input", s(&query), "--format", "json"]);
    assert_ok(&o);
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows[0]["distance"], 0.0);
    assert_eq!(rows[0]["id"].as_str().unwrap(), "synth-0007.ppm");
    assert_eq!(rows.as_array().unwrap().len(), 12);
}

#[test]
fn resume_refuses_a_new_config() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path());
    let cfg = dir.path().join("small.toml");
    let o = cenc(&[
        "train", "--config", s(&cfg), "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&dir.path().join("again")),
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = cenc(&[
        "train", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&dir.path().join("again")), "--iterations", "5",
    ]);
    assert_ok(&o);
}

#[test]
fn gradcheck_passes() {
    let o = cenc(&["gradcheck", "--format", "json"]);
    assert_ok(&o);
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(!rows.as_array().unwrap().is_empty());
}

#[test]
fn exit_codes_separate_usage_and_data_errors() {
    assert_eq!(cenc(&["gradcheck", "--no-such-flag"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let o = cenc(&["train", "--data", s(&missing), "--out", s(&dir.path().join("out")), "--iterations", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(cenc(&["--help"]).status.success());
}
