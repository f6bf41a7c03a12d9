use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use f3dn::bench::{load_cloud, CloudFormat};
use f3dn::net::ModelWeights;
use f3dn::register::{compute_descriptors, detect_keypoints, match_descriptors, ransac_register, InferenceConfig};
use f3dn::seeded_rng;

fn f3dn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_f3dn"))
        .args(args)
        .env_remove("RUST_LOG")
        .env("F3DN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_CONFIG: &str = "\
# small enough for a test run
tau_p=6
tau_n=12
batch_triplets=2
lr=0.001
clusters=8
cluster_cap=8
crop_r=8
dropout_n=512
pretrain_epochs=1
main_epochs=1
context_dim=16
descriptor_dim=8
";

fn synth(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join("data");
    let o = f3dn(&[
        "synth", "--out", s(&out), "--pairs", "3", "--extent", "60", "--structures", "8", "--density", "8",
        "--radius", "8", "--path-step", "14", "--max-offset", "2", "--seed", seed,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let data = synth(dir, "3");
    let cfg = dir.join("train.cfg");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let w = dir.join("model.f3dn");
    let o = f3dn(&[
        "train", "--data", s(&data), "--out", s(&w), "--config", s(&cfg), "--loss-csv", s(&dir.join("loss.csv")),
        "--seed", "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (data, w)
}

#[test]
fn help_and_usage_errors() {
    let o = f3dn(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));

    let o = f3dn(&["detect", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let o = f3dn(&["detect", "--input", "x.bin", "--weights", "/nonexistent/w.f3dn"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/w.f3dn"));

    let o = f3dn(&["synth", "--out", "/tmp/x", "--format", "laz"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_is_byte_identical_under_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (da, db) = (synth(a.path(), "11"), synth(b.path(), "11"));
    let mut names: Vec<_> = std::fs::read_dir(&da).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 8);
    for n in names {
        assert_eq!(std::fs::read(da.join(&n)).unwrap(), std::fs::read(db.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn train_register_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (data, w) = trained(dir.path());
    let loss = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert!(loss.starts_with("step,phase,loss\n"));
    assert!(loss.lines().count() > 2);

    // register emits the transform of the library pipeline, bit for bit
    let (src, dst) = (data.join("data_00000.bin"), data.join("data_00001.bin"));
    let o = f3dn(&[
        "register", "--source", s(&src), "--target", s(&dst), "--weights", s(&w), "--seed", "5", "--cluster-cap",
        "8", "--max-keypoints", "64",
    ]);
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let got: Vec<f64> = json["row_major"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();

    let weights = ModelWeights::load(&w).unwrap();
    let cfg = InferenceConfig {
        cluster_cap: 8,
        max_keypoints: 64,
        seed: 5,
        ..InferenceConfig::default()
    };
    let a = load_cloud(&src, CloudFormat::XyzBin).unwrap();
    let b = load_cloud(&dst, CloudFormat::XyzBin).unwrap();
    let fa = compute_descriptors(&a, &detect_keypoints(&a, &weights, &cfg).unwrap(), &weights, &cfg).unwrap();
    let fb = compute_descriptors(&b, &detect_keypoints(&b, &weights, &cfg).unwrap(), &weights, &cfg).unwrap();
    let corr = match_descriptors(&fa, &fb).unwrap();
    let lib = ransac_register(&corr, &Default::default(), &mut seeded_rng(5)).unwrap();
    assert_eq!(got, lib.transform.to_row_major().to_vec());
    assert_eq!(json["iterations"].as_u64().unwrap() as usize, lib.iterations);

    let out = dir.path().join("reports");
    let run = |stem: &str| {
        let o = f3dn(&[
            "eval-reg", "--data", s(&data), "--weights", s(&w), "--out-dir", s(&out), "--stem", stem, "--seed", "2",
            "--cluster-cap", "8", "--max-keypoints", "64",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("a");
    run("b");
    for ext in ["csv", "json"] {
        let x = std::fs::read(out.join(format!("a.{ext}"))).unwrap();
        assert_eq!(x, std::fs::read(out.join(format!("b.{ext}"))).unwrap());
    }
    let rows = std::fs::read_to_string(out.join("a.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);

    let o = f3dn(&["detect", "--input", s(&src), "--weights", s(&w), "--cluster-cap", "8"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("index,x,y,z,attention\n"));
    let o = f3dn(&["describe", "--input", s(&src), "--weights", s(&w), "--cluster-cap", "8", "--max-keypoints", "4"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("x,y,z,theta,attention,d0,"));
    assert!(text.lines().count() <= 5);

    let curve = dir.path().join("curve.csv");
    let o = f3dn(&[
        "eval-prec", "--data", s(&data), "--weights", s(&w), "--cluster-cap", "8", "--max-keypoints", "32", "--out",
        s(&curve),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let precision: Vec<f64> = std::fs::read_to_string(&curve)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(precision.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn training_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, wa) = trained(a.path());
    let (_, wb) = trained(b.path());
    assert_eq!(std::fs::read(wa).unwrap(), std::fs::read(wb).unwrap());
    assert_eq!(
        std::fs::read(a.path().join("loss.csv")).unwrap(),
        std::fs::read(b.path().join("loss.csv")).unwrap()
    );
}

#[test]
fn gradcheck_subcommand_passes() {
    let o = f3dn(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
}

#[test]
fn train_without_triplets_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "4");
    let cfg = dir.path().join("far.cfg");
    std::fs::write(&cfg, "tau_n=500\n").unwrap();
    let o = f3dn(&["train", "--data", s(&data), "--out", s(&dir.path().join("w")), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no valid triplets"));
}
