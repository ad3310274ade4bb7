use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rgcl(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_rgcl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "rgcl {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) {
    rgcl(&[
        "synth", "--out", p(dir), "--users", "40", "--items", "30", "--ratings-per-user", "12", "--dim", "8",
        "--raw-dim", "24",
    ]);
}

fn config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.txt");
    fs::write(&path, "# small model\ndim = 8\nmax_epochs = 3\nbatch_size = 64\nlearning_rate = 0.005\n").unwrap();
    path
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).expect("valid json")
}

#[test]
fn deterministic_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let cfg = config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        rgcl(&["--deterministic", "train", "--data", p(&data), "--config", p(&cfg), "--out", p(out)]);
    }
    for file in ["metrics.json", "checkpoint.rgck", "trace.csv", "config.txt"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let metrics = json(&fs::read(a.join("metrics.json")).unwrap());
    assert!(metrics["runtime_seconds"].is_null());
    assert_eq!(metrics["runs"].as_array().unwrap().len(), 1);
    assert_eq!(fs::read_to_string(a.join("trace.csv")).unwrap().lines().count(), 4);

    // evaluating the checkpoint reproduces the reported test error
    let ck = a.join("checkpoint.rgck");
    let eval = json(&rgcl(&["evaluate", "--data", p(&data), "--checkpoint", p(&ck)]).stdout);
    assert_eq!(eval["mse"], metrics["test_mse"]);
    assert_eq!(eval["which"], "test");
    let valid = json(&rgcl(&["evaluate", "--data", p(&data), "--checkpoint", p(&ck), "--which", "valid"]).stdout);
    assert_eq!(valid["which"], "valid");

    let csv = tmp.path().join("groups.csv");
    let report = json(&rgcl(&["sparsity-report", "--data", p(&data), "--checkpoint", p(&ck), "--csv", p(&csv)]).stdout);
    assert_eq!(report["groups"].as_array().unwrap().len(), 5);
    assert_eq!(report["overall_mse"], metrics["test_mse"]);
    assert!(fs::read_to_string(&csv).unwrap().lines().count() >= 6);

    let seeded = tmp.path().join("c");
    rgcl(&["--deterministic", "--seed", "9", "train", "--data", p(&data), "--config", p(&cfg), "--out", p(&seeded)]);
    assert_ne!(fs::read(a.join("checkpoint.rgck")).unwrap(), fs::read(seeded.join("checkpoint.rgck")).unwrap());
}

#[test]
fn ablation_and_sweep_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let cfg = config(tmp.path());
    let out = tmp.path().join("ablation");
    rgcl(&[
        "--deterministic", "ablate", "--data", p(&data), "--config", p(&cfg), "--out", p(&out), "--variants",
        "rg,rgcl", "--seeds", "0,1",
    ]);
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "variant,runs,test_mse_mean,test_mse_std");
    assert!(lines[1].starts_with("rg,2,") && lines[2].starts_with("rgcl,2,"));
    assert_eq!(fs::read_to_string(out.join("runs.csv")).unwrap().lines().count(), 5);
    for v in ["rg", "rgcl"] {
        for s in [0, 1] {
            assert!(out.join(v).join(format!("seed{s}")).join("checkpoint.rgck").exists());
        }
        let m = json(&fs::read(out.join(v).join("metrics.json")).unwrap());
        assert_eq!(m["seeds"], serde_json::json!([0, 1]));
        assert!(m["std"].is_number());
    }

    let csv = tmp.path().join("sweep/grid.csv");
    rgcl(&[
        "sweep", "--data", p(&data), "--config", p(&cfg), "--out", p(&csv), "--alphas", "0,0.5", "--betas", "0.2",
    ]);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 3);
}

#[test]
fn prepare_and_embed_from_json_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let mut jsonl = String::new();
    for u in 0..8 {
        for i in 0..7 {
            let rating = (u * 3 + i) % 5 + 1;
            let _ = writeln!(
                jsonl,
                r#"{{"reviewerID": "u{u}", "asin": "i{i}", "overall": {rating}, "reviewText": "word{} and word{}"}}"#,
                (u + i) % 4,
                u % 3
            );
        }
    }
    let input = tmp.path().join("reviews.jsonl");
    fs::write(&input, jsonl).unwrap();
    let data = tmp.path().join("data");
    rgcl(&["prepare", "--input", p(&input), "--out", p(&data)]);
    for f in ["interactions.tsv", "split.txt", "users.tsv", "items.tsv"] {
        assert!(data.join(f).exists(), "{f}");
    }
    rgcl(&["embed", "--data", p(&data), "--raw-dim", "32", "--dim", "4"]);
    assert!(data.join("reviews.rgeb").exists());

    let cfg = tmp.path().join("cfg.txt");
    fs::write(&cfg, "dim = 4\nmax_epochs = 2\nbatch_size = 16\n").unwrap();
    let out = tmp.path().join("run");
    let metrics = json(&rgcl(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out)]).stdout);
    assert!(metrics["test_mse"].as_f64().unwrap().is_finite());
    assert!(metrics["runtime_seconds"].is_number());
}

#[test]
fn import_with_mismatched_manifest_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let raw = data.join("raw_reviews.rgeb");
    let manifest = tmp.path().join("bad.manifest.json");
    fs::write(
        &manifest,
        r#"{"encoder": "x", "pooling": "mean", "raw_dim": 24, "row_count": 480, "checksum": "00"}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rgcl"))
        .args(["embed", "--data", p(&data), "--mode", "import", "--import", p(&raw), "--manifest", p(&manifest), "--dim", "8"])
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));

    // without a manifest the import goes ahead
    rgcl(&["embed", "--data", p(&data), "--mode", "import", "--import", p(&raw), "--dim", "8"]);
}
