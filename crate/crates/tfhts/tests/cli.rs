use std::fs;
use std::path::{Path, PathBuf};

use tfhts::cli::{run, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME};
use tfhts::config::load_config;
use tfhts::report::read_report;

fn tfhts(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("tfhts").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// Small synthetic setup that trains in well under a second per arm.
fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = r#"{
        "seed": 3,
        "input_len": 7,
        "horizons": [7],
        "window_stride": 14,
        "encoder": { "d_ts": 8, "n_layers": 1, "n_heads": 2, "d_ff": 16 },
        "train": { "max_epochs": 2, "lr": 1e-3, "batch_size": 16 },
        "synthetic": { "n_channels": 8, "n_regimes": 4, "periods": 20, "d_tx": 8 }
    }"#;
    let p = dir.join("tiny.json");
    fs::write(&p, cfg).unwrap();
    p
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let (code, _, err) = tfhts(&["train", "--bogus"]);
    assert_eq!(code, EXIT_INVALID);
    assert!(err.contains("Usage"), "{err}");
    let (code, _, _) = tfhts(&["frobnicate"]);
    assert_eq!(code, EXIT_INVALID);
    let (code, out, _) = tfhts(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("grad-check"));
}

#[test]
fn invalid_config_exits_one_with_key() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"train": {"max_epochs": 0}}"#).unwrap();
    let (code, _, err) = tfhts(&["train", "--config", p.to_str().unwrap()]);
    assert_eq!(code, EXIT_INVALID);
    assert!(err.contains("train.max_epochs"), "{err}");
}

#[test]
fn missing_files_are_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    fs::write(&p, r#"{"data": {"series": "/nonexistent/series.csv"}}"#).unwrap();
    let (code, _, err) = tfhts(&["train", "--config", p.to_str().unwrap(), "--no-text"]);
    assert_eq!(code, EXIT_RUNTIME, "{err}");
    let (code, _, _) = tfhts(&[
        "evaluate",
        "--checkpoint",
        dir.path().join("none.tfhc").to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_RUNTIME);
}

#[test]
fn grad_check_passes() {
    let (code, out, _) = tfhts(&["grad-check"]);
    assert_eq!(code, EXIT_OK);
    let last = out.lines().last().unwrap();
    let v: f64 = last.trim_start_matches("max relative error: ").parse().unwrap();
    assert!(v < 1e-4, "{last}");
}

#[test]
fn gen_synthetic_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let (code, _, err) = tfhts(&["gen-synthetic", "--seed", "7", "--out", d.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK, "{err}");
    }
    for f in ["series.csv", "texts.jsonl", "embeddings.tfhe", "spec.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    tfhts(&["gen-synthetic", "--seed", "8", "--out", c.to_str().unwrap()]);
    assert_ne!(fs::read(a.join("series.csv")).unwrap(), fs::read(c.join("series.csv")).unwrap());
}

#[test]
fn generated_files_feed_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg_path = tiny_config(dir.path());
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    let (code, _, _) = tfhts(&["gen-synthetic", "--config", cfg_path.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    cfg["data"] = serde_json::json!({
        "series": data.join("series.csv"),
        "texts": data.join("texts.jsonl"),
        "embeddings": data.join("embeddings.tfhe"),
    });
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = dir.path().join("run");
    let (code, stdout, err) = tfhts(&["train", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(stdout.starts_with("h=7:"));
    assert!(out.join("model_h7.tfhc").exists());
    assert!(out.join("train_log_h7.json").exists());
    let (code, stdout, err) = tfhts(&["evaluate", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(stdout.contains("wt-mean"));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics_h7.json")).unwrap()).unwrap();
    assert_eq!(m["n_windows"], 8 * 4);
    let (code, stdout, _) = tfhts(&[
        "evaluate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--strategy",
        "cls",
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("wt-cls"));
}

#[test]
fn ablate_covers_every_cell_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("ablate");
    let (code, stdout, err) = tfhts(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--horizons",
        "7,14",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(stdout.lines().count(), 2 * 4);
    let doc = read_report(&out.join("report.json")).unwrap();
    assert_eq!(doc.ablation.cells.len(), 8);
    assert_eq!(doc.ablation.horizons, vec![7, 14]);
    let mae = fs::read_to_string(out.join("mae.csv")).unwrap();
    assert!(mae.starts_with("arm,h=7,h=14\nwo,"));
    assert_eq!(mae.lines().count(), 5);

    let (code, _, err) = tfhts(&["export-report", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let md = fs::read_to_string(out.join("tables.md")).unwrap();
    assert!(md.contains("**"));
    assert_eq!(fs::read_to_string(out.join("mae.csv")).unwrap(), mae);
}

#[test]
fn ablate_without_text_has_only_the_series_arm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("wo");
    let (code, stdout, err) = tfhts(&["ablate", "--config", cfg.to_str().unwrap(), "--no-text", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.contains(" wo:"));
}

#[test]
fn shipped_configs_load() {
    let root = manifest_dir().join("../../configs");
    let wiki = load_config(&root.join("wiki_people.json")).unwrap();
    assert_eq!(wiki.input_len, 7);
    assert_eq!(wiki.horizons, vec![7, 14, 21, 28, 35]);
    assert_eq!(wiki.train.max_epochs, 100);
    assert_eq!(wiki.train.early_stop_delta, 1e-4);
    let news = load_config(&root.join("news.json")).unwrap();
    assert_eq!(news.input_len, 9);
    assert_eq!(news.horizons, vec![1, 3, 9, 12, 15]);
    let syn = load_config(&root.join("synthetic.json")).unwrap();
    assert_eq!(syn.window_stride, syn.synthetic.period_len());
    for cfg in [wiki, news, syn] {
        assert_eq!(tfhts::config::parse_config(&cfg.to_json()).unwrap(), cfg);
    }
}
