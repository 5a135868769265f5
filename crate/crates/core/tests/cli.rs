use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_midorf");

fn run(args: &[&str], threads: &str) -> Output {
    Command::new(BIN)
        .args(args)
        .env("MIDORF_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args, "1");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn small_config(dir: &Path, levels: usize) -> PathBuf {
    let path = dir.join("synth.json");
    let config = json!({
        "num_datasets": 2,
        "n_train": 12,
        "n_test": 6,
        "n_val": 6,
        "length_range": [5, 8],
        "feature_dim": 3,
        "num_levels": levels,
        "pool_size": 200
    });
    std::fs::write(&path, config.to_string()).unwrap();
    path
}

/// Generates the small suite once per test and returns its directory.
fn generated(tmp: &TempDir, levels: usize) -> PathBuf {
    let out = tmp.path().join("gen");
    let config = small_config(tmp.path(), levels);
    ok(&["generate", "--out", p(&out), "--seed", "5", "--config", p(&config)]);
    out
}

fn train_midorf(tmp: &TempDir, gen: &Path, name: &str, threads: &str) -> PathBuf {
    let model = tmp.path().join(name);
    let out = run(
        &[
            "train",
            "--method",
            "midorf",
            "--train",
            p(&gen.join("dataset_00/train.jsonl")),
            "--out",
            p(&model),
            "--alpha",
            "0.5",
            "--seed",
            "3",
            "--max-iterations",
            "40",
            "--levels",
            "3",
        ],
        threads,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    model
}

#[test]
fn generate_writes_suite_deterministically() {
    let tmp = TempDir::new().unwrap();
    let gen = generated(&tmp, 3);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(gen.join("manifest.json")).unwrap()).unwrap();
    let entries = manifest["datasets"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[0]["truth"]["transition"].as_array().unwrap().len(), 3);
    for e in entries {
        for split in ["train", "test", "val"] {
            let records = lines(&gen.join(e[split].as_str().unwrap()));
            assert!(!records.is_empty());
            for r in records {
                assert!(r["label"].as_u64().unwrap() < 3);
                let inst = r["instance_labels"].as_array().unwrap();
                assert!(inst.iter().all(|l| l.as_u64().unwrap() < 3));
                let top = inst.iter().map(|l| l.as_u64().unwrap()).max().unwrap();
                assert_eq!(top, r["label"].as_u64().unwrap());
            }
        }
    }
    let again = tmp.path().join("again");
    let config = small_config(tmp.path(), 3);
    ok(&["generate", "--out", p(&again), "--seed", "5", "--config", p(&config)]);
    for f in ["manifest.json", "dataset_00/train.jsonl", "dataset_01/val.jsonl"] {
        assert_eq!(
            std::fs::read(gen.join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn train_is_deterministic_and_worker_count_independent() {
    let tmp = TempDir::new().unwrap();
    let gen = generated(&tmp, 3);
    let a = train_midorf(&tmp, &gen, "a.json", "1");
    let b = train_midorf(&tmp, &gen, "b.json", "1");
    let c = train_midorf(&tmp, &gen, "c.json", "3");
    let read = |m: &Path| std::fs::read_to_string(m).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a), read(&c));
    let model: Value = serde_json::from_str(&read(&a)).unwrap();
    assert_eq!(model["format_version"], 1);
    assert_eq!(model["method"], "midorf");
    assert_eq!(model["scale"], 3);
    assert_eq!(model["feature_dim"], 3);
    assert_eq!(model["train_meta"]["seed"], 3);
    assert!(tmp.path().join("a.json.trace.json").exists());
}

#[test]
fn grid_training_selects_from_the_grid() {
    let tmp = TempDir::new().unwrap();
    let gen = generated(&tmp, 3);
    let model = tmp.path().join("m.json");
    ok(&[
        "train",
        "--method",
        "hcorf",
        "--train",
        p(&gen.join("dataset_00/train.jsonl")),
        "--val",
        p(&gen.join("dataset_00/val.jsonl")),
        "--out",
        p(&model),
        "--alpha-grid",
        "0.1,10",
        "--max-iterations",
        "20",
        "--levels",
        "3",
    ]);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    let alpha = m["train_meta"]["alpha"].as_f64().unwrap();
    assert!(alpha == 0.1 || alpha == 10.0);
}

#[test]
fn predictions_respect_shapes_and_the_max_rule() {
    let tmp = TempDir::new().unwrap();
    let gen = generated(&tmp, 3);
    let model = train_midorf(&tmp, &gen, "m.json", "1");
    let data = gen.join("dataset_00/test.jsonl");
    let pred = tmp.path().join("pred.jsonl");
    ok(&[
        "predict",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--out",
        p(&pred),
        "--level",
        "both",
    ]);
    let truth = lines(&data);
    let preds = lines(&pred);
    assert_eq!(truth.len(), preds.len());
    for (t, r) in truth.iter().zip(&preds) {
        assert_eq!(t["id"], r["id"]);
        let frames = r["frame_preds"].as_array().unwrap();
        assert_eq!(frames.len(), t["instances"].as_array().unwrap().len());
        let top = frames.iter().map(|f| f.as_u64().unwrap()).max().unwrap();
        assert!(top <= r["bag_pred"].as_u64().unwrap());
        let post: f64 = r["bag_posterior"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .sum();
        assert!((post - 1.0).abs() < 1e-8);
    }

    let seq = tmp.path().join("seq.jsonl");
    ok(&[
        "predict",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--out",
        p(&seq),
        "--level",
        "sequence",
    ]);
    let first = &lines(&seq)[0];
    assert!(first.get("frame_preds").is_none() && first.get("bag_pred").is_some());
}

#[test]
fn evaluate_joins_by_id() {
    let tmp = TempDir::new().unwrap();
    let gen = generated(&tmp, 3);
    let data = gen.join("dataset_00/test.jsonl");
    let truth = lines(&data);
    let perfect: Vec<String> = truth
        .iter()
        .rev()
        .map(|r| json!({"id": r["id"], "bag_pred": r["label"], "frame_preds": r["instance_labels"]}).to_string())
        .collect();
    let pred = tmp.path().join("perfect.jsonl");
    std::fs::write(&pred, perfect.join("\n") + "\n").unwrap();
    let report_path = tmp.path().join("report.json");
    let out = ok(&[
        "evaluate",
        "--pred",
        p(&pred),
        "--data",
        p(&data),
        "--out",
        p(&report_path),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ICC"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["frame"]["mae"], 0.0);
    assert_eq!(report["sequence"]["acc"], 1.0);
    assert_eq!(report["sequence"]["f1_macro"], 1.0);
    assert!((report["frame"]["icc"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let shuffled = tmp.path().join("shuffled.jsonl");
    let mut rotated = perfect.clone();
    rotated.rotate_left(2);
    std::fs::write(&shuffled, rotated.join("\n") + "\n").unwrap();
    let report2 = tmp.path().join("report2.json");
    ok(&[
        "evaluate",
        "--pred",
        p(&shuffled),
        "--data",
        p(&data),
        "--out",
        p(&report2),
    ]);
    assert_eq!(std::fs::read(&report_path).unwrap(), std::fs::read(&report2).unwrap());

    let missing = tmp.path().join("missing.jsonl");
    std::fs::write(&missing, perfect[1..].join("\n") + "\n").unwrap();
    let out = run(
        &[
            "evaluate",
            "--pred",
            p(&missing),
            "--data",
            p(&data),
            "--out",
            p(&report2),
        ],
        "1",
    );
    assert_eq!(out.status.code(), Some(3));
    let dropped = truth.last().unwrap()["id"].as_str().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains(dropped));
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let tmp = TempDir::new().unwrap();
    let out = run(
        &["train", "--method", "svm", "--train", "x", "--out", "y", "--alpha", "1"],
        "1",
    );
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["generate", "--out", p(tmp.path()), "--seed", "1"], "lots");
    assert_eq!(out.status.code(), Some(2));

    let absent = tmp.path().join("absent.jsonl");
    let out = run(
        &[
            "train",
            "--method",
            "mir",
            "--train",
            p(&absent),
            "--out",
            "m",
            "--alpha",
            "1",
        ],
        "1",
    );
    assert_eq!(out.status.code(), Some(5));

    let bad = tmp.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":\"a\",\"label\":4,\"instances\":[[1.0]]}\n").unwrap();
    let out = run(
        &[
            "train",
            "--method",
            "mir",
            "--train",
            p(&bad),
            "--out",
            "m",
            "--alpha",
            "1",
            "--levels",
            "3",
        ],
        "1",
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("validation"));
}

#[test]
fn benchmark_summary_is_mean_of_dataset_files() {
    let tmp = TempDir::new().unwrap();
    let config = small_config(tmp.path(), 3);
    let out_dir = tmp.path().join("bench");
    let out = ok(&[
        "benchmark",
        "--seed",
        "2",
        "--out",
        p(&out_dir),
        "--config",
        p(&config),
        "--methods",
        "midorf,sil-or,mir",
        "--alpha-grid",
        "1",
        "--max-iterations",
        "25",
    ]);
    let table = String::from_utf8_lossy(&out.stdout);
    for col in ["CORR", "MAE", "ICC", "ACC", "F1", "MI-DORF", "SIL-OR", "MIR"] {
        assert!(table.contains(col), "{col}");
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    let per: Vec<Value> = (0..2)
        .map(|i| {
            serde_json::from_str(&std::fs::read_to_string(out_dir.join(format!("dataset_{i:02}.json"))).unwrap())
                .unwrap()
        })
        .collect();
    for (k, row) in summary.as_array().unwrap().iter().enumerate() {
        let mean_acc = per
            .iter()
            .map(|d| d["runs"][k]["report"]["sequence"]["acc"].as_f64().unwrap())
            .sum::<f64>()
            / 2.0;
        assert!((row["seq_acc"].as_f64().unwrap() - mean_acc).abs() < 1e-12);
        let mean_mae = per
            .iter()
            .map(|d| d["runs"][k]["report"]["frame"]["mae"].as_f64().unwrap())
            .sum::<f64>()
            / 2.0;
        assert!((row["frame_mae"].as_f64().unwrap() - mean_mae).abs() < 1e-12);
    }
}
