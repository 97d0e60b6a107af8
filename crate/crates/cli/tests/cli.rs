use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn qe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qe"))
        .args(args)
        .env_remove("QE_WORKERS")
        .output()
        .expect("spawn qe")
}

fn qe_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qe"))
        .args(args)
        .env(key, value)
        .output()
        .expect("spawn qe")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(dir: &Path, languages: usize) -> PathBuf {
    let cfg = json!({
        "corpus": {
            "kind": "synth",
            "languages": languages,
            "spec": { "n_train": 160, "n_dev": 40, "n_test": 48, "seed": 3 }
        },
        "seeds": [1],
        "model": {
            "vocab_size": 512, "max_positions": 32, "d_model": 16, "n_heads": 2,
            "d_ff": 32, "n_layers": 3, "head_hidden": 8, "head_mode": "regression"
        },
        "train": { "max_epochs": 2, "patience": 2, "batch_size": 16 },
        "bench": { "warmup": 1, "reps": 10, "n_pairs": 4 },
        "out_dir": dir.join("out")
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    let o = qe(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--no-such-flag"));
    assert_eq!(qe(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(qe(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_config_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"seeds": [1]}"#).unwrap();
    let o = qe(&["train", "--config", s(&path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing field `corpus`"), "{}", stderr(&o));

    fs::write(&path, r#"{"corpus": {"kind": "synth"}, "seeds": []}"#).unwrap();
    assert_eq!(qe(&["train", "--config", s(&path)]).status.code(), Some(1));
}

#[test]
fn synth_train_eval_bench() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&qe(&["synth", "--out-dir", s(&data), "--n-train", "160", "--n-dev", "40", "--n-test", "48"]));
    for f in ["train.tsv", "dev.tsv", "test.tsv", "spec.json"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    let cfg = json!({
        "corpus": { "kind": "tsv", "train": "data/train.tsv", "dev": "data/dev.tsv", "test": "data/test.tsv" },
        "seeds": [4],
        "model": {
            "vocab_size": 256, "max_positions": 32, "d_model": 16, "n_heads": 2,
            "d_ff": 32, "n_layers": 2, "head_hidden": 8, "head_mode": "regression"
        },
        "train": { "max_epochs": 2, "patience": 2, "batch_size": 16 },
        "bench": { "warmup": 1, "reps": 10, "n_pairs": 4 }
    });
    let cfg_path = dir.path().join("exp.json");
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = dir.path().join("trained");
    ok(&qe(&["train", "--config", s(&cfg_path), "--out-dir", s(&out)]));
    let ckpt = out.join("seed-4/model.ckpt");
    assert!(ckpt.is_file());
    let history: Value = serde_json::from_str(&fs::read_to_string(out.join("seed-4/history.json")).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 2);

    let report_path = dir.path().join("eval.json");
    let dump = dir.path().join("samples.csv");
    let text = ok(&qe(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--test",
        s(&data.join("test.tsv")),
        "--thresholds",
        "51,70",
        "--out",
        s(&report_path),
        "--dump",
        s(&dump),
    ]));
    let report: Value = serde_json::from_str(&text).unwrap();
    for m in ["pearson", "f1_51", "f1_70"] {
        assert!(report["overall"][m]["mean"].is_f64(), "{m}");
    }
    assert_eq!(fs::read_to_string(&report_path).unwrap().trim(), text.trim());
    assert_eq!(fs::read_to_string(&dump).unwrap().lines().count(), 49);

    let wrong_mode = qe(&["eval", "--checkpoint", s(&ckpt), "--test", s(&data.join("test.tsv")), "--mode", "cls"]);
    assert_eq!(wrong_mode.status.code(), Some(1));

    let table = ok(&qe(&[
        "bench",
        "--checkpoint",
        s(&ckpt),
        "--test",
        s(&data.join("test.tsv")),
        "--warmup",
        "1",
        "--reps",
        "10",
        "--n-pairs",
        "4",
        "--out-dir",
        s(&dir.path().join("bench")),
    ]));
    for row in ["embedding", "encoder-per-layer", "head", "total"] {
        assert!(table.contains(row), "{row}");
    }
    let csv = fs::read_to_string(dir.path().join("bench/bench.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "module,params,latency_ms_mean,latency_ms_median");
    assert_eq!(csv.lines().count(), 5);

    let out_c = dir.path().join("compressed");
    ok(&qe(&[
        "compress",
        "--config",
        s(&cfg_path),
        "--checkpoint",
        s(&ckpt),
        "--technique",
        "layer-prune",
        "--drops",
        "1",
        "--out-dir",
        s(&out_c),
    ]));
    assert!(out_c.join("layer-prune-1/model.ckpt").is_file());

    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, bytes).unwrap();
    let o = qe(&["eval", "--checkpoint", s(&bad), "--test", s(&data.join("test.tsv"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("checksum"));

    let flat = dir.path().join("flat.tsv");
    fs::write(
        &flat,
        "index\toriginal\ttranslation\tmean\tz_mean\tlang_pair\n0\tw1 w2\tw1 w2\t50\t0\ts0\n1\tw3\tw3\t50\t0\ts0\n",
    )
    .unwrap();
    let o = qe(&["eval", "--checkpoint", s(&ckpt), "--test", s(&flat)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let o = qe(&["eval", "--checkpoint", s(&ckpt), "--test", s(&dir.path().join("missing.tsv"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn metric_columns(csv: &str) -> Vec<String> {
    // Everything but the latency-derived speedup column.
    csv.lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            [&f[..3], &f[4..]].concat().join(",")
        })
        .collect()
}

#[test]
fn sweep_report_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let out = dir.path().join("seq");
    ok(&qe(&[
        "sweep",
        "--config",
        s(&cfg),
        "--technique",
        "layer-prune",
        "--drops",
        "1,2",
        "--seeds",
        "1,2",
        "--out-dir",
        s(&out),
    ]));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "technique,plan_param,seed,speedup,pearson,f1_51,f1_70,degradation_pearson_pct,degradation_f1_51_pct,degradation_f1_70_pct"
    );
    assert_eq!(lines.len(), 1 + 2 * 2 + 2);
    assert_eq!(lines.iter().filter(|l| l.starts_with("baseline,")).count(), 2);
    let svg = fs::read_to_string(out.join("sweep.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<circle"));

    let par = dir.path().join("par");
    ok(&qe_env(
        &[
            "sweep",
            "--config",
            s(&cfg),
            "--drops",
            "1,2",
            "--seeds",
            "1,2",
            "--out-dir",
            s(&par),
        ],
        "QE_WORKERS",
        "2",
    ));
    let par_csv = fs::read_to_string(par.join("sweep.csv")).unwrap();
    assert_eq!(metric_columns(&par_csv), metric_columns(&csv));

    let table = ok(&qe(&["report", s(&out)]));
    assert!(table.contains("/baseline"), "{table}");
    assert!(table.contains("/layer-prune-2"), "{table}");
    assert!(table.contains("±"), "{table}");
    assert!(table.contains("layer-prune"));

    assert_eq!(qe(&["report", s(&dir.path().join("nothing"))]).status.code(), Some(1));
    assert_eq!(
        qe_env(&["sweep", "--config", s(&cfg), "--drops", "1"], "QE_WORKERS", "zero").status.code(),
        Some(1)
    );
    assert_eq!(qe(&["sweep", "--config", s(&cfg), "--drops", "3"]).status.code(), Some(1));
}

#[test]
fn regimes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 2);
    let out = dir.path().join("regimes");
    let text = ok(&qe(&["regimes", "--config", s(&cfg), "--out-dir", s(&out), "--thresholds", "51"]));
    assert!(text.contains("ML<=BL"));
    let csv = fs::read_to_string(out.join("regimes.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "regime,lang,plan,metric,value,seed");
    // Two directions, two metrics, one plan level: a BL and an ML row each.
    assert_eq!(lines.len(), 1 + 2 * 2 * 2);
    assert!(out.join("regimes.svg").is_file());

    let single = tiny_config(&dir.path().join("one").tap_mkdir(), 1);
    assert_eq!(qe(&["regimes", "--config", s(&single)]).status.code(), Some(2));
}

trait TapMkdir {
    fn tap_mkdir(self) -> Self;
}

impl TapMkdir for PathBuf {
    fn tap_mkdir(self) -> Self {
        fs::create_dir_all(&self).unwrap();
        self
    }
}
