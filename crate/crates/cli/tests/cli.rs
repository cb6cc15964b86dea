use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn gdimpute(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdimpute"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synthetic() -> Value {
    json!({
        "components": [
            {"name": "frame", "numeric": 3},
            {"name": "bar", "numeric": 2},
            {"name": "wheel", "numeric": 2}
        ],
        "edges": [["frame", "bar"], ["frame", "wheel"]],
        "coupling": 0.7,
        "rows": 60
    })
}

fn quick_config(dir: &Path) {
    let cfg = json!({
        "synthetic": synthetic(),
        "model": {
            "graph": {"hidden_dim": 8},
            "fusion": {"d_token": 8},
            "denoiser": {"blocks": 1, "width": 8, "time_embed_dim": 8}
        },
        "train": {"epochs": 2, "batch_size": 16},
        "masking": {"missing_fraction": 0.2, "seed": 3},
        "samples": 3,
        "seed": 11
    });
    std::fs::write(dir.join("exp.json"), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
}

fn report(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn train_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    quick_config(d);
    let a = gdimpute(&["train", "--config", "exp.json", "--out", "a.ckpt"], d);
    ok(&a);
    let b = gdimpute(&["train", "--config", "exp.json", "--out", "b.ckpt"], d);
    ok(&b);
    let digest = |o: &Output| {
        String::from_utf8_lossy(&o.stdout)
            .split_whitespace()
            .last()
            .unwrap()
            .to_string()
    };
    assert_eq!(digest(&a).len(), 64);
    assert_eq!(digest(&a), digest(&b));
    let loss = std::fs::read_to_string(d.join("a.ckpt.loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,loss\n"));
    assert_eq!(loss.lines().count(), 3);

    let (model, _) = gdimpute_core::checkpoint::load(d.join("a.ckpt")).unwrap();
    assert!(model.is_trained());

    for out in ["r1.json", "r2.json"] {
        ok(&gdimpute(
            &["evaluate", "--config", "exp.json", "--checkpoint", "a.ckpt", "--out", out],
            d,
        ));
    }
    assert_eq!(
        std::fs::read(d.join("r1.json")).unwrap(),
        std::fs::read(d.join("r2.json")).unwrap()
    );
    let r = report(d, "r1.json");
    assert_eq!(r["method"], "diffusion");
    assert!(r["rmse"].is_number());
}

#[test]
fn missing_schema_path_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("exp.json"),
        r#"{"schema": "absent/schema.json", "graph": "graph.json", "data": "data.csv"}"#,
    )
    .unwrap();
    let out = gdimpute(&["train", "--config", "exp.json"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent/schema.json"));

    let out = gdimpute(&["train", "--config", "nowhere.json"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.json"));
}

#[test]
fn hotdeck_report_and_fixed_feature_study() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    quick_config(d);
    ok(&gdimpute(
        &["evaluate", "--config", "exp.json", "--method", "hotdeck", "--out", "hd.json"],
        d,
    ));
    let r = report(d, "hd.json");
    assert_eq!(r["method"], "hotdeck");
    assert_eq!(r["diversity_score"], 0.0);

    ok(&gdimpute(
        &[
            "evaluate", "--config", "exp.json", "--method", "forest", "--mask-feature", "style", "--out",
            "style.json",
        ],
        d,
    ));
    let r = report(d, "style.json");
    assert!(r["missing_per_row"].as_array().unwrap().iter().all(|m| m == 1));
    assert!(r["feature_kl"].get("style").is_some());
    assert!(r["rmse"].is_null());

    let out = gdimpute(
        &["evaluate", "--config", "exp.json", "--method", "hotdeck", "--mask-feature", "nope"],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    let out = gdimpute(&["evaluate", "--config", "exp.json", "--method", "svm"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn graph_ablation_reports_are_comparable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    quick_config(d);
    ok(&gdimpute(
        &["evaluate", "--config", "exp.json", "--method", "diffusion", "--ablate-graph", "none", "--out", "none.json"],
        d,
    ));
    ok(&gdimpute(
        &["evaluate", "--config", "exp.json", "--method", "diffusion", "--graph", "gatv2", "--out", "gat.json"],
        d,
    ));
    let (a, b) = (report(d, "none.json"), report(d, "gat.json"));
    assert_eq!(a["config"]["model"]["graph"]["variant"], "none");
    assert_eq!(b["config"]["model"]["graph"]["variant"], "gatv2");
    assert_eq!(a["missing_per_row"], b["missing_per_row"]);
    assert!(a["rmse"].is_number() && b["rmse"].is_number());
}

#[test]
fn synth_data_and_impute() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("syn.json"), synthetic().to_string()).unwrap();
    ok(&gdimpute(&["synth-data", "--config", "syn.json", "--seed", "4", "--out-dir", "syn"], d));
    for f in ["schema.json", "graph.json", "data.csv", "synthetic.json"] {
        assert!(d.join("syn").join(f).is_file(), "{f} missing");
    }
    let cfg = json!({
        "schema": "syn/schema.json",
        "graph": "syn/graph.json",
        "data": "syn/data.csv",
        "model": {
            "graph": {"hidden_dim": 8, "variant": "gcn"},
            "fusion": {"d_token": 8},
            "denoiser": {"blocks": 1, "width": 8, "time_embed_dim": 8}
        },
        "train": {"epochs": 1, "batch_size": 16}
    });
    std::fs::write(d.join("files.json"), cfg.to_string()).unwrap();
    ok(&gdimpute(&["train", "--config", "files.json", "--out", "m.ckpt"], d));

    let data = std::fs::read_to_string(d.join("syn/data.csv")).unwrap();
    let mut lines = data.lines();
    let header = lines.next().unwrap();
    let mut partial = format!("{header}\n");
    let originals: Vec<&str> = lines.take(4).collect();
    for line in &originals {
        let cells: Vec<&str> = line.split(',').collect();
        partial.push_str(&format!(",{}\n", cells[1..].join(",")));
    }
    std::fs::write(d.join("partial.csv"), partial).unwrap();
    ok(&gdimpute(
        &["impute", "--checkpoint", "m.ckpt", "--input", "partial.csv", "--samples", "4", "--out", "done.csv"],
        d,
    ));
    let done = std::fs::read_to_string(d.join("done.csv")).unwrap();
    let rows: Vec<&str> = done.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for (row, orig) in rows.iter().zip(&originals) {
        let cells: Vec<&str> = row.split(',').collect();
        assert!(!cells[0].is_empty());
        assert_eq!(cells[1..], orig.split(',').collect::<Vec<_>>()[1..]);
    }
}
