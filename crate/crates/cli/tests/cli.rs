//! End-to-end runs of the binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use explagg::aggregate::ExplanationSet;
use explagg::explain::{exact_shapley, CharacteristicGame};
use explagg::metrics::complexity;
use explagg::model::{Model, Target};
use explagg::report::AttributionDump;
use explagg::rng::rng_from;
use rand::Rng as _;
use serde_json::Value;
use tempfile::TempDir;

const IRIS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data/iris.csv");

fn workdir() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(IRIS, dir.path().join("iris.csv")).unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_explagg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn explagg")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "explagg {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn dump(path: PathBuf) -> AttributionDump {
    AttributionDump::from_text(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn report<'a>(v: &'a Value, criterion: &str) -> &'a Value {
    v["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["criterion"] == criterion)
        .unwrap_or_else(|| panic!("no {criterion} report"))
}

#[test]
fn missing_label_column_exits_with_error() {
    let dir = workdir();
    let out = run(
        dir.path(),
        &[
            "train",
            "--data",
            "iris.csv",
            "--label-col",
            "species",
            "--out",
            "m.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("label column `species` not found"), "{err}");
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn training_is_deterministic() {
    let dirs = [workdir(), workdir()];
    for dir in &dirs {
        ok(
            dir.path(),
            &[
                "train", "--data", "iris.csv", "--seed", "3", "--out", "m.json",
            ],
        );
    }
    let a = std::fs::read(dirs[0].path().join("m.json")).unwrap();
    assert_eq!(a, std::fs::read(dirs[1].path().join("m.json")).unwrap());
    let m = Model::<f64>::load(dirs[0].path().join("m.json")).unwrap();
    assert_eq!((m.input_dim(), m.output_dim()), (4, 3));
    let doc: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(doc["provenance"]["config"]["seed"], 3);
}

#[test]
fn grad_of_linear_model_is_its_weight_row() {
    let dir = workdir();
    let w = vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5, 0.0, 1.0];
    Model::linear(2, 4, w.clone(), vec![0.1, -0.1])
        .unwrap()
        .save(dir.path().join("lin.json"))
        .unwrap();
    ok(
        dir.path(),
        &[
            "explain",
            "--data",
            "iris.csv",
            "--model",
            "lin.json",
            "--explainer",
            "grad:target=logit",
            "--explainer",
            "gxi",
            "--out",
            "phi.csv",
        ],
    );
    let d = dump(dir.path().join("phi.csv"));
    let grads: Vec<_> = d
        .rows
        .iter()
        .filter(|r| r.explainer == "grad:target=logit")
        .collect();
    assert_eq!(grads.len(), 30);
    assert_eq!(d.rows.len(), 60);
    for r in &grads {
        assert!(r.values == w[..4] || r.values == w[4..], "{:?}", r.values);
        assert!(d
            .rows
            .iter()
            .any(|o| o.input_id == r.input_id && o.explainer == "gxi"));
    }
    let config = &d.provenance[0]["config"];
    assert_eq!(config["command"], "explain");
    assert_eq!(config["explainers"][0], "grad:target=logit");
}

#[test]
fn constant_explainer_has_zero_sensitivity() {
    let dir = workdir();
    ok(
        dir.path(),
        &[
            "evaluate",
            "--data",
            "iris.csv",
            "--explainer",
            "const",
            "--criterion",
            "avg_sensitivity",
            "--criterion",
            "max_sensitivity",
            "--radius",
            "1.0",
            "--out",
            "eval.json",
        ],
    );
    let v = json(dir.path().join("eval.json"));
    for c in ["avg_sensitivity", "max_sensitivity"] {
        let r = report(&v, c);
        assert!(r["count"].as_u64().unwrap() > 0);
        assert_eq!(r["mean"].as_f64(), Some(0.0));
    }
}

#[test]
fn empty_neighborhoods_are_skipped_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng_from(5, &[]);
    let mut csv = String::from("a,b,label\n");
    for i in 0..40 {
        csv.push_str(&format!(
            "{},{},{}\n",
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            i % 2
        ));
    }
    write(dir.path(), "pts.csv", &csv);
    ok(
        dir.path(),
        &[
            "evaluate",
            "--data",
            "pts.csv",
            "--explainer",
            "grad",
            "--criterion",
            "max_sensitivity",
            "--radius",
            "1e-12",
            "--out",
            "eval.json",
        ],
    );
    let r = report(&json(dir.path().join("eval.json")), "max_sensitivity").clone();
    assert_eq!(r["count"], 0);
    assert_eq!(r["skipped"], 8);
    assert!(r["mean"].is_null());
}

#[test]
fn report_statistics_match_per_point_values() {
    let dir = workdir();
    ok(
        dir.path(),
        &[
            "evaluate",
            "--data",
            "iris.csv",
            "--explainer",
            "gxi",
            "--explainer",
            "ig:steps=16",
            "--radius",
            "0.5",
            "--out",
            "eval.json",
        ],
    );
    let v = json(dir.path().join("eval.json"));
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 8);
    for r in reports {
        let vals: Vec<f64> = r["per_point"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["value"].as_f64().unwrap())
            .collect();
        assert_eq!(r["count"].as_u64().unwrap() as usize, vals.len());
        assert_eq!(r["skipped"].as_u64().unwrap() as usize + vals.len(), 30);
        if vals.is_empty() {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((r["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
        assert!((r["std"].as_f64().unwrap() - std).abs() < 1e-12);
    }
}

fn members_by_input(d: &AttributionDump) -> std::collections::BTreeMap<usize, Vec<Vec<f64>>> {
    let mut map = std::collections::BTreeMap::<usize, Vec<Vec<f64>>>::new();
    for r in &d.rows {
        map.entry(r.input_id).or_default().push(r.values.clone());
    }
    map
}

#[test]
fn aggregates_match_member_explanations() {
    let dir = workdir();
    let base = [
        "--data",
        "iris.csv",
        "--model",
        "m.json",
        "--explainer",
        "grad",
        "--explainer",
        "gxi",
    ];
    ok(
        dir.path(),
        &["train", "--data", "iris.csv", "--out", "m.json"],
    );
    ok(
        dir.path(),
        &[&["explain"][..], &base, &["--out", "members.csv"]].concat(),
    );
    for method in ["mean", "descent"] {
        let out = format!("{method}.csv");
        ok(
            dir.path(),
            &[
                &["aggregate"][..],
                &base,
                &["--method", method, "--out", &out],
            ]
            .concat(),
        );
    }
    let members = members_by_input(&dump(dir.path().join("members.csv")));
    let mean = dump(dir.path().join("mean.csv"));
    assert_eq!(mean.rows.len(), members.len());
    for r in &mean.rows {
        assert_eq!(r.explainer, "agg:mean");
        let set = ExplanationSet::new(members[&r.input_id].clone())
            .unwrap()
            .normalized()
            .unwrap();
        let m = set.members();
        for (j, v) in r.values.iter().enumerate() {
            let expect = m.iter().map(|g| g[j]).sum::<f64>() / m.len() as f64;
            assert!((v - expect).abs() < 1e-12);
        }
    }
    for r in &dump(dir.path().join("descent.csv")).rows {
        let best = members[&r.input_id]
            .iter()
            .filter_map(|g| complexity(g).ok())
            .fold(f64::INFINITY, f64::min);
        assert!(complexity(&r.values).unwrap() <= best + 1e-9);
    }
}

#[test]
fn more_region_iterations_never_hurt() {
    let dir = workdir();
    ok(
        dir.path(),
        &["train", "--data", "iris.csv", "--out", "m.json"],
    );
    let mut per_k = Vec::new();
    for k in [1, 10] {
        let cfg = format!("k{k}.toml");
        write(
            dir.path(),
            &cfg,
            &format!("[lowering]\nregion_iterations = {k}\n"),
        );
        let out = format!("region{k}.csv");
        ok(
            dir.path(),
            &[
                "aggregate",
                "--data",
                "iris.csv",
                "--model",
                "m.json",
                "--method",
                "region",
                "--config",
                &cfg,
                "--out",
                &out,
            ],
        );
        let d = dump(dir.path().join(&out));
        assert_eq!(
            d.provenance[0]["config"]["lowering"]["region_iterations"],
            k
        );
        per_k.push(
            d.rows
                .iter()
                .map(|r| (r.input_id, complexity(&r.values).unwrap()))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(per_k[0].len(), per_k[1].len());
    for (a, b) in per_k[0].iter().zip(&per_k[1]) {
        assert_eq!(a.0, b.0);
        assert!(b.1 <= a.1 + 1e-12, "input {}: {} > {}", a.0, b.1, a.1);
    }
}

#[test]
fn ava_with_one_neighbor_returns_its_shapley_values() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "train.csv", "a,b,c,label\n0.3,-0.2,0.8,0\n");
    write(
        dir.path(),
        "test.csv",
        "a,b,c,label\n0.1,0.4,-0.5,1\n-0.6,0.2,0.9,0\n0.7,0.7,0.1,1\n",
    );
    write(dir.path(), "run.toml", "normalize = false\n");
    let w = vec![1.0, -2.0, 0.5, -0.3, 0.4, 1.2];
    let model = Model::linear(2, 3, w, vec![0.0, 0.2]).unwrap();
    model.save(dir.path().join("lin.json")).unwrap();
    ok(
        dir.path(),
        &[
            "ava",
            "--data",
            "train.csv",
            "--test-data",
            "test.csv",
            "--model",
            "lin.json",
            "--explainer",
            "exact",
            "--k",
            "1",
            "--config",
            "run.toml",
            "--out",
            "ava.json",
            "--dump",
            "ava.csv",
        ],
    );
    let train_row = [0.3, -0.2, 0.8];
    let game = CharacteristicGame::new(&model, &train_row, &[0.0; 3], Target::Proba).unwrap();
    let expect = exact_shapley(&game).unwrap();
    let d = dump(dir.path().join("ava.csv"));
    let ava: Vec<_> = d.rows.iter().filter(|r| r.explainer == "ava:k=1").collect();
    assert_eq!(ava.len(), 3);
    for r in ava {
        for (a, b) in r.values.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{:?} vs {expect:?}", r.values);
        }
    }
    let v = json(dir.path().join("ava.json"));
    for label in ["shap", "ava"] {
        for c in ["avg_sensitivity", "max_sensitivity", "complexity"] {
            assert!(v["summary"][label][c].is_object(), "missing {label}/{c}");
        }
    }
    assert_eq!(v["config"]["k"], 1);
}

#[test]
fn flags_override_config_file() {
    let dir = workdir();
    write(
        dir.path(),
        "run.toml",
        "seed = 11\nradius = 0.9\n[train]\nepochs = 50\n",
    );
    ok(
        dir.path(),
        &[
            "evaluate",
            "--data",
            "iris.csv",
            "--config",
            "run.toml",
            "--seed",
            "4",
            "--explainer",
            "grad",
            "--criterion",
            "complexity",
            "--out",
            "eval.json",
        ],
    );
    let c = &json(dir.path().join("eval.json"))["config"];
    assert_eq!(c["seed"], 4);
    assert_eq!(c["train"]["seed"], 4);
    assert_eq!(c["train"]["epochs"], 50);
    assert_eq!(c["radius"], 0.9);
}

#[test]
fn failed_run_leaves_no_output() {
    let dir = workdir();
    let out = run(
        dir.path(),
        &[
            "evaluate",
            "--data",
            "iris.csv",
            "--explainer",
            "grad",
            "--criterion",
            "bogus",
            "--out",
            "eval.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("eval.json").exists());
    let out = run(
        dir.path(),
        &[
            "evaluate",
            "--data",
            "iris.csv",
            "--config",
            "missing.toml",
            "--out",
            "e.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    write(dir.path(), "bad.toml", "sed = 3\n");
    let out = run(
        dir.path(),
        &[
            "evaluate", "--data", "iris.csv", "--config", "bad.toml", "--out", "e.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("e.json").exists());
}
