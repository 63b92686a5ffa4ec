use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn lmdl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmdl")).args(args).env_remove("LMDL_SEED").output().expect("run lmdl")
}

fn iris() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/iris.csv").display().to_string()
}

fn json_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().last().unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&out.stderr)));
    serde_json::from_str(line).expect("stdout is JSON")
}

fn keys(v: &Value) -> Vec<String> {
    let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
    k.sort();
    k
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    rows
}

#[test]
fn synth_writes_loader_format() {
    let dir = tempfile::tempdir().unwrap();
    let circles = dir.path().join("circles.csv");
    let out = lmdl(&["synth", "--kind", "concentric_circles", "--n", "200", "--seed", "7", "--out", s(&circles)]);
    assert!(out.status.success());
    assert_eq!(json_line(&out)["classes"], 2);
    let rows = csv_rows(&circles);
    assert_eq!(rows.len(), 201);
    assert_eq!(rows[0], ["x", "y", "label"]);
    let ds = lmdl::load_csv(&circles, &lmdl::ColumnRef::Name("label".into()), &[]).unwrap();
    assert_eq!((ds.len(), ds.class_count()), (200, 2));

    let helix = dir.path().join("helix.csv");
    assert!(lmdl(&["synth", "--kind", "helix", "--n", "300", "--out", s(&helix)]).status.success());
    let rows = csv_rows(&helix);
    assert_eq!(rows[0].len(), 4);
    assert_eq!(rows.len(), 301);

    let bad = lmdl(&["synth", "--kind", "unknown", "--out", s(&helix)]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_writes_model_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let out = lmdl(&["train", "--data", &iris(), "--label", "class", "--beta", "10", "--prototypes-per-class", "5", "--out", s(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let line = json_line(&out);
    assert_eq!(
        keys(&line),
        ["converged", "elapsed_seconds", "epochs", "final_objective", "initial_objective", "prototypes", "rank", "sigma"]
    );
    assert_eq!(line["prototypes"], 15);
    assert!(line["final_objective"].as_f64().unwrap() <= line["initial_objective"].as_f64().unwrap());
    let m = lmdl::model_file::load(&model).unwrap();
    assert_eq!(m.prototypes.len(), 15);

    // The label column defaults to the last one, the seed to LMDL_SEED.
    let again = dir.path().join("again.json");
    let out = Command::new(env!("CARGO_BIN_EXE_lmdl"))
        .args(["train", "--data", &iris(), "--out", s(&again)])
        .env("LMDL_SEED", "0")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn missing_label_column_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = lmdl(&["train", "--data", &iris(), "--label", "species", "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("species"));
}

#[test]
fn kernel_training_records_selected_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("c.csv");
    assert!(lmdl(&["synth", "--kind", "concentric_circles", "--n", "60", "--seed", "2", "--out", s(&data)]).status.success());
    let model = dir.path().join("k.json");
    let out = lmdl(&[
        "train", "--data", s(&data), "--mode", "kernel", "--kernel", "rbf", "--sigma-grid", "default",
        "--sigma-folds", "5", "--prototypes-per-class", "2", "--out", s(&model),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sigma = json_line(&out)["sigma"].as_f64().unwrap();
    assert!(lmdl::trainer::default_sigma_grid().contains(&sigma));
    let m = lmdl::model_file::load(&model).unwrap();
    assert_eq!(m.kernel.unwrap().kernel.sigma(), Some(sigma));
}

#[test]
fn evaluate_cross_validation_and_holdout() {
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy.csv");
    std::fs::write(&toy, "a,b,label\n0,0,x\n0.1,0,x\n5,5,y\n5.1,5,y\n").unwrap();
    let out = lmdl(&["evaluate", "--data", s(&toy), "--folds", "2", "--repeats", "1", "--prototypes-per-class", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_line(&out);
    assert_eq!(report["per_fold_errors"].as_array().unwrap().len(), 2);
    assert_eq!(keys(&report), ["class_names", "config", "mean_error", "per_class_confusion", "per_fold_errors", "std_error"]);

    // Same flags, same report.
    let again = lmdl(&["evaluate", "--data", s(&toy), "--folds", "2", "--repeats", "1", "--prototypes-per-class", "1"]);
    assert_eq!(out.stdout, again.stdout);

    let model = dir.path().join("m.json");
    assert!(lmdl(&["train", "--data", &iris(), "--out", s(&model)]).status.success());
    let file = dir.path().join("report.json");
    let out = lmdl(&["evaluate", "--data", &iris(), "--model", s(&model), "--out", s(&file)]);
    assert!(out.status.success());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(report["config"]["protocol"], "holdout");
    assert!(report["mean_error"].as_f64().unwrap() < 0.1);

    let narrow = dir.path().join("narrow.csv");
    std::fs::write(&narrow, "a,b,class\n0,0,setosa\n1,1,virginica\n").unwrap();
    let mismatch = lmdl(&["evaluate", "--data", s(&narrow), "--model", s(&model)]);
    assert_eq!(mismatch.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("dimension"));
}

#[test]
fn project_exports_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    assert!(lmdl(&["train", "--data", &iris(), "--rank", "2", "--out", s(&model)]).status.success());
    let proj = dir.path().join("p.csv");
    let out = lmdl(&["project", "--data", &iris(), "--model", s(&model), "--out", s(&proj)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&proj);
    assert_eq!(rows[0], ["z1", "z2", "true_label", "predicted_label", "prototype_index"]);
    assert_eq!(rows.len(), 151);
    let s_count = lmdl::model_file::load(&model).unwrap().prototypes.len();
    for r in &rows[1..] {
        assert!(r[0].parse::<f64>().unwrap().is_finite());
        assert!(r[4].parse::<usize>().unwrap() < s_count);
    }
}

#[test]
fn gradcheck_exit_codes() {
    let ok = lmdl(&["gradcheck", "--trials", "50"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(json_line(&ok)["max_rel_error"].as_f64().unwrap() <= 1e-4);
    assert_eq!(lmdl(&["gradcheck", "--rank", "1", "--trials", "50"]).status.code(), Some(0));
    assert_eq!(lmdl(&["gradcheck", "--trials", "5", "--corrupt-gradient"]).status.code(), Some(3));
    assert_eq!(lmdl(&["gradcheck", "--rank", "9"]).status.code(), Some(1));
}
