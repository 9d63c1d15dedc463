use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saga-forge")).args(args).output().unwrap()
}

fn write_dataset(dir: &Path) -> (String, String) {
    let gt = dir.join("gt.json");
    fs::write(
        &gt,
        r#"{"images":[{"id":1,"file_name":"missing.png","width":32,"height":32}],
            "categories":[{"id":1,"name":"car"},{"id":2,"name":"person"}],
            "annotations":[
              {"id":1,"image_id":1,"category_id":1,"bbox":[2,2,10,10],"area":100,"iscrowd":0},
              {"id":2,"image_id":1,"category_id":2,"bbox":[16,16,8,8],"area":64,"iscrowd":0}]}"#,
    )
    .unwrap();
    let pred = dir.join("pred.json");
    fs::write(
        &pred,
        r#"[{"image_id":1,"category_id":1,"bbox":[2,2,10,10],"score":0.9},
            {"image_id":1,"category_id":2,"bbox":[0,0,4,4],"score":0.8}]"#,
    )
    .unwrap();
    (gt.display().to_string(), pred.display().to_string())
}

#[test]
fn stats_and_eval_print_json() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred) = write_dataset(dir.path());

    let out = forge(&["stats", "--input", &gt]);
    assert!(out.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["instances"], 2);

    let out = forge(&["eval", "--gt", &gt, "--pred", &pred]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["map"], 0.5);
}

#[test]
fn augment_reports_missing_images_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, _) = write_dataset(dir.path());
    let out_dir = dir.path().join("out");
    let out = forge(&["augment", "--input", &gt, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["failed"], 1);
}

#[test]
fn bad_input_is_fatal() {
    let out = forge(&["stats", "--input", "/nonexistent/gt.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = forge(&["augment", "--input", "x.json", "--out", "y", "--codec", "gif"]);
    assert!(!out.status.success());
}

#[test]
fn harness_writes_report_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("h");
    let out = forge(&[
        "harness", "--saga", "off", "--burn-in", "10", "--iters", "20", "--seeds", "3",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("harness_report.json")).unwrap()).unwrap();
    assert_eq!(report["arms"].as_array().unwrap().len(), 1);
    let curve = fs::read_to_string(out_dir.join("curve_vanilla_seed3.csv")).unwrap();
    assert_eq!(curve.lines().count(), 21);
}
