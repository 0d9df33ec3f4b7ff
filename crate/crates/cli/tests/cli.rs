use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn loadseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loadseg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn stage_by_stage_on_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |args: &[&str]| {
        let o = loadseg(d, args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    ok(&["fixture", "--seed", "2", "--out", "profiles.csv", "--truth-out", "truth.csv"]);
    ok(&["ingest", "--input", "profiles.csv", "--kind", "profiles", "--out", "checked.csv"]);
    assert_eq!(fs::read(d.join("checked.csv")).unwrap(), fs::read(d.join("profiles.csv")).unwrap());
    ok(&[
        "features",
        "--profiles",
        "profiles.csv",
        "--out",
        "features.csv",
        "--scaled-out",
        "scaled.csv",
        "--bounds-out",
        "bounds.json",
    ]);
    ok(&["cluster", "--features", "scaled.csv", "--algorithm", "kmeans", "--k", "7", "--out", "km.csv"]);
    ok(&["cluster", "--features", "scaled.csv", "--algorithm", "agglomerative", "--k", "9", "--out", "ag.csv"]);
    ok(&["cluster", "--features", "scaled.csv", "--algorithm", "kmedoids", "--k", "7", "--out", "pam.csv"]);
    let o = ok(&[
        "consensus", "--labels", "km.csv", "ag.csv", "pam.csv", "--reference", "kmeans", "--out", "consensus.json",
    ]);
    assert!(stderr(&o).contains("flagged clusters"));
    ok(&["classify", "--features", "features.csv", "--labels", "km.csv", "--model-out", "model.json", "--metrics-out", "metrics.csv"]);
    assert!(fs::read_to_string(d.join("metrics.csv")).unwrap().starts_with("class,precision,recall,f1,support"));
    ok(&["explain", "--model", "model.json", "--features", "features.csv", "--out", "shap.csv", "--rankings-out", "rank.json"]);
    ok(&[
        "refine",
        "--model",
        "model.json",
        "--features",
        "features.csv",
        "--consensus",
        "consensus.json",
        "--out",
        "refinement.json",
        "--assignments-out",
        "refined.csv",
    ]);
    ok(&["assign", "--model", "model.json", "--profiles", "profiles.csv", "--out", "assigned.csv"]);
    let assigned = fs::read_to_string(d.join("assigned.csv")).unwrap();
    assert_eq!(assigned.lines().count(), 701);
}

#[test]
fn validate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(loadseg(d, &["fixture", "--out", "p.csv"]).status.success());
    assert!(loadseg(d, &["features", "--profiles", "p.csv", "--out", "f.csv", "--scaled-out", "s.csv"]).status.success());
    let o = loadseg(
        d,
        &["validate", "--features", "s.csv", "--algorithms", "agglomerative,dbscan", "--k-max", "12", "--out-dir", "v"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["validity.json", "validity_curves.csv", "validity_choice.csv", "labels_agglomerative.csv"] {
        assert!(d.join("v").join(f).is_file(), "{f}");
    }
}

#[test]
fn failures_exit_nonzero_with_a_reason() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.csv"), "household_id,timestamp,energy_kwh\n").unwrap();
    let o = loadseg(d, &["run", "--input", "empty.csv", "--output-dir", "runs", "--no-tsne"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage ingest"), "{}", stderr(&o));

    let o = loadseg(d, &["run", "--input", "empty.csv", "--split-ratio", "1.5"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("split_ratio"), "{}", stderr(&o));

    fs::write(d.join("bad.csv"), "household_id,slot_00\nA,1\n").unwrap();
    let o = loadseg(d, &["features", "--profiles", "bad.csv", "--out", "f.csv"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("slot_01"), "{}", stderr(&o));

    let o = loadseg(d, &["cluster", "--features", "missing.csv", "--algorithm", "kmeans", "--k", "2", "--out", "x.csv"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.csv"), "{}", stderr(&o));
}

#[test]
fn full_run_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(loadseg(d, &["fixture", "--seed", "1", "--out", "p.csv"]).status.success());
    fs::write(
        d.join("config.toml"),
        "output_dir = \"runs\"\n\n[input]\npath = \"p.csv\"\nkind = \"profiles\"\n\n[sweep]\nk_max = 12\nrestarts = 4\n\n[classifier]\nrounds = 60\n\n[tsne]\nenabled = false\n",
    )
    .unwrap();
    let o = loadseg(d, &["run", "--config", "config.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run_dir = d.join(String::from_utf8(o.stdout).unwrap().trim());
    for f in ["manifest.json", "timings.json", "assignments.csv", "model.json", "config.toml"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let manifest = fs::read_to_string(run_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"failure\": null"));
}
