use std::fs;
use std::path::Path;

use loadseg::classifier::{train, GbdtParams};
use loadseg::features::{assemble_matrix, feature_names};
use loadseg::ingest::{normalize_columns, write_profiles_csv};
use loadseg::pipeline::{assign_files, assign_new, run_pipeline, InputKind, PipelineConfig};
use loadseg::synth::{generate, narrative_spec, Fixture};

fn quick_config(dir: &Path, input: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.input.path = input.to_path_buf();
    c.input.kind = InputKind::Profiles;
    c.output_dir = dir.join("runs");
    c.sweep.k_max = 10;
    c.sweep.restarts = 3;
    c.classifier.rounds = 40;
    c.tsne.enabled = false;
    c
}

fn write_fixture(dir: &Path, seed: u64) -> (Fixture, std::path::PathBuf) {
    let fx = generate(&narrative_spec(seed));
    let path = dir.join("profiles.csv");
    write_profiles_csv(fs::File::create(&path).unwrap(), &fx.profiles).unwrap();
    (fx, path)
}

#[test]
fn empty_input_fails_at_ingest_without_downstream_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    fs::write(&input, "household_id,timestamp,energy_kwh\n").unwrap();
    let mut c = quick_config(dir.path(), &input);
    c.input.kind = InputKind::Readings;
    let m = run_pipeline(&c).unwrap();
    let f = m.failure.as_ref().expect("failure recorded");
    assert_eq!(f.stage, "ingest");
    assert!(m.run_dir.join("manifest.json").is_file());
    assert!(!m.run_dir.join("features.csv").exists());
    assert!(!m.run_dir.join("assignments.csv").exists());
    let names: Vec<&str> = m.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(names, ["config", "ingest"]);
}

#[test]
fn runs_are_reproducible_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let (_, input) = write_fixture(dir.path(), 1);
    let c = quick_config(dir.path(), &input);
    let first = run_pipeline(&c).unwrap();
    assert!(first.succeeded(), "{:?}", first.failure);
    for stage in &first.stages {
        for a in &stage.artifacts {
            assert!(first.run_dir.join(a).is_file(), "{a}");
        }
    }
    let read = |name: &str| fs::read(first.run_dir.join(name)).unwrap();
    let (assign, manifest) = (read("assignments.csv"), read("manifest.json"));
    let replayed = PipelineConfig::load(&first.run_dir.join("config.toml")).unwrap();
    assert_eq!(replayed, c);
    let second = run_pipeline(&replayed).unwrap();
    assert_eq!(second.run_dir, first.run_dir);
    assert_eq!(read("assignments.csv"), assign);
    assert_eq!(read("manifest.json"), manifest);
}

#[test]
fn assign_new_uses_frozen_bounds() {
    let fx = generate(&narrative_spec(3));
    let fm = assemble_matrix(&fx.profiles);
    let (x, bounds) = normalize_columns(fm.values.view());
    let class_of = |id: &str| {
        let i = fx.profiles.iter().position(|p| p.household_id == id).unwrap();
        fx.class[i] as i64
    };
    let labels: Vec<i64> = fm.ids.iter().map(|id| class_of(id)).collect();
    let params = GbdtParams {
        rounds: 60,
        ..GbdtParams::default()
    };
    let mut model = train(x.view(), &labels, feature_names(), &params).unwrap();
    model.bounds = Some(bounds);
    let before = model.clone();

    // a training household nearest its class centroid keeps its class
    for class in 0..7i64 {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let centroid = x.select(ndarray::Axis(0), &rows).mean_axis(ndarray::Axis(0)).unwrap();
        let exemplar = *rows
            .iter()
            .min_by(|&&a, &&b| {
                let da = (&x.row(a) - &centroid).mapv(|v| v * v).sum();
                let db = (&x.row(b) - &centroid).mapv(|v| v * v).sum();
                da.total_cmp(&db)
            })
            .unwrap();
        let profile = fx.profiles.iter().find(|p| p.household_id == fm.ids[exemplar]).unwrap();
        let a = assign_new(&model, std::slice::from_ref(profile)).unwrap();
        assert_eq!(a.classes, vec![class]);
        assert!(a.probability[0] >= 0.99, "class {class}: {}", a.probability[0]);
    }
    let none = assign_new(&model, &[]).unwrap();
    assert!(none.ids.is_empty());
    assert_eq!(model, before);

    let mut renamed = model.clone();
    renamed.feature_names[51] = "evening_peak".into();
    let err = assign_new(&renamed, &fx.profiles[..1]).unwrap_err().to_string();
    assert!(err.contains("evening_peak") && err.contains("peak_evening"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.json");
    fs::write(&model_path, model.to_json().unwrap()).unwrap();
    let empty = dir.path().join("empty.csv");
    let mut header = vec!["household_id".to_string()];
    header.extend(loadseg::ingest::slot_column_names());
    fs::write(&empty, header.join(",") + "\n").unwrap();
    let out = dir.path().join("out.csv");
    assert_eq!(assign_files(&model_path, &empty, &out).unwrap(), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), "household_id,class,probability\n");

    let bad = dir.path().join("bad.csv");
    header[6] = "slot_5".into();
    fs::write(&bad, header.join(",") + "\n").unwrap();
    let err = assign_files(&model_path, &bad, &out).unwrap_err().to_string();
    assert!(err.contains("slot_5") && err.contains("slot_05"), "{err}");
}
