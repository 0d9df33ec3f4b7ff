//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach the output.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::{brute_kmeans, brute_kmedoids, brute_low_confidence, oracle_ch, oracle_dbi, oracle_silhouette};
use loadseg::classifier::{evaluate, shap_attribute, split_train_test, train, GbdtModel, GbdtParams};
use loadseg::cluster::{kmeans, kmedoids, read_labels_csv, Algorithm};
use loadseg::consensus::CrossComparison;
use loadseg::distance::DistanceMatrix;
use loadseg::features::{assemble_matrix, feature_names, peak_column, FEATURE_COUNT};
use loadseg::ingest::{normalize_columns, write_profiles_csv, LoadProfile};
use loadseg::pipeline::{assign_new, load_model, run_pipeline, InputKind, PipelineConfig, RunManifest};
use loadseg::refine::extract_low_confidence;
use loadseg::synth::{generate, narrative_spec, planted_gaussians, Fixture};
use loadseg::validity::{calinski_harabasz, davies_bouldin, silhouette, sweep_with};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIXTURE_SEED: u64 = 1;

/// Checks that fail because the requirement contradicts its own definition;
/// each is reported as FAIL but does not fail the suite.
const KNOWN_CONFLICTS: [&str; 1] = ["2c"];

struct Suite {
    lines: Vec<(String, bool)>,
}

impl Suite {
    fn record(&mut self, id: &str, pass: bool, what: &str, detail: String) {
        println!("{} {id}: {what} ({detail})", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id.to_string(), pass));
    }
}

fn criterion_1(s: &mut Suite) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut worst: f64 = 0.0;
    let cases = 240;
    for case in 0..cases {
        let n = rng.random_range(3..=8);
        let d = rng.random_range(1..=3);
        let k = rng.random_range(1..=3usize).min(n);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-5.0..5.0));
        let km = kmeans(x.view(), k, case, 32).unwrap().objective.unwrap();
        let pm = kmedoids(x.view(), k, case).unwrap().objective.unwrap();
        worst = worst.max((km - brute_kmeans(&x, k)).abs()).max((pm - brute_kmedoids(&x, k)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    s.record(
        "1",
        worst <= 1e-9 && secs < 60.0,
        "k-means and k-medoids reach the exhaustive optimum",
        format!("{cases} instances, max gap {worst:.2e}, {secs:.1}s"),
    );
}

fn criterion_2(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(92);
    let mut worst: f64 = 0.0;
    let cases = 600;
    for _ in 0..cases {
        let n = rng.random_range(4..=30);
        let d = rng.random_range(1..=3);
        let k = rng.random_range(2..=5usize).min(n - 1);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-10.0..10.0));
        let mut labels: Vec<i64> = (0..k as i64).collect();
        labels.extend((k..n).map(|_| rng.random_range(0..k as i64)));
        let gaps = [
            silhouette(x.view(), &labels).unwrap() - oracle_silhouette(&x, &labels),
            davies_bouldin(x.view(), &labels).unwrap() - oracle_dbi(&x, &labels),
            calinski_harabasz(x.view(), &labels).unwrap() - oracle_ch(&x, &labels),
        ];
        worst = gaps.iter().fold(worst, |w, g| w.max(g.abs()));
    }
    s.record(
        "2a",
        worst <= 1e-9,
        "silhouette, DBI and CH match direct evaluation",
        format!("{cases} labelings, max gap {worst:.2e}"),
    );
    let x = ndarray::array![[0.0], [2.0], [10.0], [12.0]];
    let labels = [0, 0, 1, 1];
    let dbi = davies_bouldin(x.view(), &labels).unwrap();
    s.record("2b", dbi == 0.2, "hand example DBI = 0.2", format!("got {dbi}"));
    let ch = calinski_harabasz(x.view(), &labels).unwrap();
    s.record(
        "2c",
        ch == 100.0,
        "hand example CH = 100",
        format!("got {ch}; B = 100, W = 4 under the stated definition gives 50"),
    );
}

fn criterion_3(s: &mut Suite) {
    let start = Instant::now();
    let (x, _) = planted_gaussians(7, 61, 100, 10.0, 93);
    let settings = PipelineConfig::default().sweep;
    let dist = DistanceMatrix::from_rows(x.view());
    let mut found = BTreeMap::new();
    for alg in [Algorithm::KMeans, Algorithm::Agglomerative, Algorithm::Dbscan] {
        let report = sweep_with(x.view(), &dist, alg, &settings).unwrap().report;
        let k = report.choice(alg).and_then(|c| c.majority).map_or(0, |p| p.k);
        found.insert(alg.to_string(), k);
    }
    let secs = start.elapsed().as_secs_f64();
    s.record(
        "3",
        found.values().all(|&k| k == 7) && secs < 300.0,
        "seven planted Gaussian clusters in 61 dimensions are recovered",
        format!("{found:?}, {secs:.1}s"),
    );
}

/// Planted class of each reference cluster by majority.
fn planted_majority(fx: &Fixture, ids: &[String], labels: &[i64]) -> BTreeMap<i64, usize> {
    let class_of: BTreeMap<&str, usize> = fx
        .profiles
        .iter()
        .zip(&fx.class)
        .map(|(p, &c)| (p.household_id.as_str(), c))
        .collect();
    let mut counts: BTreeMap<i64, BTreeMap<usize, usize>> = BTreeMap::new();
    for (id, &l) in ids.iter().zip(labels) {
        *counts.entry(l).or_default().entry(class_of[id.as_str()]).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(l, c)| (l, *c.iter().max_by_key(|(_, &v)| v).unwrap().0))
        .collect()
}

fn criteria_4_5(s: &mut Suite, fx: &Fixture, m: &RunManifest) {
    let mixed: BTreeSet<usize> = Fixture::mixed_classes(&narrative_spec(FIXTURE_SEED)).into_iter().collect();
    let cc: CrossComparison = serde_json::from_slice(&fs::read(m.run_dir.join("consensus.json")).unwrap()).unwrap();
    let (ids, reference) = read_labels_csv(fs::File::open(m.run_dir.join("labels_kmeans.csv")).unwrap()).unwrap();
    let planted = planted_majority(fx, &ids, &reference.labels);
    let flagged: BTreeSet<usize> = cc.flagged.iter().map(|f| planted[f]).collect();
    s.record(
        "4",
        flagged == mixed && cc.flagged.len() == mixed.len(),
        "consensus flags exactly the two mixture classes",
        format!("flagged clusters {:?} = planted {flagged:?}, mixtures {mixed:?}", cc.flagged),
    );
    let sm = &m.summary;
    let pass = sm.final_class_count == Some(9) && (0.05..=0.15).contains(&sm.subset_fraction);
    s.record(
        "5",
        pass,
        "pipeline ends with nine classes from a 5-15% subset",
        format!(
            "{:?} final classes, subset {} of {} = {:.3}, subset k {}",
            sm.final_class_count, sm.subset_size, sm.households, sm.subset_fraction, sm.subset_k
        ),
    );
}

fn fixture_model(fx: &Fixture) -> (Array2<f64>, Vec<i64>, GbdtModel) {
    let fm = assemble_matrix(&fx.profiles);
    let (x, bounds) = normalize_columns(fm.values.view());
    let class_of: BTreeMap<&str, i64> = fx
        .profiles
        .iter()
        .zip(&fx.class)
        .map(|(p, &c)| (p.household_id.as_str(), c as i64))
        .collect();
    let labels: Vec<i64> = fm.ids.iter().map(|id| class_of[id.as_str()]).collect();
    let split = split_train_test(&labels, 0.8, 0).unwrap();
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let mut model = train(
        x.select(Axis(0), &split.train).view(),
        &pick(&split.train),
        feature_names(),
        &GbdtParams::default(),
    )
    .unwrap();
    model.bounds = Some(bounds);
    (x, labels, model)
}

fn criterion_6(s: &mut Suite, x: &Array2<f64>, labels: &[i64], model: &GbdtModel) {
    let split = split_train_test(labels, 0.8, 0).unwrap();
    let truth: Vec<i64> = split.test.iter().map(|&i| labels[i]).collect();
    let metrics = evaluate(model, x.select(Axis(0), &split.test).view(), &truth).unwrap();
    let macro_f1 = metrics.macro_f1.unwrap_or(0.0);
    let below = metrics.f1.iter().filter(|f| f.unwrap_or(0.0) < 0.95).count();
    s.record(
        "6",
        macro_f1 >= 0.97 && below <= 1,
        "held-out macro-F1 of the classifier on fixture labels",
        format!(
            "train {} / test {}, macro F1 {macro_f1:.4}, {below} class(es) below 0.95",
            split.train.len(),
            split.test.len()
        ),
    );
}

fn criterion_7(s: &mut Suite, x: &Array2<f64>, model: &GbdtModel) {
    let attribution = shap_attribute(model, x.view()).unwrap();
    let margins = model.margins(x.view()).unwrap();
    let (n, c, _) = attribution.values.dim();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for k in 0..c {
            let total = attribution.base[k] + attribution.values.slice(ndarray::s![i, k, ..]).sum();
            worst = worst.max((total - margins[[i, k]]).abs());
        }
    }
    s.record(
        "7a",
        worst <= 1e-6,
        "SHAP local accuracy on every point and class",
        format!("{n} points x {c} classes, max error {worst:.2e}"),
    );

    // only the evening peak separates the classes; every other column is noise
    let evening = peak_column("evening").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(97);
    let n = 600;
    let mut xs = Array2::from_shape_fn((n, FEATURE_COUNT), |_| rng.random_range(0.0..1.0));
    let labels: Vec<i64> = (0..n).map(|i| (i % 3) as i64).collect();
    for i in 0..n {
        xs[[i, evening]] = labels[i] as f64 / 3.0 + rng.random_range(0.02..0.31);
    }
    let params = GbdtParams {
        rounds: 60,
        max_depth: 3,
        ..GbdtParams::default()
    };
    let m = train(xs.view(), &labels, feature_names(), &params).unwrap();
    let ranks = shap_attribute(&m, xs.view()).unwrap().rankings();
    let tops: Vec<&str> = ranks.iter().map(|r| r.features[0].0.as_str()).collect();
    s.record(
        "7b",
        tops.iter().all(|&t| t == "peak_evening"),
        "evening-peak feature ranks first for every class",
        format!("top feature per class {tops:?}"),
    );
}

fn criterion_8(s: &mut Suite, x: &Array2<f64>, model: &GbdtModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(98);
    let noise = Array2::from_shape_fn((500, FEATURE_COUNT), |_| rng.random_range(-2.0..3.0));
    let mut worst: f64 = 0.0;
    for m in [x, &noise] {
        let p = model.predict_proba(m.view()).unwrap();
        for row in p.rows() {
            worst = worst.max((row.sum() - 1.0).abs());
        }
    }
    s.record(
        "8a",
        worst <= 1e-9,
        "probability rows sum to one",
        format!("{} rows, max deviation {worst:.2e}", x.nrows() + noise.nrows()),
    );

    // a blurred copy of the fixture gives a spread of confidences
    let blurred = x.mapv(|v| v + rng.random_range(-0.3..0.3));
    let p = model.predict_proba(blurred.view()).unwrap();
    let predicted = model.predict(blurred.view()).unwrap();
    let mut mismatches = 0;
    let mut sizes = Vec::new();
    for trial in 0..50 {
        let flagged: BTreeSet<i64> = (0..7).filter(|c| (trial >> c) & 1 == 1 && rng.random_bool(0.5)).collect();
        let got = extract_low_confidence(p.view(), &predicted, 0.8, &flagged);
        if got != brute_low_confidence(p.view(), &predicted, 0.8, &flagged) {
            mismatches += 1;
        }
        sizes.push(got.len());
    }
    let low = brute_low_confidence(p.view(), &predicted, 0.8, &BTreeSet::new()).len();
    s.record(
        "8b",
        mismatches == 0,
        "low-confidence extraction matches a brute-force filter",
        format!("50 flag sets, {mismatches} mismatches, {low} rows below 0.8, subset sizes {}-{}", sizes.iter().min().unwrap(), sizes.iter().max().unwrap()),
    );
}

fn criterion_9(s: &mut Suite, first: &RunManifest, config: &PipelineConfig) {
    let read = |m: &RunManifest, name: &str| fs::read(m.run_dir.join(name)).unwrap();
    let (assign, manifest) = (read(first, "assignments.csv"), read(first, "manifest.json"));
    let second = run_pipeline(config).unwrap();
    let same = read(&second, "assignments.csv") == assign && read(&second, "manifest.json") == manifest;
    s.record(
        "9",
        same && second.succeeded(),
        "two runs give byte-identical assignments and manifests",
        format!("{} and {} bytes compared", assign.len(), manifest.len()),
    );
}

fn criterion_10(s: &mut Suite, m: &RunManifest) {
    let model = load_model(&m.run_dir.join("model.json")).unwrap();
    let mut profiles: Vec<LoadProfile> = Vec::new();
    let mut seed = 1000;
    while profiles.len() < 10_000 {
        for mut p in generate(&narrative_spec(seed)).profiles {
            p.household_id = format!("N{:06}", profiles.len());
            profiles.push(p);
        }
        seed += 1;
    }
    profiles.truncate(10_000);
    let start = Instant::now();
    let a = assign_new(&model, &profiles).unwrap();
    let secs = start.elapsed().as_secs_f64();
    s.record(
        "10",
        a.ids.len() == 10_000 && secs <= 10.0,
        "assign_new handles 10,000 households",
        format!("{} assigned in {secs:.2}s", a.ids.len()),
    );
}

fn criterion_11(s: &mut Suite) {
    match std::env::var_os("LOADSEG_LONDON") {
        None => println!("SKIP 11: London smoke run (set LOADSEG_LONDON to a readings file)"),
        Some(path) => {
            let dir = tempfile::tempdir().unwrap();
            let mut c = PipelineConfig::default();
            c.input.path = path.into();
            c.input.schema = loadseg::ingest::Schema::london_standard_tariff();
            c.output_dir = dir.path().to_path_buf();
            let m = run_pipeline(&c).unwrap();
            s.record(
                "11",
                m.succeeded(),
                "London smoke run completes",
                format!("chosen k {:?}, failure {:?}", m.summary.chosen_k, m.failure),
            );
        }
    }
}

fn fixture_run(dir: &Path, fx: &Fixture) -> (PipelineConfig, RunManifest) {
    let input = dir.join("fixture.csv");
    write_profiles_csv(fs::File::create(&input).unwrap(), &fx.profiles).unwrap();
    let mut c = PipelineConfig::default();
    c.input.path = input;
    c.input.kind = InputKind::Profiles;
    c.output_dir = dir.join("runs");
    let m = run_pipeline(&c).unwrap();
    assert!(m.succeeded(), "fixture run failed: {:?}", m.failure);
    (c, m)
}

fn main() -> ExitCode {
    // `cargo test -- <filter>` passes arguments; a filter that cannot match
    // this target skips it
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    let mut s = Suite { lines: Vec::new() };
    criterion_1(&mut s);
    criterion_2(&mut s);
    criterion_3(&mut s);
    let fx = generate(&narrative_spec(FIXTURE_SEED));
    let dir = tempfile::tempdir().unwrap();
    let (config, manifest) = fixture_run(dir.path(), &fx);
    criteria_4_5(&mut s, &fx, &manifest);
    let (x, labels, model) = fixture_model(&fx);
    criterion_6(&mut s, &x, &labels, &model);
    criterion_7(&mut s, &x, &model);
    criterion_8(&mut s, &x, &model);
    criterion_9(&mut s, &manifest, &config);
    criterion_10(&mut s, &manifest);
    criterion_11(&mut s);

    let failed: Vec<&str> = s
        .lines
        .iter()
        .filter(|(id, pass)| !pass && !KNOWN_CONFLICTS.contains(&id.as_str()))
        .map(|(id, _)| id.as_str())
        .collect();
    let passed = s.lines.iter().filter(|(_, p)| *p).count();
    println!("acceptance: {passed}/{} checks passed", s.lines.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {failed:?}");
        ExitCode::FAILURE
    }
}
