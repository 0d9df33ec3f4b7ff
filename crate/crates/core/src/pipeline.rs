//! The end-to-end run. Every stage persists its artifacts under a run
//! directory named by a hash of the config and the input bytes, and a
//! manifest records what was written and where a failed run stopped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::{evaluate, shap_attribute, split_train_test, train, ClassifierError, GbdtModel, GbdtParams};
use crate::cluster::{Algorithm, ClusterError, Labeling, Linkage};
use crate::consensus::{cross_compare, tsne_embed, write_embedding_csv, ConsensusError};
use crate::distance::DistanceMatrix;
use crate::features::{assemble_matrix, feature_names, write_matrix_csv};
use crate::ingest::{
    build_profiles, clean, normalize_columns, parse_readings, read_profiles_csv, write_profiles_csv, DateFilter,
    IngestError, LoadProfile, Schema,
};
use crate::refine::{refine, write_assignments_csv, RefineError, RefineSettings};
use crate::validity::{sweep_with, Index, SweepSettings, ValidityError, ValidityReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Validity(#[from] ValidityError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Stage(String),
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| PipelineError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| PipelineError::File {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// Long-format meter readings, aggregated into average days.
    #[default]
    Readings,
    /// Ready-made `household_id,slot_00..slot_47` profiles.
    Profiles,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    pub kind: InputKind,
    pub schema: Schema,
    pub dates: DateFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub enabled: bool,
    pub perplexity: f64,
    pub iterations: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            enabled: true,
            perplexity: 30.0,
            iterations: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub output_dir: PathBuf,
    /// Seed of the train/test split and the t-SNE start.
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
    /// Labeling the others are compared against; also the classifier target.
    pub reference: Algorithm,
    pub instability_threshold: f64,
    pub split_ratio: f64,
    pub sweep: SweepSettings,
    pub classifier: GbdtParams,
    pub refine: RefineSettings,
    pub tsne: TsneConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: InputConfig::default(),
            output_dir: PathBuf::from("runs"),
            seed: 0,
            algorithms: Algorithm::ALL.to_vec(),
            reference: Algorithm::KMeans,
            instability_threshold: crate::consensus::DEFAULT_INSTABILITY_THRESHOLD,
            split_ratio: 0.8,
            sweep: SweepSettings {
                linkage: Linkage::Average,
                ..SweepSettings::default()
            },
            classifier: GbdtParams::default(),
            refine: RefineSettings::default(),
            tsne: TsneConfig::default(),
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(PipelineError::Config(format!("{name} = {v} outside (0, 1]")))
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        open(path)?
            .read_to_string(&mut text)
            .map_err(|source| PipelineError::File {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks what can be checked before the data is read. The sweep's
    /// upper end is clamped to `n - 1` once `n` is known.
    pub fn validate(&self) -> Result<()> {
        unit_interval("instability_threshold", self.instability_threshold)?;
        unit_interval("refine.probability_threshold", self.refine.probability_threshold)?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(PipelineError::Config(format!("split_ratio = {} outside (0, 1)", self.split_ratio)));
        }
        if self.sweep.k_min < 2 || self.sweep.k_max < self.sweep.k_min {
            return Err(PipelineError::Config(format!(
                "sweep range [{}, {}] must start at 2 or above and be non-empty",
                self.sweep.k_min, self.sweep.k_max
            )));
        }
        let distinct: BTreeSet<Algorithm> = self.algorithms.iter().copied().collect();
        if distinct.len() != self.algorithms.len() || distinct.len() < 2 {
            return Err(PipelineError::Config("algorithms must list at least two distinct entries".into()));
        }
        if !distinct.contains(&self.reference) {
            return Err(PipelineError::Config(format!("reference {} is not among the algorithms", self.reference)));
        }
        if self.reference == Algorithm::Dbscan {
            return Err(PipelineError::Config("the reference must label every point; dbscan does not".into()));
        }
        if self.refine.algorithms.is_empty() {
            return Err(PipelineError::Config("refine.algorithms is empty".into()));
        }
        if self.tsne.enabled && !(self.tsne.perplexity > 0.0) {
            return Err(PipelineError::Config("tsne.perplexity must be positive".into()));
        }
        Ok(())
    }

    /// `run-` plus twelve hex digits of SHA-256 over the config and input.
    pub fn run_id(&self, input: &[u8]) -> String {
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        h.update([0u8]);
        h.update(input);
        let digest = h.finalize();
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        format!("run-{hex}")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub households: usize,
    /// Algorithm to index (plus `majority`) to chosen k.
    pub chosen_k: BTreeMap<String, BTreeMap<String, usize>>,
    pub reference_k: Option<usize>,
    pub flagged_classes: Vec<i64>,
    pub macro_f1: Option<f64>,
    pub subset_size: usize,
    pub subset_fraction: f64,
    pub subset_k: usize,
    pub final_class_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub versions: BTreeMap<String, String>,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    /// Wall-clock seconds per stage live in this file, outside the manifest,
    /// so that the manifest itself is reproducible.
    pub timings: String,
    pub warnings: Vec<String>,
    pub summary: RunSummary,
    pub failure: Option<Failure>,
    #[serde(skip)]
    pub run_dir: PathBuf,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    pub fn artifact(&self, name: &str) -> Option<PathBuf> {
        self.stages
            .iter()
            .flat_map(|s| &s.artifacts)
            .find(|a| a.as_str() == name)
            .map(|a| self.run_dir.join(a))
    }
}

struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    timings: Vec<(String, f64)>,
    current: Vec<String>,
}

impl Run {
    fn save(&mut self, name: &str, write: impl FnOnce(BufWriter<File>) -> Result<()>) -> Result<()> {
        write(create(&self.dir.join(name))?)?;
        self.current.push(name.to_string());
        Ok(())
    }

    fn save_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.save(name, |mut w| {
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w).and_then(|_| w.flush()).map_err(|source| PipelineError::File {
                path: name.into(),
                source,
            })
        })
    }

    fn stage<T>(&mut self, name: &str, body: impl FnOnce(&mut Run) -> Result<T>) -> Option<T> {
        self.current.clear();
        let start = Instant::now();
        let outcome = body(self);
        self.timings.push((name.to_string(), start.elapsed().as_secs_f64()));
        self.manifest.stages.push(StageRecord {
            stage: name.to_string(),
            artifacts: std::mem::take(&mut self.current),
        });
        match outcome {
            Ok(v) => Some(v),
            Err(e) => {
                self.manifest.failure = Some(Failure {
                    stage: name.to_string(),
                    message: e.to_string(),
                });
                None
            }
        }
    }

    fn finish(mut self) -> Result<RunManifest> {
        let timings: BTreeMap<String, f64> = self.timings.iter().cloned().collect();
        let timings_name = self.manifest.timings.clone();
        write_json(&self.dir.join(&timings_name), &timings)?;
        for a in self.manifest.stages.iter().flat_map(|s| &s.artifacts) {
            debug_assert!(self.dir.join(a).is_file(), "{a} missing");
        }
        write_json(&self.dir.join("manifest.json"), &self.manifest)?;
        self.manifest.run_dir = self.dir;
        Ok(self.manifest)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|source| PipelineError::File {
            path: path.to_path_buf(),
            source,
        })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct IngestSummary {
    households: usize,
    rejected_rows: usize,
    filtered_rows: usize,
    dropped_households: Vec<String>,
}

/// Reads the configured input into average-day profiles.
pub fn load_profiles(input: &InputConfig, bytes: &[u8]) -> Result<(Vec<LoadProfile>, usize, usize, Vec<String>)> {
    match input.kind {
        InputKind::Profiles => Ok((read_profiles_csv(bytes)?, 0, 0, Vec::new())),
        InputKind::Readings => {
            let parsed = parse_readings(bytes, &input.schema)?;
            let readings = input.dates.apply(&clean(&parsed.readings));
            let built = build_profiles(&readings);
            Ok((built.profiles, parsed.rejected, parsed.filtered, built.dropped))
        }
    }
}

fn probability_csv<W: Write>(w: W, ids: &[String], classes: &[i64], p: ArrayView2<f64>) -> Result<()> {
    let columns: Vec<String> = classes.iter().map(|c| format!("p_{c}")).collect();
    write_matrix_csv(w, ids, &p.to_owned(), &columns)?;
    Ok(())
}

/// Probability of each row's own class.
fn own_probability(model: &GbdtModel, p: &Array2<f64>, labels: &[i64]) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            model
                .classes
                .iter()
                .position(|c| c == l)
                .map_or(0.0, |c| p[[i, c]])
        })
        .collect()
}

/// Runs every stage in order. Returns an error only when the config is
/// invalid or the run directory cannot be created; a failing stage is
/// recorded in the returned (and persisted) manifest instead.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    config.validate()?;
    let input = fs::read(&config.input.path).map_err(|source| PipelineError::File {
        path: config.input.path.clone(),
        source,
    })?;
    let run_id = config.run_id(&input);
    let dir = config.output_dir.join(&run_id);
    fs::create_dir_all(&dir).map_err(|source| PipelineError::File {
        path: dir.clone(),
        source,
    })?;
    write_text(&dir.join("config.toml"), &config.to_toml())?;
    let mut run = Run {
        dir,
        manifest: RunManifest {
            run_id,
            versions: BTreeMap::from([("loadseg".to_string(), env!("CARGO_PKG_VERSION").to_string())]),
            config: config.clone(),
            stages: vec![StageRecord {
                stage: "config".into(),
                artifacts: vec!["config.toml".into()],
            }],
            timings: "timings.json".into(),
            warnings: Vec::new(),
            summary: RunSummary::default(),
            failure: None,
            run_dir: PathBuf::new(),
        },
        timings: Vec::new(),
        current: Vec::new(),
    };
    stages(&mut run, config, &input);
    run.finish()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| PipelineError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn stages(run: &mut Run, config: &PipelineConfig, input: &[u8]) -> Option<()> {
    let profiles = run.stage("ingest", |r| {
        let (profiles, rejected, filtered, dropped) = load_profiles(&config.input, input)?;
        r.save_json(
            "ingest.json",
            &IngestSummary {
                households: profiles.len(),
                rejected_rows: rejected,
                filtered_rows: filtered,
                dropped_households: dropped,
            },
        )?;
        if profiles.is_empty() {
            return Err(PipelineError::Stage("input holds no complete household profiles".into()));
        }
        r.save("profiles.csv", |w| Ok(write_profiles_csv(w, &profiles)?))?;
        Ok(profiles)
    })?;

    let mut sweep = config.sweep.clone();
    let (fm, scaled) = run.stage("features", |r| {
        let fm = assemble_matrix(&profiles);
        let n = fm.len();
        if n < 3 {
            return Err(PipelineError::Stage(format!("{n} households; at least 3 are needed to cluster")));
        }
        if sweep.k_min > n - 1 {
            return Err(PipelineError::Config(format!("k_min = {} exceeds n - 1 = {}", sweep.k_min, n - 1)));
        }
        if sweep.k_max > n - 1 {
            r.manifest
                .warnings
                .push(format!("sweep k_max {} clamped to n - 1 = {}", sweep.k_max, n - 1));
            sweep.k_max = n - 1;
        }
        let (scaled, bounds) = normalize_columns(fm.values.view());
        r.save("features.csv", |w| Ok(fm.write_csv(w)?))?;
        r.save("features_scaled.csv", |w| {
            Ok(write_matrix_csv(w, &fm.ids, &scaled, &feature_names())?)
        })?;
        r.save_json("bounds.json", &bounds)?;
        r.manifest.summary.households = n;
        Ok((fm, (scaled, bounds)))
    })?;
    let (scaled, bounds) = scaled;

    let dist = DistanceMatrix::from_rows(scaled.view());
    let (report, chosen) = run.stage("cluster", |r| {
        let mut report = ValidityReport::default();
        let mut chosen: Vec<Labeling> = Vec::new();
        for &alg in &config.algorithms {
            let outcome = match sweep_with(scaled.view(), &dist, alg, &sweep) {
                Ok(o) => o,
                Err(e) if alg != config.reference => {
                    r.manifest.warnings.push(format!("{alg} sweep failed: {e}"));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            match outcome.chosen_labeling(alg) {
                Some(l) => {
                    let name = format!("labels_{alg}.csv");
                    r.save(&name, |w| Ok(l.write_csv(w, &fm.ids)?))?;
                    chosen.push(l.clone());
                }
                None if alg == config.reference => {
                    return Err(PipelineError::Stage(format!("no valid {alg} labeling in the sweep")));
                }
                None => r.manifest.warnings.push(format!("{alg} produced no labeling with two or more clusters")),
            }
            report.extend(outcome.report);
        }
        Ok((report, chosen))
    })?;

    run.stage("validate", |r| {
        r.save_json("validity.json", &report)?;
        r.save("validity_curves.csv", |w| Ok(report.write_curves_csv(w)?))?;
        r.save("validity_choice.csv", |w| Ok(report.write_choice_csv(w)?))?;
        for &alg in &config.algorithms {
            let Some(choice) = report.choice(alg) else { continue };
            let mut ks = BTreeMap::new();
            for idx in Index::ALL {
                if let Some(p) = choice.by_index(idx) {
                    ks.insert(idx.short_name().to_string(), p.k);
                }
            }
            if let Some(p) = choice.majority {
                ks.insert("majority".to_string(), p.k);
            }
            r.manifest.summary.chosen_k.insert(alg.to_string(), ks);
        }
        Ok(())
    })?;

    let reference = chosen.iter().find(|l| l.algorithm == config.reference)?.clone();
    run.manifest.summary.reference_k = Some(reference.cluster_count());
    let flagged = run.stage("consensus", |r| {
        let cc = cross_compare(&chosen, config.reference, config.instability_threshold)?;
        for t in &cc.tables {
            let name = format!(
                "contingency_{}_{}.csv",
                t.algo_a.map_or("a", |a| a.name()),
                t.algo_b.map_or("b", |a| a.name())
            );
            r.save(&name, |w| Ok(t.write_csv(w)?))?;
        }
        r.save_json("consensus.json", &cc)?;
        if config.tsne.enabled {
            let n = scaled.nrows() as f64;
            if n > 3.0 * config.tsne.perplexity {
                let emb = tsne_embed(scaled.view(), config.tsne.perplexity, config.tsne.iterations, config.seed)?;
                r.save("embedding.csv", |w| {
                    Ok(write_embedding_csv(w, &fm.ids, &emb, &reference.labels)?)
                })?;
            } else {
                r.manifest
                    .warnings
                    .push(format!("t-SNE skipped: perplexity {} needs more than {} points", config.tsne.perplexity, 3.0 * config.tsne.perplexity));
            }
        }
        r.manifest.summary.flagged_classes = cc.flagged.iter().copied().collect();
        Ok(cc.flagged)
    })?;

    let names = feature_names();
    let (model, probabilities) = run.stage("classify", |r| {
        let split = split_train_test(&reference.labels, config.split_ratio, config.seed)?;
        r.manifest.warnings.extend(split.warnings.iter().cloned());
        let rows = |idx: &[usize]| scaled.select(ndarray::Axis(0), idx);
        let train_labels: Vec<i64> = split.train.iter().map(|&i| reference.labels[i]).collect();
        let test_labels: Vec<i64> = split.test.iter().map(|&i| reference.labels[i]).collect();
        let mut model = train(rows(&split.train).view(), &train_labels, names.clone(), &config.classifier)?;
        model.bounds = Some(bounds.clone());
        let metrics = evaluate(&model, rows(&split.test).view(), &test_labels)?;
        r.manifest.summary.macro_f1 = metrics.macro_f1;
        let probabilities = model.predict_proba(scaled.view())?;
        r.save_json("split.json", &split)?;
        r.save_json("metrics.json", &metrics)?;
        r.save("metrics.csv", |w| Ok(metrics.write_csv(w)?))?;
        r.save("model_initial.json", |mut w| {
            w.write_all(model.to_json()?.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|source| PipelineError::File {
                    path: "model_initial.json".into(),
                    source,
                })
        })?;
        r.save("probabilities.csv", |w| {
            probability_csv(w, &fm.ids, &model.classes, probabilities.view())
        })?;
        Ok((model, probabilities))
    })?;

    run.stage("explain", |r| {
        let attribution = shap_attribute(&model, scaled.view())?;
        let margins = model.margins(scaled.view())?;
        let (n, c, _) = attribution.values.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for k in 0..c {
                let total = attribution.base[k] + attribution.values.slice(ndarray::s![i, k, ..]).sum();
                worst = worst.max((total - margins[[i, k]]).abs());
            }
        }
        r.save("shap_values.csv", |w| Ok(attribution.write_csv(w, &fm.ids)?))?;
        r.save("shap_rankings.json", |mut w| {
            let json = attribution.rankings_json()?;
            writeln!(w, "{json}").and_then(|_| w.flush()).map_err(|source| PipelineError::File {
                path: "shap_rankings.json".into(),
                source,
            })
        })?;
        r.save_json("explain.json", &BTreeMap::from([("max_local_accuracy_error", worst)]))?;
        Ok(())
    })?;

    let refinement = run.stage("refine", |r| {
        let predicted = model.predict(scaled.view())?;
        let result = refine(
            &fm.ids,
            fm.values.view(),
            scaled.view(),
            probabilities.view(),
            &predicted,
            &flagged,
            &config.refine,
            &sweep,
            &config.classifier,
            &names,
        )?;
        if let Some(reason) = &result.skipped {
            r.manifest.warnings.push(format!("refinement skipped: {reason}"));
        }
        r.save_json("refinement.json", &result)?;
        let s = &mut r.manifest.summary;
        s.subset_size = result.subset_rows.len();
        s.subset_fraction = result.subset_rows.len() as f64 / fm.len() as f64;
        s.subset_k = result.subset_k;
        Ok(result)
    })?;

    run.stage("report", |r| {
        let labels = &refinement.final_labels;
        let mut model = train(scaled.view(), labels, names.clone(), &config.classifier)?;
        model.bounds = Some(bounds.clone());
        let p = model.predict_proba(scaled.view())?;
        let probability = own_probability(&model, &p, labels);
        let subset: BTreeSet<usize> = refinement.subset_rows.iter().copied().collect();
        let refined: Vec<bool> = (0..fm.len()).map(|i| subset.contains(&i)).collect();
        r.save("model.json", |mut w| {
            w.write_all(model.to_json()?.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|source| PipelineError::File {
                    path: "model.json".into(),
                    source,
                })
        })?;
        r.save("assignments.csv", |w| {
            Ok(write_assignments_csv(w, &fm.ids, labels, &probability, &refined)?)
        })?;
        r.manifest.summary.final_class_count = Some(refinement.class_count_after);
        Ok(())
    })
}

/// Classes and probabilities for households the model never saw.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignments {
    pub ids: Vec<String>,
    pub classes: Vec<i64>,
    /// Probability of the assigned class.
    pub probability: Vec<f64>,
    /// Full `n x classes` probability matrix, columns in `model.classes` order.
    pub probabilities: Array2<f64>,
}

impl Assignments {
    /// `household_id,class,probability` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["household_id", "class", "probability"])?;
        for i in 0..self.ids.len() {
            wtr.write_record([
                self.ids[i].clone(),
                self.classes[i].to_string(),
                format!("{:.6}", self.probability[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Assigns profiles to the model's classes using the normalization bounds
/// frozen into the model. Nothing is retrained.
pub fn assign_new(model: &GbdtModel, profiles: &[LoadProfile]) -> Result<Assignments> {
    let expected = feature_names();
    for (i, name) in expected.iter().enumerate() {
        match model.feature_names.get(i) {
            Some(m) if m == name => {}
            Some(m) => {
                return Err(PipelineError::Stage(format!(
                    "model column {i} is `{m}`, expected `{name}`"
                )))
            }
            None => return Err(PipelineError::Stage(format!("model lacks column `{name}`"))),
        }
    }
    if let Some(extra) = model.feature_names.get(expected.len()) {
        return Err(PipelineError::Stage(format!("model has unexpected column `{extra}`")));
    }
    if model.bounds.is_none() {
        return Err(PipelineError::Stage("model carries no normalization bounds".into()));
    }
    if let Some(p) = profiles.iter().find(|p| p.slots.len() != crate::ingest::SLOTS_PER_DAY) {
        return Err(PipelineError::Stage(format!(
            "household `{}` has {} slots",
            p.household_id,
            p.slots.len()
        )));
    }
    let fm = assemble_matrix(profiles);
    if fm.is_empty() {
        return Ok(Assignments {
            ids: Vec::new(),
            classes: Vec::new(),
            probability: Vec::new(),
            probabilities: Array2::zeros((0, model.class_count())),
        });
    }
    let scaled = model.scale(fm.values.view())?;
    let probabilities = model.predict_proba(scaled.view())?;
    let classes = model.predict(scaled.view())?;
    let probability = own_probability(model, &probabilities, &classes);
    Ok(Assignments {
        ids: fm.ids,
        classes,
        probability,
        probabilities,
    })
}

pub fn load_model(path: &Path) -> Result<GbdtModel> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|source| PipelineError::File {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(GbdtModel::from_json(&text)?)
}

/// File-level [`assign_new`]: model JSON and profile CSV in, assignment
/// CSV out. Returns the number of households assigned.
pub fn assign_files(model_path: &Path, profiles_path: &Path, out: &Path) -> Result<usize> {
    let model = load_model(model_path)?;
    let profiles = read_profiles_csv(open(profiles_path)?)?;
    let a = assign_new(&model, &profiles)?;
    a.write_csv(create(out)?)?;
    Ok(a.ids.len())
}
