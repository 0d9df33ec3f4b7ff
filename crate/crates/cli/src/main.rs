use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use loadseg::classifier::{evaluate, shap_attribute, split_train_test, train, GbdtParams};
use loadseg::cluster::{agglomerative, dbscan, kmeans, kmedoids, read_labels_csv, Algorithm, Labeling, Linkage};
use loadseg::consensus::{cross_compare, tsne_embed, write_embedding_csv, CrossComparison};
use loadseg::distance::DistanceMatrix;
use loadseg::features::{assemble_matrix, feature_names, read_matrix_csv, write_matrix_csv};
use loadseg::ingest::{normalize_columns, read_profiles_csv, write_profiles_csv};
use loadseg::pipeline::{
    assign_files, create, load_model, load_profiles, open, run_pipeline, write_json, InputKind, PipelineConfig,
};
use loadseg::refine::{refine, write_assignments_csv, RefineSettings};
use loadseg::synth::{generate, narrative_spec};
use loadseg::validity::{sweep_with, SweepSettings};

#[derive(Parser)]
#[command(name = "loadseg", version, about = "Household load-profile segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate meter readings (or check a profile file) into profiles.csv.
    Ingest(IngestArgs),
    /// Build the 61-column feature matrix and its min-max scaled copy.
    Features(FeaturesArgs),
    /// Run one algorithm at one k (or one eps).
    Cluster(ClusterArgs),
    /// Sweep k for each algorithm and score every labeling.
    Validate(ValidateArgs),
    /// Compare labelings against a reference and flag unstable clusters.
    Consensus(ConsensusArgs),
    /// Train the classifier on a labeling with a stratified split.
    Classify(ClassifyArgs),
    /// SHAP attributions of a trained model.
    Explain(ExplainArgs),
    /// Re-cluster low-confidence points and flagged classes.
    Refine(RefineArgs),
    /// The full pipeline from a config file.
    Run(RunArgs),
    /// Assign new households to a trained model's classes.
    Assign(AssignArgs),
    /// Write the synthetic seven-class demonstration profiles.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_kind, default_value = "readings")]
    kind: InputKind,
    /// Config whose [input.schema] and [input.dates] apply.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scaled_out: Option<PathBuf>,
    #[arg(long)]
    bounds_out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Scaled feature matrix.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    algorithm: Algorithm,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 5)]
    min_pts: usize,
    #[arg(long, value_parser = parse_linkage, default_value = "average")]
    linkage: Linkage,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "kmeans,kmedoids,agglomerative,dbscan")]
    algorithms: Vec<Algorithm>,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 30)]
    k_max: usize,
    #[arg(long, value_parser = parse_linkage, default_value = "average")]
    linkage: Linkage,
    #[arg(long, default_value_t = 5)]
    min_pts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives validity.json, the curve and choice CSVs and one labels file
    /// per algorithm.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ConsensusArgs {
    /// Labels files, one per algorithm.
    #[arg(long, required = true, num_args = 1..)]
    labels: Vec<PathBuf>,
    #[arg(long, default_value = "kmeans")]
    reference: Algorithm,
    #[arg(long, default_value_t = loadseg::consensus::DEFAULT_INSTABILITY_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
    /// Scaled features; with --embedding-out, writes a t-SNE projection.
    #[arg(long, requires = "embedding_out")]
    features: Option<PathBuf>,
    #[arg(long, requires = "features")]
    embedding_out: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Raw feature matrix.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML holding GBDT parameters (rounds, learning_rate, ...).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Raw feature matrix; the model's bounds scale it.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rankings_out: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    model: PathBuf,
    /// Raw feature matrix.
    #[arg(long)]
    features: PathBuf,
    /// consensus.json whose flagged clusters are re-clustered.
    #[arg(long)]
    consensus: Option<PathBuf>,
    #[arg(long, default_value_t = loadseg::refine::DEFAULT_PROBABILITY_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    assignments_out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<InputKind>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    instability_threshold: Option<f64>,
    #[arg(long)]
    probability_threshold: Option<f64>,
    #[arg(long)]
    split_ratio: Option<f64>,
    #[arg(long)]
    no_tsne: bool,
}

#[derive(Args)]
struct AssignArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write household_id,planted_class,sub_population.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<InputKind, String> {
    match s {
        "readings" => Ok(InputKind::Readings),
        "profiles" => Ok(InputKind::Profiles),
        _ => Err(format!("unknown input kind `{s}`; expected readings or profiles")),
    }
}

fn parse_linkage(s: &str) -> Result<Linkage, String> {
    Linkage::ALL
        .into_iter()
        .find(|l| format!("{l:?}").eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown linkage `{s}`"))
}

fn read_features(path: &Path) -> Result<(Vec<String>, ndarray::Array2<f64>)> {
    let (ids, columns, values) =
        read_matrix_csv(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    if columns != feature_names() {
        let expected = feature_names();
        let bad = (0..expected.len().max(columns.len()))
            .find(|&i| columns.get(i) != expected.get(i))
            .unwrap_or(0);
        bail!(
            "{}: column {} is `{}`, expected `{}`",
            path.display(),
            bad + 1,
            columns.get(bad).map_or("<missing>", |s| s.as_str()),
            expected.get(bad).map_or("<none>", |s| s.as_str())
        );
    }
    Ok((ids, values))
}

fn read_labels(path: &Path, ids: Option<&[String]>) -> Result<Labeling> {
    let (label_ids, labeling) = read_labels_csv(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    if let Some(ids) = ids {
        if label_ids != ids {
            bail!("{}: household ids do not match the feature matrix", path.display());
        }
    }
    Ok(labeling)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut input = match &a.config {
        Some(c) => PipelineConfig::load(c)?.input,
        None => Default::default(),
    };
    input.kind = a.kind;
    let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (profiles, rejected, filtered, dropped) = load_profiles(&input, &bytes)?;
    write_profiles_csv(create(&a.out)?, &profiles)?;
    eprintln!(
        "{} households; {rejected} rows rejected, {filtered} filtered, {} households incomplete",
        profiles.len(),
        dropped.len()
    );
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let profiles = read_profiles_csv(open(&a.profiles)?)?;
    let fm = assemble_matrix(&profiles);
    fm.write_csv(create(&a.out)?)?;
    let (scaled, bounds) = normalize_columns(fm.values.view());
    if let Some(p) = a.scaled_out {
        write_matrix_csv(create(&p)?, &fm.ids, &scaled, &feature_names())?;
    }
    if let Some(p) = a.bounds_out {
        write_json(&p, &bounds)?;
    }
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let (ids, x) = read_features(&a.features)?;
    let need_k = || a.k.context("--k is required for this algorithm");
    let labeling = match a.algorithm {
        Algorithm::KMeans => kmeans(x.view(), need_k()?, a.seed, a.restarts)?,
        Algorithm::KMedoids => kmedoids(x.view(), need_k()?, a.seed)?,
        Algorithm::Agglomerative => agglomerative(x.view(), need_k()?, a.linkage)?.0,
        Algorithm::Dbscan => dbscan(x.view(), a.eps.context("--eps is required for dbscan")?, a.min_pts)?,
    };
    labeling.write_csv(create(&a.out)?, &ids)?;
    eprintln!("{} clusters, {} noise points", labeling.cluster_count(), labeling.noise_count());
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let (ids, x) = read_features(&a.features)?;
    if x.nrows() < 3 {
        bail!("{} rows; at least 3 are needed", x.nrows());
    }
    let settings = SweepSettings {
        k_min: a.k_min,
        k_max: a.k_max.min(x.nrows() - 1),
        seed: a.seed,
        linkage: a.linkage,
        min_pts: a.min_pts,
        ..SweepSettings::default()
    };
    std::fs::create_dir_all(&a.out_dir)?;
    let dist = DistanceMatrix::from_rows(x.view());
    let mut report = loadseg::validity::ValidityReport::default();
    for alg in a.algorithms {
        let outcome = sweep_with(x.view(), &dist, alg, &settings)?;
        if let Some(l) = outcome.chosen_labeling(alg) {
            l.write_csv(create(&a.out_dir.join(format!("labels_{alg}.csv")))?, &ids)?;
            eprintln!("{alg}: k = {}", l.cluster_count());
        }
        report.extend(outcome.report);
    }
    write_json(&a.out_dir.join("validity.json"), &report)?;
    report.write_curves_csv(create(&a.out_dir.join("validity_curves.csv"))?)?;
    report.write_choice_csv(create(&a.out_dir.join("validity_choice.csv"))?)?;
    Ok(())
}

fn consensus(a: ConsensusArgs) -> Result<()> {
    let mut first_ids: Option<Vec<String>> = None;
    let mut labelings = Vec::new();
    for p in &a.labels {
        let (ids, l) = read_labels_csv(open(p)?).with_context(|| format!("reading {}", p.display()))?;
        match &first_ids {
            Some(f) if *f != ids => bail!("{}: household ids differ from {}", p.display(), a.labels[0].display()),
            Some(_) => {}
            None => first_ids = Some(ids),
        }
        labelings.push(l);
    }
    let cc = cross_compare(&labelings, a.reference, a.threshold)?;
    write_json(&a.out, &cc)?;
    eprintln!("flagged clusters: {:?}", cc.flagged);
    if let (Some(f), Some(out)) = (a.features, a.embedding_out) {
        let (ids, x) = read_features(&f)?;
        let reference = labelings
            .iter()
            .find(|l| l.algorithm == a.reference)
            .expect("cross_compare found the reference");
        if Some(&ids) != first_ids.as_ref() {
            bail!("{}: household ids differ from the labels files", f.display());
        }
        let emb = tsne_embed(x.view(), a.perplexity, a.iterations, a.seed)?;
        write_embedding_csv(create(&out)?, &ids, &emb, &reference.labels)?;
    }
    Ok(())
}

fn gbdt_params(path: Option<&Path>) -> Result<GbdtParams> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(toml::from_str(&text)?)
        }
        None => Ok(GbdtParams::default()),
    }
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let (ids, raw) = read_features(&a.features)?;
    let labeling = read_labels(&a.labels, Some(&ids))?;
    if labeling.noise_count() > 0 {
        bail!("labels contain noise points; train on a labeling that covers every household");
    }
    let params = gbdt_params(a.params.as_deref())?;
    let (x, bounds) = normalize_columns(raw.view());
    let split = split_train_test(&labeling.labels, a.split_ratio, a.seed)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    let rows = |idx: &[usize]| x.select(ndarray::Axis(0), idx);
    let pick = |idx: &[usize]| idx.iter().map(|&i| labeling.labels[i]).collect::<Vec<_>>();
    let mut model = train(rows(&split.train).view(), &pick(&split.train), feature_names(), &params)?;
    model.bounds = Some(bounds);
    let metrics = evaluate(&model, rows(&split.test).view(), &pick(&split.test))?;
    eprintln!("held-out macro F1: {:?}", metrics.macro_f1);
    std::fs::write(&a.model_out, model.to_json()?)?;
    if let Some(p) = a.metrics_out {
        metrics.write_csv(create(&p)?)?;
    }
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (ids, raw) = read_features(&a.features)?;
    let x = model.scale(raw.view())?;
    let attribution = shap_attribute(&model, x.view())?;
    attribution.write_csv(create(&a.out)?, &ids)?;
    if let Some(p) = a.rankings_out {
        std::fs::write(p, attribution.rankings_json()? + "\n")?;
    }
    Ok(())
}

fn refine_cmd(a: RefineArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (ids, raw) = read_features(&a.features)?;
    let x = model.scale(raw.view())?;
    let p = model.predict_proba(x.view())?;
    let predicted = model.predict(x.view())?;
    let flagged: BTreeSet<i64> = match &a.consensus {
        Some(path) => {
            let cc: CrossComparison = serde_json::from_reader(open(path)?)?;
            cc.flagged
        }
        None => BTreeSet::new(),
    };
    let settings = RefineSettings {
        probability_threshold: a.threshold,
        ..RefineSettings::default()
    };
    let sweep = SweepSettings {
        seed: a.seed,
        linkage: Linkage::Average,
        ..SweepSettings::default()
    };
    let result = refine(
        &ids,
        raw.view(),
        x.view(),
        p.view(),
        &predicted,
        &flagged,
        &settings,
        &sweep,
        &model.params,
        &model.feature_names,
    )?;
    write_json(&a.out, &result)?;
    eprintln!(
        "{} points re-clustered into {} groups; {} -> {} classes",
        result.subset_rows.len(),
        result.subset_k,
        result.class_count_before,
        result.class_count_after
    );
    if let Some(out) = a.assignments_out {
        let subset: BTreeSet<usize> = result.subset_rows.iter().copied().collect();
        let refined: Vec<bool> = (0..ids.len()).map(|i| subset.contains(&i)).collect();
        let prob: Vec<f64> = (0..ids.len())
            .map(|i| p.row(i).iter().cloned().fold(0.0, f64::max))
            .collect();
        write_assignments_csv(create(&out)?, &ids, &result.final_labels, &prob, &refined)?;
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<bool> {
    let mut config = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = a.input {
        config.input.path = v;
    }
    if let Some(v) = a.kind {
        config.input.kind = v;
    }
    if let Some(v) = a.output_dir {
        config.output_dir = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.k_min {
        config.sweep.k_min = v;
    }
    if let Some(v) = a.k_max {
        config.sweep.k_max = v;
    }
    if let Some(v) = a.instability_threshold {
        config.instability_threshold = v;
    }
    if let Some(v) = a.probability_threshold {
        config.refine.probability_threshold = v;
    }
    if let Some(v) = a.split_ratio {
        config.split_ratio = v;
    }
    if a.no_tsne {
        config.tsne.enabled = false;
    }
    if config.input.path.as_os_str().is_empty() {
        bail!("no input: pass --input or set input.path in the config");
    }
    let manifest = run_pipeline(&config)?;
    println!("{}", manifest.run_dir.display());
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    match &manifest.failure {
        Some(f) => {
            eprintln!("failed at stage {}: {}", f.stage, f.message);
            Ok(false)
        }
        None => {
            let s = &manifest.summary;
            eprintln!(
                "{} households, reference k = {}, flagged {:?}, {} final classes",
                s.households,
                s.reference_k.unwrap_or(0),
                s.flagged_classes,
                s.final_class_count.unwrap_or(0)
            );
            Ok(true)
        }
    }
}

fn fixture(a: FixtureArgs) -> Result<()> {
    let spec = narrative_spec(a.seed);
    let fx = generate(&spec);
    write_profiles_csv(create(&a.out)?, &fx.profiles)?;
    if let Some(p) = a.truth_out {
        let mut w = csv::Writer::from_writer(create(&p)?);
        w.write_record(["household_id", "planted_class", "sub_population"])?;
        for i in 0..fx.profiles.len() {
            w.write_record([
                fx.profiles[i].household_id.clone(),
                fx.class[i].to_string(),
                fx.sub[i].to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Ingest(a) => ingest(a).map(|_| true),
        Command::Features(a) => features(a).map(|_| true),
        Command::Cluster(a) => cluster(a).map(|_| true),
        Command::Validate(a) => validate(a).map(|_| true),
        Command::Consensus(a) => consensus(a).map(|_| true),
        Command::Classify(a) => classify(a).map(|_| true),
        Command::Explain(a) => explain(a).map(|_| true),
        Command::Refine(a) => refine_cmd(a).map(|_| true),
        Command::Run(a) => run(a),
        Command::Assign(a) => assign_files(&a.model, &a.profiles, &a.out)
            .map(|n| eprintln!("{n} households assigned"))
            .map(|_| true)
            .map_err(Into::into),
        Command::Fixture(a) => fixture(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
