//! Second-level segmentation: points the classifier is unsure about, or
//! that sit in unstable classes, are clustered again on their own and the
//! new clusters replace the flagged classes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{train, ClassifierError, GbdtParams};
use crate::cluster::{Algorithm, Labeling};
use crate::distance::DistanceMatrix;
use crate::ingest::normalize_columns;
use crate::validity::{sweep_with, SweepSettings, ValidityError, ValidityReport};

pub const DEFAULT_PROBABILITY_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("inconsistent refinement input: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Validity(#[from] ValidityError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// Rows whose top probability is below `threshold`, together with every
/// row predicted into a flagged class. Ascending row order.
pub fn extract_low_confidence(
    probabilities: ArrayView2<f64>,
    predicted: &[i64],
    threshold: f64,
    flagged: &BTreeSet<i64>,
) -> Vec<usize> {
    (0..predicted.len())
        .filter(|&i| {
            let top = probabilities.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            top < threshold || flagged.contains(&predicted[i])
        })
        .collect()
}

/// Re-clustering of a subset: the labeling at the pooled-vote k and the
/// sweep report behind it.
#[derive(Debug, Clone)]
pub struct Recluster {
    pub labeling: Labeling,
    pub report: ValidityReport,
    pub k: usize,
}

/// Rescales the subset's raw features on their own range, sweeps every
/// algorithm in `algorithms` and takes the k most indices agree on across
/// algorithms. The labeling comes from the first algorithm. Returns
/// `None` when the subset has fewer than `k_min + 1` rows.
pub fn recluster_subset(
    raw: ArrayView2<f64>,
    algorithms: &[Algorithm],
    settings: &SweepSettings,
) -> Result<Option<Recluster>, RefineError> {
    let n = raw.nrows();
    if algorithms.is_empty() || n < settings.k_min + 1 {
        return Ok(None);
    }
    let (scaled, _) = normalize_columns(raw);
    let dist = DistanceMatrix::from_rows(scaled.view());
    let local = SweepSettings {
        k_max: settings.k_max.min(n - 1),
        ..settings.clone()
    };
    let mut outcome = None;
    for &algorithm in algorithms {
        let run = match sweep_with(scaled.view(), &dist, algorithm, &local) {
            Ok(run) => run,
            // a subset DBSCAN cannot split simply casts no vote
            Err(ValidityError::Cluster(_)) if algorithm == Algorithm::Dbscan => continue,
            Err(e) => return Err(e.into()),
        };
        match &mut outcome {
            None => outcome = Some(run),
            Some(o) => o.extend(run),
        }
    }
    let Some(outcome) = outcome else {
        return Ok(None);
    };
    let Some(k) = outcome.report.pooled_majority() else {
        return Ok(None);
    };
    let first = algorithms[0];
    let entry = outcome
        .report
        .entries
        .iter()
        .position(|e| e.algorithm == first && e.k == k)
        .or_else(|| {
            outcome
                .report
                .choice(first)
                .and_then(|c| c.majority)
                .map(|p| p.entry)
        });
    let Some(entry) = entry else {
        return Ok(None);
    };
    let labeling = outcome.labelings[entry].clone();
    let k = labeling.cluster_count();
    Ok(Some(Recluster {
        labeling,
        report: outcome.report,
        k,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    /// Classes removed from the labeling: the flagged ones plus any class
    /// whose every member was re-clustered.
    pub flagged_classes: BTreeSet<i64>,
    /// Row indices of the re-clustered points.
    pub subset_rows: Vec<usize>,
    pub subset_ids: Vec<String>,
    pub subset_report: Option<ValidityReport>,
    pub subset_k: usize,
    pub final_labels: Vec<i64>,
    pub class_count_before: usize,
    pub class_count_after: usize,
    /// Why no re-clustering happened, if it did not.
    pub skipped: Option<String>,
    pub levels: usize,
}

/// Replaces `flagged` classes with the subset's clusters. Surviving classes
/// keep their relative order and are renumbered from 0; subset cluster `j`
/// becomes class `survivors + j`. Subset rows from unflagged classes move
/// to their new class.
pub fn merge(
    original: &[i64],
    flagged: &BTreeSet<i64>,
    subset_rows: &[usize],
    subset_labels: &[i64],
) -> Result<RefinementResult, RefineError> {
    if subset_rows.len() != subset_labels.len() {
        return Err(RefineError::Inconsistent(format!(
            "{} subset rows with {} labels",
            subset_rows.len(),
            subset_labels.len()
        )));
    }
    let n = original.len();
    let mut in_subset = vec![false; n];
    for &r in subset_rows {
        if r >= n || in_subset[r] {
            return Err(RefineError::Inconsistent(format!("bad or repeated subset row {r}")));
        }
        in_subset[r] = true;
    }
    let before: BTreeSet<i64> = original.iter().copied().collect();
    for f in flagged {
        if !before.contains(f) {
            return Err(RefineError::Inconsistent(format!("flagged class {f} not present")));
        }
    }
    if let Some(i) = (0..n).find(|&i| flagged.contains(&original[i]) && !in_subset[i]) {
        return Err(RefineError::Inconsistent(format!(
            "row {i} of flagged class {} is outside the subset",
            original[i]
        )));
    }
    let subset_classes: BTreeSet<i64> = subset_labels.iter().copied().collect();
    let subset_k = subset_classes.len();
    if subset_classes.iter().copied().ne(0..subset_k as i64) {
        return Err(RefineError::Inconsistent(
            "subset labels must be contiguous from 0".into(),
        ));
    }
    let remaining: BTreeSet<i64> = (0..n).filter(|&i| !in_subset[i]).map(|i| original[i]).collect();
    let removed: BTreeSet<i64> = before.difference(&remaining).copied().collect();
    let survivors: BTreeMap<i64, i64> = remaining
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new as i64))
        .collect();
    let offset = survivors.len() as i64;
    let mut final_labels: Vec<i64> = original.iter().map(|l| survivors.get(l).copied().unwrap_or(-1)).collect();
    for (&r, &l) in subset_rows.iter().zip(subset_labels) {
        final_labels[r] = offset + l;
    }
    let mut flagged_classes = flagged.clone();
    flagged_classes.extend(removed);
    Ok(RefinementResult {
        class_count_before: before.len(),
        class_count_after: survivors.len() + subset_k,
        flagged_classes,
        subset_rows: subset_rows.to_vec(),
        subset_ids: Vec::new(),
        subset_report: None,
        subset_k,
        final_labels,
        skipped: None,
        levels: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineSettings {
    pub probability_threshold: f64,
    /// Re-cluster only members of flagged classes, ignoring probability.
    pub flagged_only: bool,
    pub algorithms: Vec<Algorithm>,
    pub depth: usize,
}

impl Default for RefineSettings {
    fn default() -> Self {
        RefineSettings {
            probability_threshold: DEFAULT_PROBABILITY_THRESHOLD,
            flagged_only: false,
            algorithms: vec![Algorithm::KMeans, Algorithm::Agglomerative],
            depth: 1,
        }
    }
}

fn unchanged(labels: &[i64], flagged: &BTreeSet<i64>, reason: String) -> RefinementResult {
    let count = labels.iter().collect::<BTreeSet<_>>().len();
    RefinementResult {
        flagged_classes: flagged.clone(),
        subset_rows: Vec::new(),
        subset_ids: Vec::new(),
        subset_report: None,
        subset_k: 0,
        final_labels: labels.to_vec(),
        class_count_before: count,
        class_count_after: count,
        skipped: Some(reason),
        levels: 0,
    }
}

/// Full refinement. Level one gates on `probabilities`/`predicted` and the
/// flagged classes; deeper levels retrain the classifier on the current
/// labels and gate on probability alone.
#[allow(clippy::too_many_arguments)]
pub fn refine(
    ids: &[String],
    raw: ArrayView2<f64>,
    scaled: ArrayView2<f64>,
    probabilities: ArrayView2<f64>,
    predicted: &[i64],
    flagged: &BTreeSet<i64>,
    settings: &RefineSettings,
    sweep: &SweepSettings,
    gbdt: &GbdtParams,
    feature_names: &[String],
) -> Result<RefinementResult, RefineError> {
    let mut labels = predicted.to_vec();
    let mut probs: Array2<f64> = probabilities.to_owned();
    let mut gate_flags = flagged.clone();
    let mut result: Option<RefinementResult> = None;
    for level in 0..settings.depth.max(1) {
        if level > 0 {
            let model = train(scaled, &labels, feature_names.to_vec(), gbdt)?;
            probs = model.predict_proba(scaled)?;
            labels = model.predict(scaled)?;
            gate_flags.clear();
        }
        let subset = if settings.flagged_only {
            (0..labels.len()).filter(|&i| gate_flags.contains(&labels[i])).collect()
        } else {
            extract_low_confidence(probs.view(), &labels, settings.probability_threshold, &gate_flags)
        };
        let step = if subset.is_empty() {
            unchanged(&labels, &gate_flags, "no point below threshold or in a flagged class".into())
        } else {
            let sub_raw = raw.select(Axis(0), &subset);
            match recluster_subset(sub_raw.view(), &settings.algorithms, sweep)? {
                None => unchanged(
                    &labels,
                    &gate_flags,
                    format!("subset of {} rows too small to re-cluster", subset.len()),
                ),
                Some(rc) => {
                    let mut r = merge(&labels, &gate_flags, &subset, &rc.labeling.labels)?;
                    r.subset_ids = subset.iter().map(|&i| ids[i].clone()).collect();
                    r.subset_report = Some(rc.report);
                    r
                }
            }
        };
        let stop = step.skipped.is_some();
        labels = step.final_labels.clone();
        result = Some(match result {
            None => RefinementResult { levels: 1, ..step },
            Some(prev) => {
                if stop {
                    prev
                } else {
                    RefinementResult {
                        levels: prev.levels + 1,
                        class_count_before: prev.class_count_before,
                        ..step
                    }
                }
            }
        });
        if stop {
            break;
        }
    }
    Ok(result.expect("at least one level"))
}

/// `household_id,final_class,probability,was_refined` rows.
pub fn write_assignments_csv<W: Write>(
    w: W,
    ids: &[String],
    classes: &[i64],
    probability: &[f64],
    refined: &[bool],
) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["household_id", "final_class", "probability", "was_refined"])?;
    for i in 0..ids.len() {
        wtr.write_record([
            ids[i].clone(),
            classes[i].to_string(),
            format!("{:.6}", probability[i]),
            refined[i].to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
