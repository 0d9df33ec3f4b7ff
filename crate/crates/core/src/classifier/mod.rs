//! A gradient-boosted tree classifier trained to reproduce a clustering,
//! with held-out evaluation and exact SHAP attributions.

mod gbdt;
mod shap;

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gbdt::{train, GbdtModel, GbdtParams, Node, Tree};
pub use shap::{shap_attribute, tree_shap, Attribution, ClassRanking};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("expected {expected} features, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    Input(String),
}

/// Row indices of a stratified train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTestSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Classes too small to stratify, kept wholly in train.
    pub warnings: Vec<String>,
}

/// Stratified split: every class with at least two members contributes
/// close to `ratio` of its rows to train (largest-remainder rounding, at
/// least one row on each side). Smaller classes go wholly to train.
pub fn split_train_test(labels: &[i64], ratio: f64, seed: u64) -> Result<TrainTestSplit, ClassifierError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ClassifierError::Input(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut warnings = Vec::new();
    let mut quotas: BTreeMap<i64, usize> = BTreeMap::new();
    let mut remainders = Vec::new();
    let mut stratified = 0;
    for (&class, rows) in &by_class {
        if rows.len() < 2 {
            warnings.push(format!("class {class} has {} member(s); kept in train", rows.len()));
            quotas.insert(class, rows.len());
            continue;
        }
        stratified += rows.len();
        let exact = ratio * rows.len() as f64;
        quotas.insert(class, exact.floor() as usize);
        remainders.push((exact - exact.floor(), class));
    }
    let target = (ratio * stratified as f64).round() as usize;
    let assigned: usize = remainders.iter().map(|&(_, c)| quotas[&c]).sum();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, class) in remainders.iter().take(target.saturating_sub(assigned)) {
        *quotas.get_mut(&class).expect("class") += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut rows) in by_class {
        let mut q = quotas[&class];
        if rows.len() >= 2 {
            q = q.clamp(1, rows.len() - 1);
        }
        rows.shuffle(&mut rng);
        train.extend_from_slice(&rows[..q]);
        test.extend_from_slice(&rows[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(TrainTestSplit { train, test, warnings })
}

/// Per-class precision, recall and F1 from a confusion matrix. A metric is
/// `None` when undefined: no predictions of the class (precision), no true
/// members (recall), or either missing (F1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub classes: Vec<i64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub support: Vec<usize>,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
    pub accuracy: f64,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// Metrics over the given class list; labels outside it are an error.
pub fn metrics(classes: &[i64], truth: &[i64], predicted: &[i64]) -> Result<ClassMetrics, ClassifierError> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(ClassifierError::Input(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let pos = |l: &i64| {
        classes
            .iter()
            .position(|c| c == l)
            .ok_or_else(|| ClassifierError::Input(format!("unknown class {l}")))
    };
    let k = classes.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (t, p) in truth.iter().zip(predicted) {
        confusion[pos(t)?][pos(p)?] += 1;
    }
    let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let predicted_count: Vec<usize> = (0..k).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();
    let mut precision = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let p = (predicted_count[c] > 0).then(|| tp / predicted_count[c] as f64);
        let r = (support[c] > 0).then(|| tp / support[c] as f64);
        let f = match (p, r) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        precision.push(p);
        recall.push(r);
        f1.push(f);
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    Ok(ClassMetrics {
        classes: classes.to_vec(),
        accuracy: correct as f64 / truth.len() as f64,
        macro_precision: mean_defined(&precision),
        macro_recall: mean_defined(&recall),
        macro_f1: mean_defined(&f1),
        confusion,
        support,
        precision,
        recall,
        f1,
    })
}

/// Held-out metrics of `model` on scaled rows `x` with true labels.
pub fn evaluate(model: &GbdtModel, x: ArrayView2<f64>, truth: &[i64]) -> Result<ClassMetrics, ClassifierError> {
    let predicted = model.predict(x)?;
    metrics(&model.classes, truth, &predicted)
}

impl ClassMetrics {
    /// `class,precision,recall,f1,support` rows with a macro-average line.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["class", "precision", "recall", "f1", "support"])?;
        let show = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
        for c in 0..self.classes.len() {
            wtr.write_record([
                self.classes[c].to_string(),
                show(self.precision[c]),
                show(self.recall[c]),
                show(self.f1[c]),
                self.support[c].to_string(),
            ])?;
        }
        wtr.write_record([
            "macro".to_string(),
            show(self.macro_precision),
            show(self.macro_recall),
            show(self.macro_f1),
            self.support.iter().sum::<usize>().to_string(),
        ])?;
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_points_split_eighty_twenty() {
        let labels: Vec<i64> = (0..100).map(|i| (i % 3) as i64).collect();
        let s = split_train_test(&labels, 0.8, 5).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
        for c in 0..3 {
            let total = labels.iter().filter(|&&l| l == c).count() as f64;
            let in_train = s.train.iter().filter(|&&i| labels[i] == c).count() as f64;
            assert!((in_train - 0.8 * total).abs() <= 1.0);
        }
        assert_eq!(s, split_train_test(&labels, 0.8, 5).unwrap());
        assert!(split_train_test(&labels, 1.0, 5).is_err());
    }

    #[test]
    fn singleton_class_stays_in_train() {
        let s = split_train_test(&[0, 0, 0, 0, 1], 0.5, 1).unwrap();
        assert!(s.train.contains(&4));
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn hand_confusion_matrix() {
        let mut truth = vec![0; 10];
        truth.extend(vec![1; 10]);
        let mut pred = vec![0; 8];
        pred.extend(vec![1; 2]);
        pred.push(0);
        pred.extend(vec![1; 9]);
        let m = metrics(&[0, 1], &truth, &pred).unwrap();
        assert_eq!(m.confusion, vec![vec![8, 2], vec![1, 9]]);
        assert_eq!(m.precision[0], Some(8.0 / 9.0));
        assert_eq!(m.recall[0], Some(0.8));
    }

    #[test]
    fn absent_class_is_undefined() {
        let m = metrics(&[0, 1, 2], &[0, 1], &[0, 1]).unwrap();
        assert_eq!(m.recall[2], None);
        assert_eq!(m.f1[2], None);
        assert_eq!(m.macro_f1, Some(1.0));
    }
}
