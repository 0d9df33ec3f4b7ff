//! Cross-algorithm agreement: contingency tables between labelings, optimal
//! label alignment, per-cluster stability flags, and a t-SNE projection for
//! visual inspection.

mod hungarian;
mod tsne;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Algorithm, Labeling, NOISE};

pub use hungarian::min_cost_assignment;
pub use tsne::{tsne_embed, Embedding, EARLY_EXAGGERATION, EXAGGERATION_ITERATIONS};

/// Per-cluster agreement below this marks a cluster unstable.
pub const DEFAULT_INSTABILITY_THRESHOLD: f64 = 0.7;

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("labelings differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Co-occurrence counts between two labelings over the points neither
/// marks as noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyMatrix {
    pub algo_a: Option<Algorithm>,
    pub algo_b: Option<Algorithm>,
    /// Every non-noise label of A, ascending; row order of `counts`.
    pub row_labels: Vec<i64>,
    pub col_labels: Vec<i64>,
    pub counts: Vec<Vec<usize>>,
}

impl ContingencyMatrix {
    pub fn from_counts(row_labels: Vec<i64>, col_labels: Vec<i64>, counts: Vec<Vec<usize>>) -> Self {
        ContingencyMatrix {
            algo_a: None,
            algo_b: None,
            row_labels,
            col_labels,
            counts,
        }
    }

    pub fn between(a: &Labeling, b: &Labeling) -> Result<Self, ConsensusError> {
        let mut m = contingency(&a.labels, &b.labels)?;
        m.algo_a = Some(a.algorithm);
        m.algo_b = Some(b.algorithm);
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        (0..self.col_labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        ContingencyMatrix {
            algo_a: self.algo_b,
            algo_b: self.algo_a,
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
            counts: (0..self.col_labels.len())
                .map(|j| self.counts.iter().map(|r| r[j]).collect())
                .collect(),
        }
    }

    /// Square table with A's labels down the side and B's across the top.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let corner = match (self.algo_a, self.algo_b) {
            (Some(a), Some(b)) => format!("{a}\\{b}"),
            _ => String::new(),
        };
        let mut header = vec![corner];
        header.extend(self.col_labels.iter().map(|l| l.to_string()));
        wtr.write_record(&header)?;
        for (label, row) in self.row_labels.iter().zip(&self.counts) {
            let mut rec = vec![label.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn distinct(labels: &[i64]) -> Vec<i64> {
    let set: BTreeSet<i64> = labels.iter().copied().filter(|&l| l != NOISE).collect();
    set.into_iter().collect()
}

/// Contingency table of two labelings. A point is counted only when both
/// labelings assign it to a cluster; every non-noise label still gets a
/// row or column.
pub fn contingency(labels_a: &[i64], labels_b: &[i64]) -> Result<ContingencyMatrix, ConsensusError> {
    if labels_a.len() != labels_b.len() {
        return Err(ConsensusError::LengthMismatch(labels_a.len(), labels_b.len()));
    }
    let rows = distinct(labels_a);
    let cols = distinct(labels_b);
    let row_at: BTreeMap<i64, usize> = rows.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let col_at: BTreeMap<i64, usize> = cols.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut counts = vec![vec![0usize; cols.len()]; rows.len()];
    for (a, b) in labels_a.iter().zip(labels_b) {
        if *a != NOISE && *b != NOISE {
            counts[row_at[a]][col_at[b]] += 1;
        }
    }
    Ok(ContingencyMatrix::from_counts(rows, cols, counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub algo_a: Option<Algorithm>,
    pub algo_b: Option<Algorithm>,
    /// A-label to matched B-label; A-labels left without a partner (when A
    /// has more clusters) are absent.
    pub alignment: BTreeMap<i64, i64>,
    pub overall_agreement: f64,
    pub per_cluster_agreement: BTreeMap<i64, f64>,
    pub unstable: BTreeSet<i64>,
    pub threshold: f64,
}

/// Optimal one-to-one matching of A-clusters to B-clusters maximizing the
/// matched counts; exact ties prefer pairing equal label values.
pub fn align(matrix: &ContingencyMatrix, threshold: f64) -> AgreementReport {
    let (ka, kb) = (matrix.row_labels.len(), matrix.col_labels.len());
    let size = ka.max(kb);
    let scale = size as i64 + 1;
    let cost: Vec<Vec<i64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| {
                    if i < ka && j < kb {
                        let same = (matrix.row_labels[i] == matrix.col_labels[j]) as i64;
                        -(matrix.counts[i][j] as i64 * scale + same)
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let assignment = min_cost_assignment(&cost);
    let row_sums = matrix.row_sums();
    let total = matrix.total();
    let mut alignment = BTreeMap::new();
    let mut per_cluster = BTreeMap::new();
    let mut unstable = BTreeSet::new();
    let mut matched = 0;
    for i in 0..ka {
        let j = assignment[i];
        let hit = if j < kb {
            alignment.insert(matrix.row_labels[i], matrix.col_labels[j]);
            matrix.counts[i][j]
        } else {
            0
        };
        matched += hit;
        let agreement = if row_sums[i] > 0 {
            hit as f64 / row_sums[i] as f64
        } else {
            0.0
        };
        per_cluster.insert(matrix.row_labels[i], agreement);
        if agreement < threshold {
            unstable.insert(matrix.row_labels[i]);
        }
    }
    AgreementReport {
        algo_a: matrix.algo_a,
        algo_b: matrix.algo_b,
        alignment,
        overall_agreement: if total > 0 { matched as f64 / total as f64 } else { 0.0 },
        per_cluster_agreement: per_cluster,
        unstable,
        threshold,
    }
}

/// Reference-versus-others comparison with the clusters flagged by a strict
/// majority of the reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossComparison {
    pub reference: Algorithm,
    pub tables: Vec<ContingencyMatrix>,
    pub reports: Vec<AgreementReport>,
    pub flagged: BTreeSet<i64>,
}

/// Clusters unstable in more than half of the reports.
pub fn majority_flags(reports: &[AgreementReport]) -> BTreeSet<i64> {
    let mut votes: BTreeMap<i64, usize> = BTreeMap::new();
    for r in reports {
        for &c in &r.unstable {
            *votes.entry(c).or_default() += 1;
        }
    }
    votes
        .into_iter()
        .filter(|&(_, v)| 2 * v > reports.len())
        .map(|(c, _)| c)
        .collect()
}

pub fn cross_compare(
    labelings: &[Labeling],
    reference: Algorithm,
    threshold: f64,
) -> Result<CrossComparison, ConsensusError> {
    if labelings.len() < 2 {
        return Err(ConsensusError::Parameter("need at least two labelings".into()));
    }
    let Some(base) = labelings.iter().position(|l| l.algorithm == reference) else {
        return Err(ConsensusError::Parameter(format!("no {reference} labeling")));
    };
    let mut tables = Vec::new();
    let mut reports = Vec::new();
    for (i, other) in labelings.iter().enumerate() {
        if i == base {
            continue;
        }
        let table = ContingencyMatrix::between(&labelings[base], other)?;
        reports.push(align(&table, threshold));
        tables.push(table);
    }
    let flagged = majority_flags(&reports);
    Ok(CrossComparison {
        reference,
        tables,
        reports,
        flagged,
    })
}

/// `household_id,x,y,label` rows.
pub fn write_embedding_csv<W: Write>(
    w: W,
    ids: &[String],
    embedding: &Embedding,
    labels: &[i64],
) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["household_id", "x", "y", "label"])?;
    for ((id, p), l) in ids.iter().zip(embedding.points.rows()).zip(labels) {
        wtr.write_record([id.clone(), p[0].to_string(), p[1].to_string(), l.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
