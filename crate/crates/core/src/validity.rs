//! Silhouette, Davies-Bouldin and Calinski-Harabasz indices, and the k-sweep
//! that picks a cluster count per index and by vote.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::RangeInclusive;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cluster::{
    self, Algorithm, ClusterError, Labeling, Linkage, DEFAULT_RESTARTS, NOISE,
};
use crate::distance::{euclidean, squared_euclidean, DistanceMatrix};

#[derive(Debug, Error)]
pub enum ValidityError {
    #[error("index undefined: {0}")]
    UndefinedIndex(String),
    #[error("invalid sweep: {0}")]
    Parameter(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// Dense group ids `0..k` for arbitrary labels, with group sizes.
fn groups(labels: &[i64]) -> (Vec<usize>, Vec<usize>) {
    let distinct: std::collections::BTreeSet<i64> = labels.iter().copied().collect();
    let order: BTreeMap<i64, usize> = distinct.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let g: Vec<usize> = labels.iter().map(|l| order[l]).collect();
    let mut sizes = vec![0; order.len()];
    for &c in &g {
        sizes[c] += 1;
    }
    (g, sizes)
}

fn centroids(data: ArrayView2<f64>, g: &[usize], sizes: &[usize]) -> Array2<f64> {
    let mut c = Array2::zeros((sizes.len(), data.ncols()));
    for (i, &k) in g.iter().enumerate() {
        let mut row = c.row_mut(k);
        row += &data.row(i);
    }
    for (k, &s) in sizes.iter().enumerate() {
        c.row_mut(k).mapv_inplace(|v| v / s as f64);
    }
    c
}

fn require_clusters(k: usize) -> Result<(), ValidityError> {
    if k < 2 {
        return Err(ValidityError::UndefinedIndex(format!("{k} cluster(s)")));
    }
    Ok(())
}

/// Mean silhouette over a precomputed distance matrix. Singleton clusters
/// contribute 0.
pub fn silhouette_from(dist: &DistanceMatrix, labels: &[i64]) -> Result<f64, ValidityError> {
    let (g, sizes) = groups(labels);
    require_clusters(sizes.len())?;
    let k = sizes.len();
    let total: f64 = (0..g.len())
        .into_par_iter()
        .map(|i| {
            if sizes[g[i]] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, &d) in dist.row(i).iter().enumerate() {
                sums[g[j]] += d;
            }
            let a = sums[g[i]] / (sizes[g[i]] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != g[i])
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / g.len() as f64)
}

pub fn silhouette(data: ArrayView2<f64>, labels: &[i64]) -> Result<f64, ValidityError> {
    silhouette_from(&DistanceMatrix::from_rows(data), labels)
}

/// Davies-Bouldin index. Coincident centroids with nonzero scatter give
/// `+inf`.
pub fn davies_bouldin(data: ArrayView2<f64>, labels: &[i64]) -> Result<f64, ValidityError> {
    let (g, sizes) = groups(labels);
    require_clusters(sizes.len())?;
    let k = sizes.len();
    let c = centroids(data, &g, &sizes);
    let mut scatter = vec![0.0; k];
    for (i, &ci) in g.iter().enumerate() {
        scatter[ci] += euclidean(data.row(i), c.row(ci));
    }
    for (s, &n) in scatter.iter_mut().zip(&sizes) {
        *s /= n as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in (0..k).filter(|&j| j != i) {
            let num = scatter[i] + scatter[j];
            let d = euclidean(c.row(i), c.row(j));
            let r = if d > 0.0 {
                num / d
            } else if num > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(r);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Calinski-Harabasz index `B/W * (N-K)/(K-1)`.
pub fn calinski_harabasz(data: ArrayView2<f64>, labels: &[i64]) -> Result<f64, ValidityError> {
    let (g, sizes) = groups(labels);
    let n = g.len();
    let k = sizes.len();
    if k < 2 || k >= n {
        return Err(ValidityError::UndefinedIndex(format!("K = {k} with N = {n}")));
    }
    let c = centroids(data, &g, &sizes);
    let mean = data.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let b: f64 = (0..k)
        .map(|i| sizes[i] as f64 * squared_euclidean(c.row(i), mean.view()))
        .sum();
    let w: f64 = g
        .iter()
        .enumerate()
        .map(|(i, &ci)| squared_euclidean(data.row(i), c.row(ci)))
        .sum();
    if w <= 0.0 {
        return Err(ValidityError::UndefinedIndex("zero within-cluster dispersion".into()));
    }
    Ok(b / w * (n - k) as f64 / (k - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Index {
    Silhouette,
    DaviesBouldin,
    CalinskiHarabasz,
}

impl Index {
    pub const ALL: [Index; 3] = [Index::Silhouette, Index::DaviesBouldin, Index::CalinskiHarabasz];

    /// Whether `a` is strictly better than `b` under this index.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Index::DaviesBouldin => a < b,
            _ => a > b,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Index::Silhouette => "silhouette",
            Index::DaviesBouldin => "dbi",
            Index::CalinskiHarabasz => "chi",
        }
    }
}

/// Scores of one labeling. An index that is undefined for the labeling is
/// `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IndexScores {
    pub silhouette: Option<f64>,
    pub dbi: Option<f64>,
    pub chi: Option<f64>,
}

impl IndexScores {
    pub fn get(&self, index: Index) -> Option<f64> {
        match index {
            Index::Silhouette => self.silhouette,
            Index::DaviesBouldin => self.dbi,
            Index::CalinskiHarabasz => self.chi,
        }
    }
}

/// All three indices on the non-noise rows of a labeling.
pub fn score_labels(data: ArrayView2<f64>, dist: &DistanceMatrix, labels: &[i64]) -> IndexScores {
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != NOISE).collect();
    let (sub_data, sub_dist, sub_labels);
    let (data, dist, labels) = if keep.len() == labels.len() {
        (data, dist, labels)
    } else {
        sub_data = data.select(ndarray::Axis(0), &keep);
        sub_dist = dist.subset(&keep);
        sub_labels = keep.iter().map(|&i| labels[i]).collect::<Vec<_>>();
        (sub_data.view(), &sub_dist, sub_labels.as_slice())
    };
    IndexScores {
        silhouette: silhouette_from(dist, labels).ok(),
        dbi: davies_bouldin(data, labels).ok(),
        chi: calinski_harabasz(data, labels).ok(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityEntry {
    pub algorithm: Algorithm,
    /// Number of non-noise clusters in the labeling.
    pub k: usize,
    pub params: BTreeMap<String, Value>,
    pub scores: IndexScores,
    pub noise_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pick {
    /// Position in `ValidityReport::entries`.
    pub entry: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmChoice {
    pub algorithm: Algorithm,
    pub silhouette: Option<Pick>,
    pub dbi: Option<Pick>,
    pub chi: Option<Pick>,
    pub majority: Option<Pick>,
}

impl AlgorithmChoice {
    pub fn by_index(&self, index: Index) -> Option<Pick> {
        match index {
            Index::Silhouette => self.silhouette,
            Index::DaviesBouldin => self.dbi,
            Index::CalinskiHarabasz => self.chi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidityReport {
    pub entries: Vec<ValidityEntry>,
    pub chosen: Vec<AlgorithmChoice>,
}

impl ValidityReport {
    pub fn choice(&self, algorithm: Algorithm) -> Option<&AlgorithmChoice> {
        self.chosen.iter().find(|c| c.algorithm == algorithm)
    }

    /// Appends another report, shifting its entry positions.
    pub fn extend(&mut self, other: ValidityReport) {
        let offset = self.entries.len();
        let shift = |p: Option<Pick>| {
            p.map(|p| Pick {
                entry: p.entry + offset,
                k: p.k,
            })
        };
        self.entries.extend(other.entries);
        self.chosen.extend(other.chosen.into_iter().map(|c| AlgorithmChoice {
            algorithm: c.algorithm,
            silhouette: shift(c.silhouette),
            dbi: shift(c.dbi),
            chi: shift(c.chi),
            majority: shift(c.majority),
        }));
    }

    /// Most frequent k over every per-index vote of every algorithm; ties
    /// go to the smaller k.
    pub fn pooled_majority(&self) -> Option<usize> {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for c in &self.chosen {
            for idx in Index::ALL {
                if let Some(p) = c.by_index(idx) {
                    *votes.entry(p.k).or_default() += 1;
                }
            }
        }
        votes
            .iter()
            .fold(None, |best: Option<(usize, usize)>, (&k, &n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((k, n)),
            })
            .map(|(k, _)| k)
    }

    /// Table of chosen k per algorithm and index.
    pub fn write_choice_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["algorithm", "silhouette", "dbi", "chi", "majority"])?;
        let show = |p: Option<Pick>| p.map(|p| p.k.to_string()).unwrap_or_default();
        for c in &self.chosen {
            wtr.write_record([
                c.algorithm.name().to_string(),
                show(c.silhouette),
                show(c.dbi),
                show(c.chi),
                show(c.majority),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// One row per sweep entry, for plotting index curves.
    pub fn write_curves_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["algorithm", "k", "params", "silhouette", "dbi", "chi", "noise_fraction"])?;
        let show = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.entries {
            wtr.write_record([
                e.algorithm.name().to_string(),
                e.k.to_string(),
                serde_json::to_string(&e.params).unwrap_or_default(),
                show(e.scores.silhouette),
                show(e.scores.dbi),
                show(e.scores.chi),
                e.noise_fraction.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Settings shared by every algorithm in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub restarts: usize,
    pub linkage: Linkage,
    pub min_pts: usize,
    /// Explicit eps values; empty means the default grid.
    pub eps_grid: Vec<f64>,
    pub eps_count: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            k_min: 2,
            k_max: 30,
            seed: 0,
            restarts: DEFAULT_RESTARTS,
            linkage: Linkage::Ward,
            min_pts: 5,
            eps_grid: Vec::new(),
            eps_count: 20,
        }
    }
}

/// A sweep's report together with the labeling behind every entry.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: ValidityReport,
    pub labelings: Vec<Labeling>,
}

impl SweepOutcome {
    /// Labeling chosen by the majority vote for `algorithm`, if any.
    pub fn chosen_labeling(&self, algorithm: Algorithm) -> Option<&Labeling> {
        let pick = self.report.choice(algorithm)?.majority?;
        self.labelings.get(pick.entry)
    }

    pub fn extend(&mut self, other: SweepOutcome) {
        self.report.extend(other.report);
        self.labelings.extend(other.labelings);
    }
}

fn entry_of(data: ArrayView2<f64>, dist: &DistanceMatrix, l: &Labeling) -> ValidityEntry {
    ValidityEntry {
        algorithm: l.algorithm,
        k: l.cluster_count(),
        params: l.params.clone(),
        scores: score_labels(data, dist, &l.labels),
        noise_fraction: l.noise_count() as f64 / l.labels.len().max(1) as f64,
    }
}

/// Per-index optimum with ties to the earlier entry.
fn best_by(entries: &[ValidityEntry], eligible: &[usize], index: Index) -> Option<Pick> {
    let mut best: Option<(usize, f64)> = None;
    for &e in eligible {
        if let Some(v) = entries[e].scores.get(index).filter(|v| !v.is_nan()) {
            if best.is_none_or(|(_, bv)| index.better(v, bv)) {
                best = Some((e, v));
            }
        }
    }
    best.map(|(e, _)| Pick {
        entry: e,
        k: entries[e].k,
    })
}

/// k picked by at least two indices, else the smallest picked k.
fn vote(picks: &[Option<Pick>]) -> Option<Pick> {
    let found: Vec<Pick> = picks.iter().flatten().copied().collect();
    let agreed = found
        .iter()
        .filter(|p| found.iter().filter(|q| q.k == p.k).count() >= 2)
        .min_by_key(|p| p.k);
    agreed.or_else(|| found.iter().min_by_key(|p| p.k)).copied()
}

fn k_sweep_choice(algorithm: Algorithm, entries: &[ValidityEntry]) -> AlgorithmChoice {
    let eligible: Vec<usize> = (0..entries.len()).collect();
    let silhouette = best_by(entries, &eligible, Index::Silhouette);
    let dbi = best_by(entries, &eligible, Index::DaviesBouldin);
    let chi = best_by(entries, &eligible, Index::CalinskiHarabasz);
    AlgorithmChoice {
        algorithm,
        silhouette,
        dbi,
        chi,
        majority: vote(&[silhouette, dbi, chi]),
    }
}

/// Rank-sum selection over labelings with at least two clusters: each
/// index ranks entries (1 = best, absent = worst), the smallest rank sum
/// wins, ties go to fewer clusters and then to the earlier entry.
pub(crate) fn rank_sum_choice(algorithm: Algorithm, entries: &[ValidityEntry]) -> AlgorithmChoice {
    let eligible: Vec<usize> = (0..entries.len()).filter(|&e| entries[e].k >= 2).collect();
    let mut best: Option<(usize, usize)> = None;
    for &e in &eligible {
        let mut sum = 0;
        for idx in Index::ALL {
            sum += match entries[e].scores.get(idx) {
                Some(v) => {
                    1 + eligible
                        .iter()
                        .filter(|&&o| {
                            entries[o]
                                .scores
                                .get(idx)
                                .is_some_and(|ov| idx.better(ov, v))
                        })
                        .count()
                }
                None => eligible.len() + 1,
            };
        }
        let better = match best {
            None => true,
            Some((b, bs)) => sum < bs || (sum == bs && entries[e].k < entries[b].k),
        };
        if better {
            best = Some((e, sum));
        }
    }
    AlgorithmChoice {
        algorithm,
        silhouette: best_by(entries, &eligible, Index::Silhouette),
        dbi: best_by(entries, &eligible, Index::DaviesBouldin),
        chi: best_by(entries, &eligible, Index::CalinskiHarabasz),
        majority: best.map(|(e, _)| Pick {
            entry: e,
            k: entries[e].k,
        }),
    }
}

/// Runs `algorithm` for every k in `k_range`, scores each labeling and
/// selects k per index and by majority.
pub fn sweep(
    data: ArrayView2<f64>,
    algorithm: Algorithm,
    k_range: RangeInclusive<usize>,
    seed: u64,
) -> Result<ValidityReport, ValidityError> {
    let settings = SweepSettings {
        k_min: *k_range.start(),
        k_max: *k_range.end(),
        seed,
        ..SweepSettings::default()
    };
    let dist = DistanceMatrix::from_rows(data);
    Ok(sweep_with(data, &dist, algorithm, &settings)?.report)
}

/// As [`sweep`] with a shared distance matrix and full settings. DBSCAN
/// sweeps its eps grid instead of k.
pub fn sweep_with(
    data: ArrayView2<f64>,
    dist: &DistanceMatrix,
    algorithm: Algorithm,
    settings: &SweepSettings,
) -> Result<SweepOutcome, ValidityError> {
    let n = data.nrows();
    cluster::check_finite(data)?;
    if algorithm == Algorithm::Dbscan {
        let grid = if settings.eps_grid.is_empty() {
            cluster::eps_grid_from(dist, settings.min_pts, settings.eps_count)?
        } else {
            settings.eps_grid.clone()
        };
        let sweep = cluster::dbscan_sweep_from(data, dist, &grid, settings.min_pts)?;
        return Ok(SweepOutcome {
            report: sweep.report,
            labelings: sweep.labelings,
        });
    }
    if settings.k_min < 2 || settings.k_min > settings.k_max || settings.k_max + 1 > n {
        return Err(ValidityError::Parameter(format!(
            "k range {}..={} not within [2, {}]",
            settings.k_min,
            settings.k_max,
            n.saturating_sub(1)
        )));
    }
    let ks: Vec<usize> = (settings.k_min..=settings.k_max).collect();
    let labelings: Vec<Labeling> = match algorithm {
        Algorithm::KMeans => ks
            .par_iter()
            .map(|&k| cluster::kmeans(data, k, settings.seed, settings.restarts))
            .collect::<Result<_, _>>()?,
        Algorithm::KMedoids => ks
            .par_iter()
            .map(|&k| cluster::kmedoids_with(dist, k, settings.seed))
            .collect(),
        Algorithm::Agglomerative => {
            let tree = cluster::dendrogram_from(dist, settings.linkage);
            ks.iter().map(|&k| cluster::labeling_from_cut(&tree, k)).collect()
        }
        Algorithm::Dbscan => unreachable!(),
    };
    let entries: Vec<ValidityEntry> = labelings
        .par_iter()
        .map(|l| entry_of(data, dist, l))
        .collect();
    let choice = k_sweep_choice(algorithm, &entries);
    Ok(SweepOutcome {
        report: ValidityReport {
            entries,
            chosen: vec![choice],
        },
        labelings,
    })
}

pub(crate) fn entries_for(
    data: ArrayView2<f64>,
    dist: &DistanceMatrix,
    labelings: &[Labeling],
) -> Vec<ValidityEntry> {
    labelings.par_iter().map(|l| entry_of(data, dist, l)).collect()
}
