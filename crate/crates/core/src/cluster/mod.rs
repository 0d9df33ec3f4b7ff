//! Clustering algorithms over the rows of a feature matrix. All distances are
//! Euclidean and every run is deterministic for a given seed.

mod agglomerative;
mod dbscan;
mod kmeans;
mod kmedoids;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use agglomerative::{agglomerative, agglomerative_dendrogram, Dendrogram, Linkage, Merge};
pub use dbscan::{dbscan, dbscan_labels, dbscan_sweep, default_eps_grid, DbscanSweep};
pub use kmeans::{kmeans, kmeans_plus_plus, lloyd, lloyd_hartigan, LloydRun, DEFAULT_RESTARTS, MAX_LLOYD_ITERATIONS};
pub use kmedoids::{kmedoids, pam, pam_build, PamRun, PAM_RANDOM_STARTS};

pub(crate) use agglomerative::{dendrogram_from, labeling_from_cut};
pub(crate) use dbscan::{dbscan_sweep_from, eps_grid_from};
pub(crate) use kmedoids::kmedoids_with;

/// Label for DBSCAN noise points.
pub const NOISE: i64 = -1;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("sweep failed: {0}")]
    SweepFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    KMeans,
    KMedoids,
    Agglomerative,
    Dbscan,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::KMeans,
        Algorithm::KMedoids,
        Algorithm::Agglomerative,
        Algorithm::Dbscan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::KMeans => "kmeans",
            Algorithm::KMedoids => "kmedoids",
            Algorithm::Agglomerative => "agglomerative",
            Algorithm::Dbscan => "dbscan",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| ClusterError::Parameter(format!("unknown algorithm `{s}`")))
    }
}

/// One algorithm's cluster assignment for every row of a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeling {
    pub algorithm: Algorithm,
    pub params: BTreeMap<String, Value>,
    /// Aligned with matrix rows; `NOISE` marks DBSCAN noise.
    pub labels: Vec<i64>,
    /// Objective `J` for k-means (squared) and k-medoids (plain distances).
    pub objective: Option<f64>,
}

impl Labeling {
    pub fn new(algorithm: Algorithm, labels: Vec<i64>) -> Self {
        Labeling {
            algorithm,
            params: BTreeMap::new(),
            labels,
            objective: None,
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    /// Number of distinct non-noise labels.
    pub fn cluster_count(&self) -> usize {
        let mut seen: Vec<i64> = self.labels.iter().copied().filter(|&l| l != NOISE).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    /// Short stable hash of the parameter map.
    pub fn params_hash(&self) -> String {
        let canonical = serde_json::to_string(&self.params).unwrap_or_default();
        let digest = Sha256::digest(format!("{}|{canonical}", self.algorithm).as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// Writes `household_id,algorithm,params_hash,label` rows.
    pub fn write_csv<W: Write>(&self, w: W, ids: &[String]) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["household_id", "algorithm", "params_hash", "label"])?;
        let hash = self.params_hash();
        for (id, l) in ids.iter().zip(&self.labels) {
            wtr.write_record([id.as_str(), self.algorithm.name(), &hash, &l.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Reads the layout written by [`Labeling::write_csv`]. Returns the ids
/// and the labeling; parameters are not stored in the file.
pub fn read_labels_csv<R: std::io::Read>(r: R) -> Result<(Vec<String>, Labeling), ClusterError> {
    let bad = |m: String| ClusterError::Parameter(m);
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| bad(format!("labels file lacks column `{name}`")))
    };
    let (id_col, alg_col, label_col) = (col("household_id")?, col("algorithm")?, col("label")?);
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut algorithm: Option<Algorithm> = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let a: Algorithm = field(alg_col).parse()?;
        if algorithm.is_some_and(|b| b != a) {
            return Err(bad(format!("row {}: mixed algorithms in one labels file", line + 1)));
        }
        algorithm = Some(a);
        ids.push(field(id_col).to_string());
        labels.push(
            field(label_col)
                .parse::<i64>()
                .map_err(|_| bad(format!("row {}: label `{}` is not an integer", line + 1, field(label_col))))?,
        );
    }
    let algorithm = algorithm.ok_or_else(|| bad("labels file has no rows".into()))?;
    Ok((ids, Labeling::new(algorithm, labels)))
}

/// Renumbers labels to `0..k` in order of first appearance, keeping `NOISE`.
pub fn canonicalize(labels: &[i64]) -> Vec<i64> {
    let mut map: HashMap<i64, i64> = HashMap::new();
    labels
        .iter()
        .map(|&l| {
            if l == NOISE {
                return NOISE;
            }
            let next = map.len() as i64;
            *map.entry(l).or_insert(next)
        })
        .collect()
}

pub(crate) fn validate_k(n: usize, k: usize, min_k: usize) -> Result<(), ClusterError> {
    if n == 0 {
        return Err(ClusterError::Parameter("empty matrix".into()));
    }
    if k < min_k || k > n {
        return Err(ClusterError::Parameter(format!(
            "k = {k} outside [{min_k}, {n}]"
        )));
    }
    Ok(())
}

pub(crate) fn check_finite(data: ndarray::ArrayView2<f64>) -> Result<(), ClusterError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ClusterError::Parameter("matrix contains non-finite values".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_labels_follow_first_appearance() {
        assert_eq!(canonicalize(&[5, 5, -1, 2, 5, 9]), vec![0, 0, -1, 1, 0, 2]);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("som".parse::<Algorithm>().is_err());
    }

    #[test]
    fn labels_csv_round_trip() {
        let l = Labeling::new(Algorithm::Dbscan, vec![0, -1, 1]);
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut buf = Vec::new();
        l.write_csv(&mut buf, &ids).unwrap();
        let (back_ids, back) = read_labels_csv(buf.as_slice()).unwrap();
        assert_eq!(back_ids, ids);
        assert_eq!(back.labels, l.labels);
        assert_eq!(back.algorithm, Algorithm::Dbscan);
    }

    #[test]
    fn params_hash_is_stable_and_sensitive() {
        let a = Labeling::new(Algorithm::KMeans, vec![0, 1]).with_param("k", 2);
        let b = Labeling::new(Algorithm::KMeans, vec![1, 0]).with_param("k", 2);
        let c = Labeling::new(Algorithm::KMeans, vec![0, 1]).with_param("k", 3);
        assert_eq!(a.params_hash(), b.params_hash());
        assert_ne!(a.params_hash(), c.params_hash());
        assert_eq!(a.params_hash().len(), 12);
    }
}
