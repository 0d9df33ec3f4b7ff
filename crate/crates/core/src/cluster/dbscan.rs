use std::collections::VecDeque;

use ndarray::ArrayView2;

use super::{canonicalize, check_finite, Algorithm, ClusterError, Labeling, NOISE};
use crate::distance::DistanceMatrix;
use crate::features::percentile_sorted;
use crate::validity::{entries_for, rank_sum_choice, ValidityReport};

/// DBSCAN labels from a distance matrix. A point is core when at least
/// `min_pts` points (itself included) lie within `eps`. Clusters are the
/// connected components of core points; a border point joins the cluster
/// of its nearest core neighbour, which keeps the result independent of
/// row order.
pub fn dbscan_labels(dist: &DistanceMatrix, eps: f64, min_pts: usize) -> Vec<i64> {
    let n = dist.len();
    let core: Vec<bool> = (0..n)
        .map(|i| dist.row(i).iter().filter(|&&d| d <= eps).count() >= min_pts)
        .collect();
    let mut labels = vec![NOISE; n];
    let mut next = 0i64;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !core[start] || labels[start] != NOISE {
            continue;
        }
        labels[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for (q, &d) in dist.row(p).iter().enumerate() {
                if core[q] && labels[q] == NOISE && d <= eps {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    for p in 0..n {
        if core[p] {
            continue;
        }
        let nearest = (0..n)
            .filter(|&q| core[q] && dist.get(p, q) <= eps)
            .min_by(|&a, &b| dist.get(p, a).total_cmp(&dist.get(p, b)));
        if let Some(q) = nearest {
            labels[p] = labels[q];
        }
    }
    canonicalize(&labels)
}

fn check_params(eps: f64, min_pts: usize) -> Result<(), ClusterError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ClusterError::Parameter(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(ClusterError::Parameter("min_pts must be at least 1".into()));
    }
    Ok(())
}

fn labeling(labels: Vec<i64>, eps: f64, min_pts: usize) -> Labeling {
    Labeling::new(Algorithm::Dbscan, labels)
        .with_param("eps", eps)
        .with_param("min_pts", min_pts)
}

pub fn dbscan(data: ArrayView2<f64>, eps: f64, min_pts: usize) -> Result<Labeling, ClusterError> {
    check_params(eps, min_pts)?;
    check_finite(data)?;
    let dist = DistanceMatrix::from_rows(data);
    Ok(labeling(dbscan_labels(&dist, eps, min_pts), eps, min_pts))
}

/// `count` log-spaced eps values between the 1st and 99th percentile of
/// each point's distance to its `min_pts`-th nearest point (itself
/// counted).
pub fn default_eps_grid(
    data: ArrayView2<f64>,
    min_pts: usize,
    count: usize,
) -> Result<Vec<f64>, ClusterError> {
    check_finite(data)?;
    eps_grid_from(&DistanceMatrix::from_rows(data), min_pts, count)
}

pub(crate) fn eps_grid_from(
    dist: &DistanceMatrix,
    min_pts: usize,
    count: usize,
) -> Result<Vec<f64>, ClusterError> {
    let n = dist.len();
    if n == 0 || min_pts == 0 || count == 0 {
        return Err(ClusterError::Parameter("empty eps grid".into()));
    }
    let rank = min_pts.min(n) - 1;
    let mut kdist: Vec<f64> = (0..n)
        .map(|i| {
            let mut row = dist.row(i).to_vec();
            row.select_nth_unstable_by(rank, f64::total_cmp);
            row[rank]
        })
        .collect();
    kdist.sort_by(f64::total_cmp);
    let hi = percentile_sorted(&kdist, 0.99);
    let mut lo = percentile_sorted(&kdist, 0.01);
    if hi <= 0.0 {
        return Err(ClusterError::Parameter(
            "all neighbour distances are zero; no eps grid".into(),
        ));
    }
    if lo <= 0.0 {
        lo = kdist.iter().copied().find(|&d| d > 0.0).unwrap_or(hi).min(hi);
    }
    if count == 1 || lo == hi {
        return Ok(vec![hi]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

/// Every labeling of an eps sweep with its validity report.
#[derive(Debug, Clone)]
pub struct DbscanSweep {
    pub report: ValidityReport,
    /// One labeling per grid value, in grid order.
    pub labelings: Vec<Labeling>,
}

impl DbscanSweep {
    /// The labeling with the best combined index rank.
    pub fn chosen(&self) -> &Labeling {
        let pick = self.report.chosen[0].majority.expect("sweep has a choice");
        &self.labelings[pick.entry]
    }
}

/// Runs DBSCAN at every eps in `grid` and ranks the labelings by the three
/// validity indices, noise excluded.
pub fn dbscan_sweep(
    data: ArrayView2<f64>,
    grid: &[f64],
    min_pts: usize,
) -> Result<DbscanSweep, ClusterError> {
    check_finite(data)?;
    dbscan_sweep_from(data, &DistanceMatrix::from_rows(data), grid, min_pts)
}

pub(crate) fn dbscan_sweep_from(
    data: ArrayView2<f64>,
    dist: &DistanceMatrix,
    grid: &[f64],
    min_pts: usize,
) -> Result<DbscanSweep, ClusterError> {
    if grid.is_empty() {
        return Err(ClusterError::Parameter("empty eps grid".into()));
    }
    for &eps in grid {
        check_params(eps, min_pts)?;
    }
    let labelings: Vec<Labeling> = grid
        .iter()
        .map(|&eps| labeling(dbscan_labels(dist, eps, min_pts), eps, min_pts))
        .collect();
    let entries = entries_for(data, dist, &labelings);
    let choice = rank_sum_choice(Algorithm::Dbscan, &entries);
    if choice.majority.is_none() {
        return Err(ClusterError::SweepFailure(
            "no eps value produced two or more clusters".into(),
        ));
    }
    Ok(DbscanSweep {
        report: ValidityReport {
            entries,
            chosen: vec![choice],
        },
        labelings,
    })
}
