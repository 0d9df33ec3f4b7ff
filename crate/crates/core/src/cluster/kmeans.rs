use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{canonicalize, check_finite, validate_k, Algorithm, ClusterError, Labeling};
use crate::distance::squared_euclidean;

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_LLOYD_ITERATIONS: usize = 300;

/// Result of one Lloyd run from a fixed initialization.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub objective: f64,
    /// Objective after every centroid update.
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// k-means++ seeding: first center uniform, then proportional to the
/// squared distance to the nearest chosen center.
pub fn kmeans_plus_plus(data: ArrayView2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = data.nrows();
    let mut centers = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&data.row(first));
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| squared_euclidean(data.row(i), data.row(first)))
        .collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&data.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(squared_euclidean(data.row(i), data.row(pick)));
        }
    }
    centers
}

fn objective(data: ArrayView2<f64>, centroids: &Array2<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| squared_euclidean(data.row(i), centroids.row(c)))
        .sum()
}

/// Nearest centroid; an exact tie keeps the current label so the objective
/// can never increase.
fn assign(data: ArrayView2<f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, label) in labels.iter_mut().enumerate() {
        let row = data.row(i);
        let mut best = *label;
        let mut best_d = if best < centroids.nrows() {
            squared_euclidean(row, centroids.row(best))
        } else {
            f64::INFINITY
        };
        for (c, centroid) in centroids.rows().into_iter().enumerate() {
            let d = squared_euclidean(row, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if best != *label {
            *label = best;
            changed = true;
        }
    }
    changed
}

fn update_centroids(data: ArrayView2<f64>, labels: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut sums = Array2::zeros((k, data.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        let mut row = sums.row_mut(c);
        row += &data.row(i);
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            sums.row_mut(c).mapv_inplace(|v| v / count as f64);
        }
    }
    (sums, counts)
}

/// Lloyd iterations from the given centroids until assignments stop
/// changing. An empty cluster is re-seeded with the point farthest from its
/// own centroid.
pub fn lloyd(data: ArrayView2<f64>, init: Array2<f64>, max_iter: usize) -> LloydRun {
    let k = init.nrows();
    let mut centroids = init;
    let mut labels = vec![usize::MAX; data.nrows()];
    assign(data, &centroids, &mut labels);
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let (mut next, mut counts) = update_centroids(data, &labels, k);
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let donor = (0..data.nrows())
                .filter(|&i| counts[labels[i]] > 1)
                .map(|i| (i, squared_euclidean(data.row(i), next.row(labels[i]))))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            let Some((p, _)) = donor else { break };
            counts[labels[p]] -= 1;
            labels[p] = c;
            counts[c] = 1;
            next = update_centroids(data, &labels, k).0;
        }
        centroids = next;
        trace.push(objective(data, &centroids, &labels));
        if !assign(data, &centroids, &mut labels) {
            converged = true;
            break;
        }
    }
    let objective = objective(data, &centroids, &labels);
    LloydRun {
        labels,
        centroids,
        objective,
        trace,
        converged,
    }
}

/// Single-point transfers (Hartigan's rule): moving `x` from cluster `a`
/// to `b` lowers the objective exactly when
/// `n_a/(n_a-1) |x-c_a|^2 > n_b/(n_b+1) |x-c_b|^2`. Centroids are updated
/// in place. Returns whether any point moved.
fn hartigan_pass(data: ArrayView2<f64>, run: &mut LloydRun) -> bool {
    let k = run.centroids.nrows();
    let mut counts = vec![0usize; k];
    for &l in &run.labels {
        counts[l] += 1;
    }
    let mut moved = false;
    for i in 0..data.nrows() {
        let x = data.row(i);
        let a = run.labels[i];
        if counts[a] < 2 {
            continue;
        }
        let na = counts[a] as f64;
        let loss = na / (na - 1.0) * squared_euclidean(x, run.centroids.row(a));
        let mut best = (a, loss);
        for b in (0..k).filter(|&b| b != a) {
            let nb = counts[b] as f64;
            let gain = nb / (nb + 1.0) * squared_euclidean(x, run.centroids.row(b));
            if gain < best.1 * (1.0 - 1e-12) {
                best = (b, gain);
            }
        }
        let b = best.0;
        if b == a {
            continue;
        }
        let nb = counts[b] as f64;
        let mut ca = run.centroids.row_mut(a);
        ca.zip_mut_with(&x, |c, &v| *c = (*c * na - v) / (na - 1.0));
        let mut cb = run.centroids.row_mut(b);
        cb.zip_mut_with(&x, |c, &v| *c = (*c * nb + v) / (nb + 1.0));
        counts[a] -= 1;
        counts[b] += 1;
        run.labels[i] = b;
        moved = true;
    }
    moved
}

/// Lloyd followed by alternating Hartigan transfer passes and Lloyd runs
/// until neither changes the partition.
pub fn lloyd_hartigan(data: ArrayView2<f64>, init: Array2<f64>, max_iter: usize) -> LloydRun {
    let mut run = lloyd(data, init, max_iter);
    for _ in 0..max_iter {
        if !hartigan_pass(data, &mut run) {
            break;
        }
        let (centroids, _) = update_centroids(data, &run.labels, run.centroids.nrows());
        let mut trace = std::mem::take(&mut run.trace);
        trace.push(objective(data, &centroids, &run.labels));
        let next = lloyd_from_labels(data, run.labels.clone(), centroids, max_iter);
        trace.extend(next.trace.iter().copied());
        run = LloydRun { trace, ..next };
    }
    run
}

fn lloyd_from_labels(
    data: ArrayView2<f64>,
    labels: Vec<usize>,
    centroids: Array2<f64>,
    max_iter: usize,
) -> LloydRun {
    let mut labels = labels;
    let mut centroids = centroids;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        if !assign(data, &centroids, &mut labels) {
            converged = true;
            break;
        }
        let (next, counts) = update_centroids(data, &labels, centroids.nrows());
        if counts.contains(&0) {
            // a transfer-stable partition never empties a cluster under
            // Lloyd; keep the previous centroids if it somehow does
            break;
        }
        centroids = next;
        trace.push(objective(data, &centroids, &labels));
    }
    let objective = objective(data, &centroids, &labels);
    LloydRun {
        labels,
        centroids,
        objective,
        trace,
        converged,
    }
}

/// Best of `restarts` k-means++ initialized runs by objective. Each run is
/// Lloyd's algorithm polished with Hartigan single-point transfers.
pub fn kmeans(
    data: ArrayView2<f64>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<Labeling, ClusterError> {
    validate_k(data.nrows(), k, 1)?;
    check_finite(data)?;
    let restarts = restarts.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<LloydRun> = None;
    for _ in 0..restarts {
        let init = kmeans_plus_plus(data, k, &mut rng);
        let run = lloyd_hartigan(data, init, MAX_LLOYD_ITERATIONS);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let labels: Vec<i64> = best.labels.iter().map(|&l| l as i64).collect();
    let mut labeling = Labeling::new(Algorithm::KMeans, canonicalize(&labels))
        .with_param("k", k)
        .with_param("seed", seed)
        .with_param("restarts", restarts);
    labeling.objective = Some(best.objective);
    Ok(labeling)
}
