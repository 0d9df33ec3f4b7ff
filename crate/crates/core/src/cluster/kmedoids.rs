use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{canonicalize, check_finite, validate_k, Algorithm, ClusterError, Labeling};
use crate::distance::DistanceMatrix;

#[derive(Debug, Clone)]
pub struct PamRun {
    /// Row indices of the medoids, in label order.
    pub medoids: Vec<usize>,
    pub labels: Vec<usize>,
    /// Sum of distances from every point to its medoid.
    pub cost: f64,
    /// Cost after each accepted swap, starting with the initial cost.
    pub trace: Vec<f64>,
}

/// PAM BUILD: greedy medoid selection, each step adding the point that
/// lowers the total cost the most. Ties go to the lowest row index.
pub fn pam_build(dist: &DistanceMatrix, k: usize) -> Vec<usize> {
    let n = dist.len();
    let mut medoids = Vec::with_capacity(k);
    let first = (0..n)
        .map(|i| (i, dist.row(i).iter().sum::<f64>()))
        .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
        .0;
    medoids.push(first);
    let mut nearest: Vec<f64> = dist.row(first).to_vec();
    while medoids.len() < k {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for c in 0..n {
            if medoids.contains(&c) {
                continue;
            }
            let row = dist.row(c);
            let gain: f64 = nearest
                .iter()
                .zip(row)
                .map(|(&dn, &dc)| (dn - dc).max(0.0))
                .sum();
            if gain > best.1 {
                best = (c, gain);
            }
        }
        medoids.push(best.0);
        for (d, &dc) in nearest.iter_mut().zip(dist.row(best.0)) {
            *d = d.min(dc);
        }
    }
    medoids
}

struct Nearest {
    first: usize,
    d1: f64,
    d2: f64,
}

fn nearest_two(dist: &DistanceMatrix, medoids: &[usize]) -> Vec<Nearest> {
    (0..dist.len())
        .map(|o| {
            let mut rec = Nearest {
                first: 0,
                d1: f64::INFINITY,
                d2: f64::INFINITY,
            };
            for (m, &med) in medoids.iter().enumerate() {
                let d = dist.get(o, med);
                if d < rec.d1 {
                    rec.d2 = rec.d1;
                    rec.d1 = d;
                    rec.first = m;
                } else if d < rec.d2 {
                    rec.d2 = d;
                }
            }
            rec
        })
        .collect()
}

/// PAM SWAP from the given medoids: repeatedly applies the single
/// medoid/non-medoid exchange with the largest cost decrease until none
/// decreases the cost.
pub fn pam(dist: &DistanceMatrix, mut medoids: Vec<usize>, max_swaps: usize) -> PamRun {
    let n = dist.len();
    let k = medoids.len();
    let mut near = nearest_two(dist, &medoids);
    let mut cost: f64 = near.iter().map(|r| r.d1).sum();
    let mut trace = vec![cost];
    for _ in 0..max_swaps {
        let mut best = (0.0, usize::MAX, usize::MAX);
        let mut delta = vec![0.0; k];
        for x in 0..n {
            if medoids.contains(&x) {
                continue;
            }
            delta.iter_mut().for_each(|d| *d = 0.0);
            let mut shared = 0.0;
            let row = dist.row(x);
            for (o, rec) in near.iter().enumerate() {
                let dx = row[o];
                let keep = (dx - rec.d1).min(0.0);
                shared += keep;
                delta[rec.first] += dx.min(rec.d2) - rec.d1 - keep;
            }
            for (m, d) in delta.iter().enumerate() {
                let total = d + shared;
                if total < best.0 {
                    best = (total, m, x);
                }
            }
        }
        let tolerance = 1e-12 * (1.0 + cost.abs());
        if best.1 == usize::MAX || best.0 >= -tolerance {
            break;
        }
        medoids[best.1] = best.2;
        near = nearest_two(dist, &medoids);
        cost = near.iter().map(|r| r.d1).sum();
        trace.push(cost);
    }
    PamRun {
        labels: near.iter().map(|r| r.first).collect(),
        medoids,
        cost,
        trace,
    }
}

/// Extra randomly initialized SWAP runs tried alongside BUILD.
pub const PAM_RANDOM_STARTS: usize = 8;

/// K-medoids by PAM (BUILD + SWAP) on Euclidean distances. The BUILD start
/// is complemented by a few seeded random starts; the lowest-cost run wins.
pub fn kmedoids(data: ArrayView2<f64>, k: usize, seed: u64) -> Result<Labeling, ClusterError> {
    validate_k(data.nrows(), k, 1)?;
    check_finite(data)?;
    let dist = DistanceMatrix::from_rows(data);
    Ok(kmedoids_with(&dist, k, seed))
}

pub(crate) fn kmedoids_with(dist: &DistanceMatrix, k: usize, seed: u64) -> Labeling {
    let n = dist.len();
    let max_swaps = 100 * k.max(1) + n;
    let mut best = pam(dist, pam_build(dist, k), max_swaps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..PAM_RANDOM_STARTS {
        if k == n {
            break;
        }
        let start = sample(&mut rng, n, k).into_vec();
        let run = pam(dist, start, max_swaps);
        if run.cost < best.cost {
            best = run;
        }
    }
    let raw: Vec<i64> = best.labels.iter().map(|&l| l as i64).collect();
    let labels = canonicalize(&raw);
    // medoids reordered to match canonical labels
    let mut ordered = vec![usize::MAX; k];
    for (raw_l, canon) in raw.iter().zip(&labels) {
        ordered[*canon as usize] = best.medoids[*raw_l as usize];
    }
    ordered.retain(|&m| m != usize::MAX);
    let mut labeling = Labeling::new(Algorithm::KMedoids, labels)
        .with_param("k", k)
        .with_param("seed", seed)
        .with_param("medoids", ordered);
    labeling.objective = Some(best.cost);
    labeling
}
