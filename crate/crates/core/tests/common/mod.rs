//! Independent reference implementations used by several test targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};

pub fn brute_kmeans(x: &Array2<f64>, k: usize) -> f64 {
    let n = x.nrows();
    let d = x.ncols();
    let mut best = f64::INFINITY;
    let mut assign = vec![0usize; n];
    loop {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for j in 0..d {
                sums[assign[i]][j] += x[[i, j]];
            }
        }
        let mut j_val = 0.0;
        for i in 0..n {
            let c = assign[i];
            for j in 0..d {
                let m = sums[c][j] / counts[c] as f64;
                j_val += (x[[i, j]] - m).powi(2);
            }
        }
        best = best.min(j_val);
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            assign[pos] += 1;
            if assign[pos] < k {
                break;
            }
            assign[pos] = 0;
            pos += 1;
        }
    }
}

pub fn brute_kmedoids(x: &Array2<f64>, k: usize) -> f64 {
    let n = x.nrows();
    let dist = |a: usize, b: usize| {
        (0..x.ncols()).map(|j| (x[[a, j]] - x[[b, j]]).powi(2)).sum::<f64>().sqrt()
    };
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let meds: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let cost: f64 = (0..n)
            .map(|i| meds.iter().map(|&m| dist(i, m)).fold(f64::INFINITY, f64::min))
            .sum();
        best = best.min(cost);
    }
    best
}

fn groups(labels: &[i64]) -> Vec<Vec<usize>> {
    let distinct: BTreeSet<i64> = labels.iter().copied().collect();
    distinct
        .into_iter()
        .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect()
}

fn dist(x: &Array2<f64>, a: usize, b: usize) -> f64 {
    (0..x.ncols()).map(|j| (x[[a, j]] - x[[b, j]]).powi(2)).sum::<f64>().sqrt()
}

fn mean_of(x: &Array2<f64>, rows: &[usize]) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| rows.iter().map(|&i| x[[i, j]]).sum::<f64>() / rows.len() as f64)
        .collect()
}

fn point_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

/// Mean over points of (b - a) / max(a, b); points alone in their cluster
/// score 0.
pub fn oracle_silhouette(x: &Array2<f64>, labels: &[i64]) -> f64 {
    let gs = groups(labels);
    let mut total = 0.0;
    for (gi, g) in gs.iter().enumerate() {
        for &i in g {
            if g.len() == 1 {
                continue;
            }
            let a = g.iter().filter(|&&j| j != i).map(|&j| dist(x, i, j)).sum::<f64>() / (g.len() - 1) as f64;
            let mut b = f64::INFINITY;
            for (hi, h) in gs.iter().enumerate() {
                if hi != gi {
                    b = b.min(h.iter().map(|&j| dist(x, i, j)).sum::<f64>() / h.len() as f64);
                }
            }
            total += (b - a) / a.max(b);
        }
    }
    total / labels.len() as f64
}

/// Mean over clusters of the worst (s_i + s_j) / d(c_i, c_j), with s the
/// mean distance to the centroid.
pub fn oracle_dbi(x: &Array2<f64>, labels: &[i64]) -> f64 {
    let gs = groups(labels);
    let cents: Vec<Vec<f64>> = gs.iter().map(|g| mean_of(x, g)).collect();
    let s: Vec<f64> = gs
        .iter()
        .zip(&cents)
        .map(|(g, c)| {
            g.iter()
                .map(|&i| point_dist(&x.row(i).to_vec(), c))
                .sum::<f64>()
                / g.len() as f64
        })
        .collect();
    let k = gs.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in 0..k {
            if i != j {
                worst = worst.max((s[i] + s[j]) / point_dist(&cents[i], &cents[j]));
            }
        }
        total += worst;
    }
    total / k as f64
}

/// (B / (K - 1)) / (W / (N - K)) with B the size-weighted squared spread of
/// centroids about the grand mean and W the squared spread within clusters.
pub fn oracle_ch(x: &Array2<f64>, labels: &[i64]) -> f64 {
    let gs = groups(labels);
    let n = labels.len();
    let k = gs.len();
    let all: Vec<usize> = (0..n).collect();
    let grand = mean_of(x, &all);
    let mut b = 0.0;
    let mut w = 0.0;
    for g in &gs {
        let c = mean_of(x, g);
        b += g.len() as f64 * point_dist(&c, &grand).powi(2);
        for &i in g {
            w += point_dist(&x.row(i).to_vec(), &c).powi(2);
        }
    }
    (b / (k - 1) as f64) / (w / (n - k) as f64)
}

/// Rows kept by the refinement gate, by direct scan.
pub fn brute_low_confidence(p: ArrayView2<f64>, predicted: &[i64], threshold: f64, flagged: &BTreeSet<i64>) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..p.nrows() {
        let mut top = p[[i, 0]];
        for j in 1..p.ncols() {
            if p[[i, j]] > top {
                top = p[[i, j]];
            }
        }
        if top < threshold || flagged.contains(&predicted[i]) {
            out.push(i);
        }
    }
    out
}
