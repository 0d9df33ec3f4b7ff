use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::ConsensusError;
use crate::distance::squared_euclidean;

pub const EARLY_EXAGGERATION: f64 = 12.0;
pub const EXAGGERATION_ITERATIONS: usize = 250;
const KL_EVERY: usize = 50;

#[derive(Debug, Clone)]
pub struct Embedding {
    /// n x 2 coordinates.
    pub points: Array2<f64>,
    /// `(iteration, KL(P || Q))` samples, always including the end of the
    /// exaggeration phase and the final iteration.
    pub kl_trace: Vec<(usize, f64)>,
}

impl Embedding {
    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        self.kl_trace.iter().find(|(i, _)| *i == iteration).map(|&(_, v)| v)
    }

    pub fn final_kl(&self) -> f64 {
        self.kl_trace.last().map(|&(_, v)| v).unwrap_or(f64::NAN)
    }
}

/// Conditional affinities of one point with the Gaussian bandwidth found by
/// bisection on the entropy.
fn conditional_row(d2: &[f64], i: usize, target_entropy: f64) -> Vec<f64> {
    let n = d2.len();
    let mut beta = 1.0;
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut p = vec![0.0; n];
    for _ in 0..200 {
        // shift by the nearest distance for numerical range
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| d2[j])
            .fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        for j in 0..n {
            p[j] = if j == i { 0.0 } else { (-(d2[j] - dmin) * beta).exp() };
            sum += p[j];
        }
        let mut weighted = 0.0;
        for j in 0..n {
            p[j] /= sum;
            weighted += p[j] * (d2[j] - dmin);
        }
        let entropy = sum.ln() + beta * weighted;
        let diff = entropy - target_entropy;
        if diff.abs() < 1e-6 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    p
}

fn kl_divergence(p: &[f64], y: &Array2<f64>) -> f64 {
    let n = y.nrows();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += 1.0 / (1.0 + squared_euclidean(y.row(i), y.row(j)));
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                let q = (1.0 / (1.0 + squared_euclidean(y.row(i), y.row(j))) / z).max(1e-300);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

/// Exact t-SNE into two dimensions with the standard schedule: early
/// exaggeration 12 for 250 iterations, momentum 0.5 then 0.8, adaptive
/// gains and learning rate n/12.
pub fn tsne_embed(
    data: ArrayView2<f64>,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> Result<Embedding, ConsensusError> {
    let n = data.nrows();
    if !(perplexity > 0.0) || (n as f64) <= 3.0 * perplexity {
        return Err(ConsensusError::Parameter(format!(
            "perplexity {perplexity} needs more than {} points, got {n}",
            3.0 * perplexity
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(ConsensusError::Parameter("matrix contains non-finite values".into()));
    }
    let target = perplexity.ln();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d2: Vec<f64> = (0..n).map(|j| squared_euclidean(data.row(i), data.row(j))).collect();
            conditional_row(&d2, i, target)
        })
        .collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((rows[i][j] + rows[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let learning_rate = n as f64 / EARLY_EXAGGERATION;
    let mut kl_trace = Vec::new();

    for it in 0..iterations {
        let exaggeration = if it < EXAGGERATION_ITERATIONS { EARLY_EXAGGERATION } else { 1.0 };
        let momentum = if it < EXAGGERATION_ITERATIONS { 0.5 } else { 0.8 };
        let num: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                if i == j {
                    0.0
                } else {
                    1.0 / (1.0 + squared_euclidean(y.row(i), y.row(j)))
                }
            })
            .collect();
        let z: f64 = num.iter().sum();
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let w = num[i * n + j];
                    let f = (exaggeration * p[i * n + j] - w / z) * w;
                    g[0] += f * (y[[i, 0]] - y[[j, 0]]);
                    g[1] += f * (y[[i, 1]] - y[[j, 1]]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                let gain = &mut gains[[i, d]];
                *gain = if (g > 0.0) != (update[[i, d]] > 0.0) {
                    *gain + 0.2
                } else {
                    *gain * 0.8
                }
                .max(0.01);
                update[[i, d]] = momentum * update[[i, d]] - learning_rate * *gain * g;
                y[[i, d]] += update[[i, d]];
            }
        }
        let mean = y.mean_axis(ndarray::Axis(0)).expect("non-empty");
        y -= &mean;
        let done = it + 1;
        if done % KL_EVERY == 0 || done == EXAGGERATION_ITERATIONS || done == iterations {
            kl_trace.push((done, kl_divergence(&p, &y)));
        }
    }
    Ok(Embedding { points: y, kl_trace })
}
