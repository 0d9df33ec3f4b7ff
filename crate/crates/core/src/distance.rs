//! Euclidean distances and a dense pairwise distance cache.

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;

#[inline]
pub fn squared_euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    squared_euclidean(a, b).sqrt()
}

/// Dense symmetric matrix of Euclidean distances between the rows of a data
/// matrix. Row-major, `n * n` entries.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_rows(data: ArrayView2<f64>) -> Self {
        let n = data.nrows();
        let mut values = vec![0.0; n * n];
        values.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            if i >= n {
                return;
            }
            let xi = data.row(i);
            for (j, slot) in row.iter_mut().enumerate() {
                if i != j {
                    *slot = euclidean(xi, data.row(j));
                }
            }
        });
        DistanceMatrix { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Restrict to the given rows (in the given order).
    pub fn subset(&self, rows: &[usize]) -> DistanceMatrix {
        let m = rows.len();
        let mut values = Vec::with_capacity(m * m);
        for &i in rows {
            let r = self.row(i);
            values.extend(rows.iter().map(|&j| r[j]));
        }
        DistanceMatrix { n: m, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pairwise_distances_are_symmetric() {
        let x = array![[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]];
        let d = DistanceMatrix::from_rows(x.view());
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 0), 5.0);
        assert_eq!(d.get(0, 2), 10.0);
        assert_eq!(d.get(2, 2), 0.0);
        let s = d.subset(&[2, 0]);
        assert_eq!(s.get(0, 1), 10.0);
    }
}
