use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{canonicalize, check_finite, validate_k, Algorithm, ClusterError, Labeling};
use crate::distance::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    Average,
    #[default]
    Ward,
}

impl Linkage {
    pub const ALL: [Linkage; 4] = [Linkage::Single, Linkage::Complete, Linkage::Average, Linkage::Ward];

    pub fn name(self) -> &'static str {
        match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
            Linkage::Ward => "ward",
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Linkage {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Linkage::ALL
            .into_iter()
            .find(|l| l.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| ClusterError::Parameter(format!("unknown linkage `{s}`")))
    }
}

/// One merge step. Cluster ids follow the usual convention: `0..n` are the
/// original points and merge `i` creates cluster `n + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// Linkage height. For ward this is the square root of the
    /// Lance-Williams value, so two singletons merge at their distance.
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub linkage: Linkage,
    /// Sorted by non-decreasing height.
    pub merges: Vec<Merge>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

impl Dendrogram {
    /// Flat labels with exactly `k` clusters, taken by undoing the last
    /// `k - 1` merges.
    pub fn cut(&self, k: usize) -> Vec<i64> {
        let n = self.n;
        let k = k.clamp(1, n.max(1));
        let mut uf = UnionFind::new(2 * n);
        for (i, m) in self.merges.iter().take(n - k).enumerate() {
            uf.parent[m.a] = n + i;
            uf.parent[m.b] = n + i;
        }
        let roots: Vec<i64> = (0..n).map(|p| uf.find(p) as i64).collect();
        canonicalize(&roots)
    }

    /// Increase in within-cluster sum of squares caused by each ward merge.
    pub fn ward_costs(&self) -> Option<Vec<f64>> {
        (self.linkage == Linkage::Ward)
            .then(|| self.merges.iter().map(|m| m.distance * m.distance / 2.0).collect())
    }
}

/// Condensed symmetric matrix over active cluster slots.
struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.n * i - i * (i + 1) / 2 + (j - i - 1)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

fn lance_williams(linkage: Linkage, dki: f64, dkj: f64, dij: f64, ni: f64, nj: f64, nk: f64) -> f64 {
    match linkage {
        Linkage::Single => dki.min(dkj),
        Linkage::Complete => dki.max(dkj),
        Linkage::Average => (ni * dki + nj * dkj) / (ni + nj),
        Linkage::Ward => ((ni + nk) * dki + (nj + nk) * dkj - nk * dij) / (ni + nj + nk),
    }
}

/// Full merge tree by the nearest-neighbour chain algorithm with
/// Lance-Williams updates. Ward runs on squared distances.
pub fn agglomerative_dendrogram(
    data: ArrayView2<f64>,
    linkage: Linkage,
) -> Result<Dendrogram, ClusterError> {
    validate_k(data.nrows(), 1, 1)?;
    check_finite(data)?;
    Ok(dendrogram_from(&DistanceMatrix::from_rows(data), linkage))
}

pub(crate) fn dendrogram_from(dist: &DistanceMatrix, linkage: Linkage) -> Dendrogram {
    let n = dist.len();
    let mut cd = Condensed {
        n,
        d: Vec::with_capacity(n * n.saturating_sub(1) / 2),
    };
    for i in 0..n {
        for j in i + 1..n {
            let v = dist.get(i, j);
            cd.d.push(if linkage == Linkage::Ward { v * v } else { v });
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    // raw merges: (slot a, slot b, height) with the result stored in slot b
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    for _ in 0..n.saturating_sub(1) {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).unwrap_or(0));
        }
        let (x, y, dxy) = loop {
            let x = *chain.last().unwrap();
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            // prefer the previous chain element on ties so the chain terminates
            let (mut y, mut best) = match prev {
                Some(p) => (p, cd.get(x, p)),
                None => (usize::MAX, f64::INFINITY),
            };
            for i in 0..n {
                if active[i] && i != x {
                    let v = cd.get(x, i);
                    if v < best {
                        best = v;
                        y = i;
                    }
                }
            }
            if Some(y) == prev {
                chain.pop();
                chain.pop();
                break (x, y, best);
            }
            chain.push(y);
        };
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let v = lance_williams(linkage, cd.get(k, a), cd.get(k, b), dxy, na, nb, size[k] as f64);
            cd.set(k, b, v);
        }
        active[a] = false;
        size[b] += size[a];
        let height = if linkage == Linkage::Ward { dxy.max(0.0).sqrt() } else { dxy };
        raw.push((a, b, height));
    }
    // stable sort by height, then relabel with union-find
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&p, &q| raw[p].2.total_cmp(&raw[q].2));
    let mut uf = UnionFind::new(n);
    let mut cluster_id: Vec<usize> = (0..n).collect();
    let mut sizes = vec![1usize; n];
    let mut merges = Vec::with_capacity(raw.len());
    for (step, &o) in order.iter().enumerate() {
        let (a, b, h) = raw[o];
        let ra = uf.find(a);
        let rb = uf.find(b);
        let (ia, ib) = (cluster_id[ra], cluster_id[rb]);
        let s = sizes[ra] + sizes[rb];
        uf.parent[ra] = rb;
        cluster_id[rb] = n + step;
        sizes[rb] = s;
        merges.push(Merge {
            a: ia.min(ib),
            b: ia.max(ib),
            distance: h,
            size: s,
        });
    }
    Dendrogram { n, linkage, merges }
}

/// Flat agglomerative clustering into `k` clusters; also returns the full
/// dendrogram so other cuts are free.
pub fn agglomerative(
    data: ArrayView2<f64>,
    k: usize,
    linkage: Linkage,
) -> Result<(Labeling, Dendrogram), ClusterError> {
    validate_k(data.nrows(), k, 2)?;
    let tree = agglomerative_dendrogram(data, linkage)?;
    let labeling = labeling_from_cut(&tree, k);
    Ok((labeling, tree))
}

pub(crate) fn labeling_from_cut(tree: &Dendrogram, k: usize) -> Labeling {
    Labeling::new(Algorithm::Agglomerative, tree.cut(k))
        .with_param("k", k)
        .with_param("linkage", tree.linkage.name())
}
