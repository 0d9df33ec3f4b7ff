use loadseg::consensus::{align, contingency, tsne_embed, ContingencyMatrix};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn injections(rows: usize, cols: usize) -> Vec<Vec<usize>> {
    // all injective maps from min(rows, cols) rows into columns, as row -> col
    fn go(r: usize, rows: usize, cols: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if r == rows {
            out.push(cur.clone());
            return;
        }
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                cur.push(c);
                go(r + 1, rows, cols, used, cur, out);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(0, rows, cols, &mut vec![false; cols], &mut Vec::new(), &mut out);
    out
}

fn best_matching(counts: &[Vec<usize>]) -> usize {
    let (ka, kb) = (counts.len(), counts[0].len());
    if ka <= kb {
        injections(ka, kb)
            .iter()
            .map(|m| m.iter().enumerate().map(|(i, &j)| counts[i][j]).sum())
            .max()
            .unwrap()
    } else {
        injections(kb, ka)
            .iter()
            .map(|m| m.iter().enumerate().map(|(j, &i)| counts[i][j]).sum())
            .max()
            .unwrap()
    }
}

proptest! {
    #[test]
    fn alignment_matches_exhaustive_search(
        ka in 1usize..=6,
        kb in 1usize..=6,
        vals in proptest::collection::vec(0usize..20, 36),
    ) {
        let counts: Vec<Vec<usize>> = (0..ka).map(|i| vals[i * 6..i * 6 + kb].to_vec()).collect();
        let total: usize = counts.iter().flatten().sum();
        prop_assume!(total > 0);
        let m = ContingencyMatrix::from_counts((0..ka as i64).collect(), (0..kb as i64).collect(), counts.clone());
        let r = align(&m, 0.5);
        let best = best_matching(&counts);
        prop_assert!((r.overall_agreement - best as f64 / total as f64).abs() < 1e-12);
        let t = align(&m.transpose(), 0.5);
        prop_assert!((t.overall_agreement - r.overall_agreement).abs() < 1e-12);
    }

    #[test]
    fn margins_equal_cluster_sizes(
        pairs in proptest::collection::vec((-1i64..4, -1i64..5), 1..60),
    ) {
        let a: Vec<i64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<i64> = pairs.iter().map(|p| p.1).collect();
        let m = contingency(&a, &b).unwrap();
        let both: Vec<usize> = (0..a.len()).filter(|&i| a[i] >= 0 && b[i] >= 0).collect();
        for (r, &label) in m.row_labels.iter().enumerate() {
            let size = both.iter().filter(|&&i| a[i] == label).count();
            prop_assert_eq!(m.row_sums()[r], size);
        }
        for (c, &label) in m.col_labels.iter().enumerate() {
            let size = both.iter().filter(|&&i| b[i] == label).count();
            prop_assert_eq!(m.col_sums()[c], size);
        }
        prop_assert_eq!(m.total(), both.len());
    }
}

fn two_blobs(seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let d = 5;
    let mut x = Array2::zeros((60, d));
    let mut labels = Vec::new();
    for i in 0..60 {
        let c = i / 30;
        labels.push(c);
        for j in 0..d {
            x[[i, j]] = noise.sample(&mut rng) + if c == 1 && j == 0 { 50.0 } else { 0.0 };
        }
    }
    (x, labels)
}

#[test]
fn tsne_separates_distant_blobs_and_reduces_kl() {
    let (x, labels) = two_blobs(3);
    let e = tsne_embed(x.view(), 10.0, 1000, 7).unwrap();
    assert_eq!(e.points.dim(), (60, 2));
    assert!(e.points.iter().all(|v| v.is_finite()));
    // separable along the line joining the two embedded centroids
    let centroid = |c: usize| {
        let rows: Vec<usize> = (0..60).filter(|&i| labels[i] == c).collect();
        let s = rows.iter().fold([0.0; 2], |acc, &i| [acc[0] + e.points[[i, 0]], acc[1] + e.points[[i, 1]]]);
        [s[0] / 30.0, s[1] / 30.0]
    };
    let (c0, c1) = (centroid(0), centroid(1));
    let dir = [c1[0] - c0[0], c1[1] - c0[1]];
    let proj = |i: usize| e.points[[i, 0]] * dir[0] + e.points[[i, 1]] * dir[1];
    let max0 = (0..30).map(proj).fold(f64::NEG_INFINITY, f64::max);
    let min1 = (30..60).map(proj).fold(f64::INFINITY, f64::min);
    assert!(max0 < min1);
    let after_exaggeration = e.kl_at(250).unwrap();
    assert!(e.final_kl() <= after_exaggeration);
}

#[test]
fn tsne_is_deterministic_per_seed() {
    let (x, _) = two_blobs(4);
    let a = tsne_embed(x.view(), 5.0, 300, 11).unwrap();
    let b = tsne_embed(x.view(), 5.0, 300, 11).unwrap();
    assert_eq!(a.points, b.points);
}
