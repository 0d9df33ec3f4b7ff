use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::ingest::MinMaxBounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Smallest summed hessian `p(1-p)` a child may have.
    pub min_child_weight: f64,
    /// Row fraction drawn (without replacement) per round.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            rounds: 200,
            learning_rate: 0.1,
            max_depth: 6,
            min_leaf: 1,
            min_child_weight: 1e-3,
            subsample: 1.0,
            seed: 0,
        }
    }
}

/// Largest leaf step before shrinkage.
const MAX_LEAF_STEP: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// Regression tree; node 0 is the root. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Cover-weighted mean leaf value.
    pub fn expected_value(&self) -> f64 {
        let root = self.nodes[0].cover();
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Leaf { value, cover } => value * cover / root,
                _ => 0.0,
            })
            .sum()
    }

    pub fn features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                _ => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    fn scale(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value, .. } = n {
                *value *= factor;
            }
        }
    }
}

/// Multiclass softmax gradient-boosted trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    /// Original label of each class index.
    pub classes: Vec<i64>,
    pub feature_names: Vec<String>,
    /// Scaling applied to raw features before the trees; frozen at training.
    pub bounds: Option<MinMaxBounds>,
    pub base_margins: Vec<f64>,
    /// `trees[round][class]`; leaf values already include the learning rate.
    pub trees: Vec<Vec<Tree>>,
    pub params: GbdtParams,
    /// Mean training cross-entropy before the first round and after each.
    pub loss_trace: Vec<f64>,
}

fn softmax_row(margins: &[f64], out: &mut [f64]) {
    let m = margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(margins) {
        *o = (v - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn cross_entropy(margins: &Array2<f64>, y: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &c) in margins.rows().into_iter().zip(y) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[c];
    }
    total / y.len() as f64
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    /// Row indices of every feature column sorted by value.
    order: &'a [Vec<usize>],
    params: &'a GbdtParams,
    k: usize,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone, Copy, Default)]
struct Sums {
    count: usize,
    r: f64,
    h: f64,
}

impl Grower<'_> {
    fn leaf_value(&self, s: &Sums) -> f64 {
        let k = self.k as f64;
        let step = (k - 1.0) / k * s.r / s.h.max(1e-12);
        step.clamp(-MAX_LEAF_STEP, MAX_LEAF_STEP) * self.params.learning_rate
    }

    /// Grows one tree level by level on residuals `r` with hessians `h`
    /// over rows marked in `active`.
    fn grow(&self, r: &[f64], h: &[f64], active: &[bool]) -> Tree {
        let n = r.len();
        const NONE: usize = usize::MAX;
        let mut node_of: Vec<usize> = (0..n).map(|i| if active[i] { 0 } else { NONE }).collect();
        let mut sums = vec![Sums::default()];
        for i in (0..n).filter(|&i| active[i]) {
            sums[0].count += 1;
            sums[0].r += r[i];
            sums[0].h += h[i];
        }
        // nodes under construction: None = undecided
        let mut nodes: Vec<Option<Node>> = vec![None];
        let mut frontier = vec![0usize];
        for _depth in 0..self.params.max_depth {
            if frontier.is_empty() {
                break;
            }
            let slot_of: std::collections::HashMap<usize, usize> =
                frontier.iter().enumerate().map(|(s, &nd)| (nd, s)).collect();
            let best: Vec<Vec<Option<Candidate>>> = (0..self.x.ncols())
                .into_par_iter()
                .map(|f| self.best_splits(f, r, h, &node_of, &slot_of, &sums, &frontier))
                .collect();
            let mut next = Vec::new();
            let mut split_of = vec![None; frontier.len()];
            for (s, &nd) in frontier.iter().enumerate() {
                let mut chosen: Option<Candidate> = None;
                for per_feature in &best {
                    if let Some(c) = per_feature[s] {
                        if chosen.is_none_or(|b| c.gain > b.gain) {
                            chosen = Some(c);
                        }
                    }
                }
                if let Some(c) = chosen {
                    let left = nodes.len();
                    nodes.push(None);
                    nodes.push(None);
                    sums.push(Sums::default());
                    sums.push(Sums::default());
                    nodes[nd] = Some(Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                        cover: sums[nd].count as f64,
                    });
                    split_of[s] = Some((c, left));
                    next.push(left);
                    next.push(left + 1);
                }
            }
            for i in 0..n {
                let nd = node_of[i];
                if nd == NONE {
                    continue;
                }
                // rows sitting in leaves finished at an earlier depth
                let Some(&s) = slot_of.get(&nd) else { continue };
                if let Some((c, left)) = split_of[s] {
                    let child = if self.x[[i, c.feature]] <= c.threshold { left } else { left + 1 };
                    node_of[i] = child;
                    sums[child].count += 1;
                    sums[child].r += r[i];
                    sums[child].h += h[i];
                }
            }
            frontier = next;
        }
        let nodes = nodes
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                n.unwrap_or_else(|| Node::Leaf {
                    value: self.leaf_value(&sums[i]),
                    cover: sums[i].count as f64,
                })
            })
            .collect();
        Tree { nodes }
    }

    #[allow(clippy::too_many_arguments)]
    fn best_splits(
        &self,
        f: usize,
        r: &[f64],
        h: &[f64],
        node_of: &[usize],
        slot_of: &std::collections::HashMap<usize, usize>,
        sums: &[Sums],
        frontier: &[usize],
    ) -> Vec<Option<Candidate>> {
        let m = frontier.len();
        let mut left = vec![Sums::default(); m];
        let mut last = vec![f64::NAN; m];
        let mut best: Vec<Option<Candidate>> = vec![None; m];
        let min_leaf = self.params.min_leaf.max(1);
        for &i in &self.order[f] {
            let Some(&s) = slot_of.get(&node_of[i]) else {
                continue;
            };
            let v = self.x[[i, f]];
            let total = &sums[frontier[s]];
            let l = left[s];
            if l.count >= min_leaf && v > last[s] && total.count - l.count >= min_leaf {
                let rc = total.count - l.count;
                let rh = total.h - l.h;
                if l.h >= self.params.min_child_weight && rh >= self.params.min_child_weight {
                    let rr = total.r - l.r;
                    let gain = l.r * l.r / l.count as f64 + rr * rr / rc as f64
                        - total.r * total.r / total.count as f64;
                    if gain > 1e-12 && best[s].is_none_or(|b| gain > b.gain) {
                        let mut threshold = 0.5 * (last[s] + v);
                        if threshold >= v {
                            threshold = last[s];
                        }
                        best[s] = Some(Candidate {
                            gain,
                            feature: f,
                            threshold,
                        });
                    }
                }
            }
            left[s].count += 1;
            left[s].r += r[i];
            left[s].h += h[i];
            last[s] = v;
        }
        best
    }
}

impl GbdtModel {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    fn check_dims(&self, x: ArrayView2<f64>) -> Result<(), ClassifierError> {
        if x.ncols() != self.feature_count() {
            return Err(ClassifierError::Dimension {
                expected: self.feature_count(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Raw class margins, `n x C`.
    pub fn margins(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ClassifierError> {
        self.check_dims(x)?;
        let c = self.class_count();
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let row = x.row(i);
                let mut m = self.base_margins.clone();
                for round in &self.trees {
                    for (k, tree) in round.iter().enumerate() {
                        m[k] += tree.predict(row);
                    }
                }
                m
            })
            .collect();
        Ok(Array2::from_shape_vec((x.nrows(), c), rows.concat()).expect("shape"))
    }

    /// Softmax of the margins; every row sums to one.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ClassifierError> {
        let mut m = self.margins(x)?;
        let mut buf = vec![0.0; self.class_count()];
        for mut row in m.rows_mut() {
            softmax_row(row.as_slice().expect("contiguous"), &mut buf);
            row.iter_mut().zip(&buf).for_each(|(d, s)| *d = *s);
        }
        Ok(m)
    }

    /// Arg-max class label per row (ties to the lower class index).
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<i64>, ClassifierError> {
        let p = self.predict_proba(x)?;
        Ok(argmax_rows(&p).into_iter().map(|c| self.classes[c]).collect())
    }

    /// Applies the frozen bounds (if any) to raw feature rows.
    pub fn scale(&self, raw: ArrayView2<f64>) -> Result<Array2<f64>, ClassifierError> {
        self.check_dims(raw)?;
        Ok(match &self.bounds {
            Some(b) => b.apply(raw),
            None => raw.to_owned(),
        })
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

pub(crate) fn argmax_rows(p: &Array2<f64>) -> Vec<usize> {
    p.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Fits the model on rows `x` with class labels `labels`. Each round fits
/// one tree per class to the softmax residuals `y - p`; leaves take a
/// Newton step. A round that would raise the training loss is halved until
/// it does not.
pub fn train(
    x: ArrayView2<f64>,
    labels: &[i64],
    feature_names: Vec<String>,
    params: &GbdtParams,
) -> Result<GbdtModel, ClassifierError> {
    let n = x.nrows();
    if n == 0 || labels.len() != n {
        return Err(ClassifierError::Input(format!(
            "{} rows with {} labels",
            n,
            labels.len()
        )));
    }
    if feature_names.len() != x.ncols() {
        return Err(ClassifierError::Dimension {
            expected: x.ncols(),
            found: feature_names.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClassifierError::Input("non-finite feature value".into()));
    }
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let k = classes.len();
    let y: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("present"))
        .collect();
    let mut counts = vec![0usize; k];
    for &c in &y {
        counts[c] += 1;
    }
    let base_margins: Vec<f64> = if k == 1 {
        vec![0.0]
    } else {
        counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect()
    };
    let mut model = GbdtModel {
        classes,
        feature_names,
        bounds: None,
        base_margins,
        trees: Vec::new(),
        params: params.clone(),
        loss_trace: Vec::new(),
    };
    if k == 1 {
        model.loss_trace.push(0.0);
        return Ok(model);
    }

    let order: Vec<Vec<usize>> = (0..x.ncols())
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let grower = Grower {
        x,
        order: &order,
        params,
        k,
    };
    let mut margins = Array2::from_shape_fn((n, k), |(_, c)| model.base_margins[c]);
    let mut loss = cross_entropy(&margins, &y);
    model.loss_trace.push(loss);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut prob = vec![0.0; k];
    for _ in 0..params.rounds {
        let active: Vec<bool> = if params.subsample < 1.0 {
            let m = ((params.subsample * n as f64).round() as usize).clamp(1, n);
            let mut a = vec![false; n];
            for i in sample(&mut rng, n, m) {
                a[i] = true;
            }
            a
        } else {
            vec![true; n]
        };
        let mut residual = vec![vec![0.0; n]; k];
        let mut hess = vec![vec![0.0; n]; k];
        for i in 0..n {
            softmax_row(margins.row(i).as_slice().expect("contiguous"), &mut prob);
            for c in 0..k {
                let t = if y[i] == c { 1.0 } else { 0.0 };
                let rv = t - prob[c];
                residual[c][i] = rv;
                hess[c][i] = rv.abs() * (1.0 - rv.abs());
            }
        }
        let mut round: Vec<Tree> = (0..k)
            .map(|c| grower.grow(&residual[c], &hess[c], &active))
            .collect();
        let step: Vec<Vec<f64>> = round
            .iter()
            .map(|t| (0..n).map(|i| t.predict(x.row(i))).collect())
            .collect();
        let mut factor = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = Array2::from_shape_fn((n, k), |(i, c)| margins[[i, c]] + factor * step[c][i]);
            let trial_loss = cross_entropy(&trial, &y);
            if trial_loss <= loss {
                accepted = Some((trial, trial_loss));
                break;
            }
            factor *= 0.5;
        }
        let Some((next, next_loss)) = accepted else {
            break;
        };
        if factor != 1.0 {
            round.iter_mut().for_each(|t| t.scale(factor));
        }
        margins = next;
        loss = next_loss;
        model.loss_trace.push(loss);
        model.trees.push(round);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn single_class_is_trivial() {
        let x = array![[0.0], [1.0]];
        let m = train(x.view(), &[3, 3], names(1), &GbdtParams::default()).unwrap();
        let p = m.predict_proba(x.view()).unwrap();
        assert!(p.iter().all(|&v| v == 1.0));
        assert_eq!(m.predict(x.view()).unwrap(), vec![3, 3]);
    }

    #[test]
    fn separable_blobs_fit_quickly() {
        let x = Array2::from_shape_fn((40, 2), |(i, j)| if i < 20 { j as f64 * 0.1 + i as f64 * 0.01 } else { 5.0 + i as f64 * 0.01 });
        let labels: Vec<i64> = (0..40).map(|i| (i >= 20) as i64).collect();
        let params = GbdtParams {
            rounds: 50,
            ..GbdtParams::default()
        };
        let m = train(x.view(), &labels, names(2), &params).unwrap();
        assert_eq!(m.predict(x.view()).unwrap(), labels);
        for w in m.loss_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn pure_branch_stops_while_mixed_branch_grows() {
        // the first split isolates class 0, which cannot split further
        let x = Array2::from_shape_fn((10, 1), |(i, _)| if i < 4 { i as f64 } else { 6.0 + i as f64 });
        let labels = [0, 0, 0, 0, 1, 2, 1, 2, 1, 2];
        let m = train(x.view(), &labels, names(1), &GbdtParams::default()).unwrap();
        assert_eq!(m.predict(x.view()).unwrap(), labels);
    }

    #[test]
    fn thresholds_sit_between_training_values() {
        let x = array![[0.0, 1.0], [1.0, 1.0], [2.0, 0.0], [3.0, 0.0], [4.0, 1.0], [5.0, 0.5]];
        let labels = [0, 0, 1, 1, 2, 2];
        let m = train(x.view(), &labels, names(2), &GbdtParams::default()).unwrap();
        for tree in m.trees.iter().flatten() {
            for node in &tree.nodes {
                if let Node::Split { feature, threshold, .. } = node {
                    let col: Vec<f64> = x.column(*feature).to_vec();
                    assert!(col.iter().any(|&v| v < *threshold));
                    assert!(col.iter().any(|&v| v > *threshold));
                    assert!(!col.contains(threshold));
                }
            }
        }
    }

    #[test]
    fn json_round_trip_and_dimension_check() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let m = train(x.view(), &[0, 0, 1, 1], names(1), &GbdtParams::default()).unwrap();
        let back = GbdtModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.margins(x.view()).unwrap(), m.margins(x.view()).unwrap());
        assert!(m.predict_proba(array![[0.0, 1.0]].view()).is_err());
    }
}
