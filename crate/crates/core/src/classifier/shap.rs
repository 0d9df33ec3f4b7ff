use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array3, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbdt::{GbdtModel, Node, Tree};
use super::ClassifierError;

#[derive(Clone, Copy, Debug)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

fn extend_path(path: &mut Vec<PathElement>, zero: f64, one: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction: zero,
        one_fraction: one,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let d = depth as f64;
    for i in (0..depth).rev() {
        let w = path[i].weight;
        path[i + 1].weight += one * w * (i as f64 + 1.0) / (d + 1.0);
        path[i].weight = zero * w * (d - i as f64) / (d + 1.0);
    }
}

fn unwind_path(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let d = depth as f64;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next_one * (d + 1.0) / ((i as f64 + 1.0) * one);
            next_one = tmp - path[i].weight * zero * (d - i as f64) / (d + 1.0);
        } else {
            path[i].weight = path[i].weight * (d + 1.0) / (zero * (d - i as f64));
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let d = depth as f64;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one * (d + 1.0) / ((i as f64 + 1.0) * one);
            total += tmp;
            next_one = path[i].weight - tmp * zero * (d - i as f64) / (d + 1.0);
        } else {
            total += path[i].weight / zero / ((d - i as f64) / (d + 1.0));
        }
    }
    total
}

fn recurse(
    tree: &Tree,
    x: ArrayView1<f64>,
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElement>,
    zero: f64,
    one: f64,
    feature: Option<usize>,
) {
    extend_path(&mut path, zero, one, feature);
    match &tree.nodes[node] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = path[i];
                if let Some(f) = el.feature {
                    phi[f] += w * (el.one_fraction - el.zero_fraction) * value;
                }
            }
        }
        Node::Split {
            feature: split,
            threshold,
            left,
            right,
            cover,
        } => {
            let (hot, cold) = if x[*split] <= *threshold { (*left, *right) } else { (*right, *left) };
            let hot_zero = tree.nodes[hot].cover() / cover;
            let cold_zero = tree.nodes[cold].cover() / cover;
            let (mut in_zero, mut in_one) = (1.0, 1.0);
            if let Some(k) = path.iter().position(|p| p.feature == Some(*split)) {
                in_zero = path[k].zero_fraction;
                in_one = path[k].one_fraction;
                unwind_path(&mut path, k);
            }
            recurse(tree, x, phi, hot, path.clone(), hot_zero * in_zero, in_one, Some(*split));
            recurse(tree, x, phi, cold, path, cold_zero * in_zero, 0.0, Some(*split));
        }
    }
}

/// Exact SHAP values of one tree at `x` using the tree's cover counts as
/// the background distribution (path-dependent TreeSHAP). Adds into `phi`.
pub fn tree_shap(tree: &Tree, x: ArrayView1<f64>, phi: &mut [f64]) {
    if tree.nodes.len() > 1 {
        recurse(tree, x, phi, 0, Vec::with_capacity(16), 1.0, 1.0, None);
    }
}

/// Per-point, per-class feature attributions with the matching base values.
#[derive(Debug, Clone)]
pub struct Attribution {
    /// `values[[point, class, feature]]`.
    pub values: Array3<f64>,
    /// Expected margin per class under the cover distribution.
    pub base: Vec<f64>,
    pub classes: Vec<i64>,
    pub feature_names: Vec<String>,
}

/// Features of one class ordered by mean |SHAP|, largest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRanking {
    pub class: i64,
    pub features: Vec<(String, f64)>,
}

impl Attribution {
    pub fn mean_abs(&self, class: usize) -> Vec<f64> {
        let (n, _, d) = self.values.dim();
        (0..d)
            .map(|f| (0..n).map(|i| self.values[[i, class, f]].abs()).sum::<f64>() / n.max(1) as f64)
            .collect()
    }

    pub fn rankings(&self) -> Vec<ClassRanking> {
        (0..self.classes.len())
            .map(|c| {
                let means = self.mean_abs(c);
                let mut idx: Vec<usize> = (0..means.len()).collect();
                idx.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
                ClassRanking {
                    class: self.classes[c],
                    features: idx
                        .into_iter()
                        .map(|f| (self.feature_names[f].clone(), means[f]))
                        .collect(),
                }
            })
            .collect()
    }

    pub fn rankings_json(&self) -> serde_json::Result<String> {
        let map: BTreeMap<String, Vec<(String, f64)>> = self
            .rankings()
            .into_iter()
            .map(|r| (r.class.to_string(), r.features))
            .collect();
        serde_json::to_string_pretty(&map)
    }

    /// `household_id,class,base,<feature...>` rows.
    pub fn write_csv<W: Write>(&self, w: W, ids: &[String]) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["household_id".to_string(), "class".into(), "base".into()];
        header.extend(self.feature_names.iter().cloned());
        wtr.write_record(&header)?;
        let (n, c, d) = self.values.dim();
        for i in 0..n {
            for k in 0..c {
                let mut rec = vec![ids[i].clone(), self.classes[k].to_string(), self.base[k].to_string()];
                rec.extend((0..d).map(|f| self.values[[i, k, f]].to_string()));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// SHAP attributions of the model's class margins for every row of `x`
/// (already scaled). Base value plus the row's attributions equals its
/// margin for every class.
pub fn shap_attribute(model: &GbdtModel, x: ArrayView2<f64>) -> Result<Attribution, ClassifierError> {
    if x.ncols() != model.feature_count() {
        return Err(ClassifierError::Dimension {
            expected: model.feature_count(),
            found: x.ncols(),
        });
    }
    let (n, c, d) = (x.nrows(), model.class_count(), x.ncols());
    let mut base = model.base_margins.clone();
    for round in &model.trees {
        for (k, tree) in round.iter().enumerate() {
            base[k] += tree.expected_value();
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; c * d];
            for round in &model.trees {
                for (k, tree) in round.iter().enumerate() {
                    tree_shap(tree, x.row(i), &mut out[k * d..(k + 1) * d]);
                }
            }
            out
        })
        .collect();
    let values = Array3::from_shape_vec((n, c, d), rows.concat()).expect("shape");
    Ok(Attribution {
        values,
        base,
        classes: model.classes.clone(),
        feature_names: model.feature_names.clone(),
    })
}
