//! Path-dependent TreeSHAP.
//!
//! For each tree, the recursion carries the set of features seen on the
//! current root-to-leaf path together with the proportion of coalitions that
//! flow down it, and accumulates exact Shapley values of the cover-weighted
//! conditional expectation in `O(L·D²)` per tree.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TdsError};
use crate::gbm::{Ensemble, Node, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub contributions: Vec<f64>,
    /// Expected model output under the cover distribution.
    pub base_value: f64,
}

impl Attribution {
    /// `base_value + Σ contributions`; equals the raw model output.
    pub fn total(&self) -> f64 {
        self.base_value + self.contributions.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

fn extend_path(path: &mut [PathElement], depth: usize, zero: f64, one: f64, feature: Option<usize>) {
    path[depth] = PathElement {
        feature,
        zero_fraction: zero,
        one_fraction: one,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let denom = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero * path[i].weight * (depth - i) as f64 / denom;
    }
}

fn unwind_path(path: &mut [PathElement], depth: usize, index: usize) {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one = path[depth].weight;
    let denom = (depth + 1) as f64;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next_one * denom / ((i + 1) as f64 * one);
            next_one = tmp - path[i].weight * zero * (depth - i) as f64 / denom;
        } else {
            path[i].weight = path[i].weight * denom / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

fn unwound_path_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one = path[depth].weight;
    let denom = (depth + 1) as f64;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one * denom / ((i + 1) as f64 * one);
            total += tmp;
            next_one = path[i].weight - tmp * zero * (depth - i) as f64 / denom;
        } else if zero != 0.0 {
            total += path[i].weight / zero / ((depth - i) as f64 / denom);
        }
    }
    total
}

struct TreeWalk<'a> {
    tree: &'a Tree,
    x: &'a [f64],
    scale: f64,
    phi: &'a mut [f64],
}

impl TreeWalk<'_> {
    fn recurse(
        &mut self,
        node: usize,
        parent: &[PathElement],
        depth: usize,
        zero: f64,
        one: f64,
        feature: Option<usize>,
    ) {
        let mut path = parent[..depth].to_vec();
        path.resize(depth + 1, PathElement::default());
        extend_path(&mut path, depth, zero, one, feature);

        match self.tree.nodes[node] {
            Node::Leaf { value, .. } => {
                for i in 1..=depth {
                    let w = unwound_path_sum(&path, depth, i);
                    let el = path[i];
                    let f = el.feature.expect("non-root path elements carry a feature");
                    self.phi[f] += self.scale * w * (el.one_fraction - el.zero_fraction) * value;
                }
            }
            Node::Split {
                feature: split,
                threshold,
                left,
                right,
                default_left,
                ..
            } => {
                let v = self.x[split];
                let goes_left = if v.is_nan() { default_left } else { v < threshold };
                let (hot, cold) = if goes_left { (left, right) } else { (right, left) };
                let total = self.tree.nodes[left].cover() + self.tree.nodes[right].cover();
                let hot_zero = self.tree.nodes[hot].cover() / total;
                let cold_zero = self.tree.nodes[cold].cover() / total;

                let mut depth = depth;
                let (mut incoming_zero, mut incoming_one) = (1.0, 1.0);
                if let Some(k) = (1..=depth).find(|&k| path[k].feature == Some(split)) {
                    incoming_zero = path[k].zero_fraction;
                    incoming_one = path[k].one_fraction;
                    unwind_path(&mut path, depth, k);
                    depth -= 1;
                }
                self.recurse(hot, &path, depth + 1, hot_zero * incoming_zero, incoming_one, Some(split));
                self.recurse(cold, &path, depth + 1, cold_zero * incoming_zero, 0.0, Some(split));
            }
        }
    }
}

/// Cover-weighted expected leaf value of one tree.
pub fn expected_value(tree: &Tree) -> f64 {
    fn go(t: &Tree, at: usize) -> f64 {
        match t.nodes[at] {
            Node::Leaf { value, .. } => value,
            Node::Split { left, right, .. } => {
                let (cl, cr) = (t.nodes[left].cover(), t.nodes[right].cover());
                (cl * go(t, left) + cr * go(t, right)) / (cl + cr)
            }
        }
    }
    go(tree, 0)
}

fn check_covers(ensemble: &Ensemble) -> Result<()> {
    for (t, tree) in ensemble.trees.iter().enumerate() {
        if tree
            .nodes
            .iter()
            .any(|n| !(n.cover() > 0.0) || !n.cover().is_finite())
        {
            return Err(TdsError::MissingCover(t));
        }
    }
    Ok(())
}

/// SHAP attribution of the raw ensemble output for one row.
pub fn tree_shap(ensemble: &Ensemble, x: &[f64]) -> Result<Attribution> {
    check_covers(ensemble)?;
    attribute(ensemble, x)
}

fn attribute(ensemble: &Ensemble, x: &[f64]) -> Result<Attribution> {
    if x.len() != ensemble.n_features {
        return Err(TdsError::DimensionMismatch {
            expected: ensemble.n_features,
            found: x.len(),
        });
    }
    let mut phi = vec![0.0; ensemble.n_features];
    let mut base_value = ensemble.base_score;
    for tree in &ensemble.trees {
        base_value += ensemble.learning_rate * expected_value(tree);
        let max_depth = tree.depth() + 2;
        let root_path = vec![PathElement::default(); max_depth];
        let mut walk = TreeWalk {
            tree,
            x,
            scale: ensemble.learning_rate,
            phi: &mut phi,
        };
        walk.recurse(0, &root_path, 0, 1.0, 1.0, None);
    }
    Ok(Attribution {
        contributions: phi,
        base_value,
    })
}

/// Attributions for every row of a row-major matrix.
pub fn tree_shap_batch(ensemble: &Ensemble, rows: &[f64]) -> Result<Vec<Attribution>> {
    check_covers(ensemble)?;
    let d = ensemble.n_features;
    if rows.len() % d != 0 {
        return Err(TdsError::DimensionMismatch {
            expected: d,
            found: rows.len() % d,
        });
    }
    rows.par_chunks(d).map(|x| attribute(ensemble, x)).collect()
}
