//! Gradient-boosted decision trees with second-order leaf weights.
//!
//! Trees are grown level by level with an exact greedy split search: every
//! feature keeps a presorted row order, and one pass over that order per level
//! accumulates gradient statistics for all open nodes at once. A row goes left
//! at a split iff `x[feature] < threshold`.
//!
//! The ensemble exposes the cumulative output after every tree
//! ([`Ensemble::trajectory`]), which is what the difficulty scorer consumes.

use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TdsError};
use crate::{logistic_loss, rng, sigmoid, Task};

/// Version tag of the JSON model format.
pub const MODEL_FORMAT_VERSION: u32 = 1;

const TEMPERATURE_RANGE: (f64, f64) = (0.05, 20.0);
const TEMPERATURE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub l2_leaf_regularization: f64,
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            n_estimators: 100,
            max_depth: 6,
            learning_rate: 0.1,
            subsample: 0.8,
            colsample_bytree: 0.8,
            l2_leaf_regularization: 1.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| f > 0.0 && f <= 1.0;
        if self.n_estimators == 0 {
            return Err(TdsError::InvalidConfig("n_estimators must be >= 1".into()));
        }
        if !frac_ok(self.subsample) || !frac_ok(self.colsample_bytree) {
            return Err(TdsError::InvalidConfig(
                "subsample and colsample_bytree must lie in (0, 1]".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TdsError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.l2_leaf_regularization >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(TdsError::InvalidConfig(
                "l2_leaf_regularization and min_child_weight must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Branch for missing values. The trainer never sees missing values,
        /// so this is always `true`.
        default_left: bool,
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match *self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => cover,
        }
    }
}

/// A single regression tree stored as a flat node array rooted at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value, cover }],
        }
    }

    /// Unshrunk leaf value reached by `x`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    default_left,
                    ..
                } => {
                    let v = x[feature];
                    at = if v.is_nan() {
                        if default_left {
                            left
                        } else {
                            right
                        }
                    } else if v < threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

/// Trained boosted ensemble. Serializes through a versioned struct-of-arrays
/// JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "EnsembleDoc", try_from = "EnsembleDoc")]
pub struct Ensemble {
    pub trees: Vec<Tree>,
    /// Constant offset `F_0`.
    pub base_score: f64,
    pub learning_rate: f64,
    pub task: Task,
    /// Divides the margin before the sigmoid in [`Ensemble::predict_proba`].
    pub temperature: f64,
    pub n_features: usize,
    pub config: GbmConfig,
}

impl Ensemble {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(TdsError::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `F_T(x) = base_score + Σ_t learning_rate · f_t(x)`.
    pub fn raw_output(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut acc = self.base_score;
        for tree in &self.trees {
            acc += self.learning_rate * tree.predict(x);
        }
        Ok(acc)
    }

    /// Cumulative outputs `[F_1(x), …, F_T(x)]`, each including `base_score`.
    pub fn trajectory(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.trajectory_opts(x, true)
    }

    /// Like [`Ensemble::trajectory`], optionally starting the accumulation at
    /// zero instead of `base_score`.
    pub fn trajectory_opts(&self, x: &[f64], include_base: bool) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut acc = if include_base { self.base_score } else { 0.0 };
        Ok(self
            .trees
            .iter()
            .map(|tree| {
                acc += self.learning_rate * tree.predict(x);
                acc
            })
            .collect())
    }

    /// Trajectories for every row of a row-major matrix, computed in parallel.
    pub fn trajectories(&self, rows: &[f64], include_base: bool) -> Result<Vec<Vec<f64>>> {
        let d = self.n_features;
        if d == 0 || rows.len() % d != 0 {
            return Err(TdsError::DimensionMismatch {
                expected: d,
                found: rows.len(),
            });
        }
        rows.par_chunks(d)
            .map(|x| self.trajectory_opts(x, include_base))
            .collect()
    }

    pub fn predict_raw_batch(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let d = self.n_features;
        if d == 0 || rows.len() % d != 0 {
            return Err(TdsError::DimensionMismatch {
                expected: d,
                found: rows.len(),
            });
        }
        rows.par_chunks(d).map(|x| self.raw_output(x)).collect()
    }

    /// Temperature-scaled probability of class 1.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if self.task != Task::BinaryClassification {
            return Err(TdsError::TaskMismatch {
                op: "predict_proba",
                task: self.task.to_string(),
            });
        }
        Ok(sigmoid(self.raw_output(x)? / self.temperature))
    }

    /// Point prediction in target units: the raw output for regression, the
    /// temperature-scaled probability for classification.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self.task {
            Task::Regression => self.raw_output(x),
            Task::BinaryClassification => self.predict_proba(x),
        }
    }

    /// Fits the temperature on held-out rows and returns the updated ensemble.
    /// Trajectories are unaffected; only probability outputs change.
    pub fn temperature_scale(&self, rows: &[f64], labels: &[f64]) -> Result<Ensemble> {
        if self.task != Task::BinaryClassification {
            return Err(TdsError::TaskMismatch {
                op: "temperature_scale",
                task: self.task.to_string(),
            });
        }
        let margins = self.predict_raw_batch(rows)?;
        let temperature = fit_temperature(&margins, labels)?;
        Ok(Ensemble {
            temperature,
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Ensemble> {
        let doc: EnsembleDoc = serde_json::from_str(text)?;
        Ensemble::try_from(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| TdsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Ensemble> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| TdsError::io(path, e))?;
        Ensemble::from_json(&text)
    }

    /// Hex SHA-256 of the serialized model.
    pub fn fingerprint(&self) -> String {
        let json = self.to_json().expect("ensemble serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Mean logistic loss of `sigmoid(margin / temperature)`.
pub fn temperature_nll(margins: &[f64], labels: &[f64], temperature: f64) -> f64 {
    margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| logistic_loss(m / temperature, y))
        .sum::<f64>()
        / margins.len() as f64
}

/// Golden-section search for the NLL-minimizing temperature over `[0.05, 20]`.
pub fn fit_temperature(margins: &[f64], labels: &[f64]) -> Result<f64> {
    if margins.len() != labels.len() {
        return Err(TdsError::LengthMismatch {
            left: margins.len(),
            right: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == labels.len() {
        return Err(TdsError::SingleClass("calibration set"));
    }
    let f = |t: f64| temperature_nll(margins, labels, t);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = TEMPERATURE_RANGE;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a >= TEMPERATURE_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    Ok((a + b) / 2.0)
}

/// Trains an ensemble on a row-major matrix `x` (`targets.len()` rows).
pub fn fit(x: &[f64], targets: &[f64], task: Task, config: &GbmConfig) -> Result<Ensemble> {
    config.validate()?;
    let n = targets.len();
    if n < 2 {
        return Err(TdsError::TooFewRows { needed: 2, found: n });
    }
    if x.len() % n != 0 || x.is_empty() {
        return Err(TdsError::DimensionMismatch {
            expected: n,
            found: x.len(),
        });
    }
    let d = x.len() / n;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(TdsError::NonFinite("training features"));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(TdsError::NonFinite("training targets"));
    }

    let base_score = match task {
        Task::Regression => targets.iter().sum::<f64>() / n as f64,
        Task::BinaryClassification => {
            if targets.iter().any(|&y| y != 0.0 && y != 1.0) {
                return Err(TdsError::InvalidConfig(
                    "classification targets must be 0 or 1".into(),
                ));
            }
            let pos = targets.iter().filter(|&&y| y == 1.0).count();
            if pos == 0 || pos == n {
                return Err(TdsError::SingleClass("training set"));
            }
            let p = pos as f64 / n as f64;
            (p / (1.0 - p)).ln()
        }
    };

    let sorted = presort(x, n, d);
    let mut rng = rng::stream(config.seed, 0x6b6d);
    let mut output = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let n_rows_sampled = ((config.subsample * n as f64).round() as usize).clamp(1, n);
    let n_cols_sampled = ((config.colsample_bytree * d as f64).round() as usize).clamp(1, d);
    let mut trees = Vec::with_capacity(config.n_estimators);

    for _ in 0..config.n_estimators {
        for i in 0..n {
            let (g, h) = match task {
                Task::Regression => (output[i] - targets[i], 1.0),
                Task::BinaryClassification => {
                    let p = sigmoid(output[i]);
                    (p - targets[i], (p * (1.0 - p)).max(1e-16))
                }
            };
            grad[i] = g;
            hess[i] = h;
        }
        let mut in_sample = vec![n_rows_sampled == n; n];
        if n_rows_sampled < n {
            for i in index::sample(&mut rng, n, n_rows_sampled) {
                in_sample[i] = true;
            }
        }
        let mut columns: Vec<usize> = if n_cols_sampled < d {
            let mut c: Vec<usize> = (0..d).collect();
            c.shuffle(&mut rng);
            c.truncate(n_cols_sampled);
            c
        } else {
            (0..d).collect()
        };
        columns.sort_unstable();

        let tree = grow_tree(
            &TrainingView { x, d, sorted: &sorted, grad: &grad, hess: &hess },
            &in_sample,
            &columns,
            config,
        );
        for (i, out) in output.iter_mut().enumerate() {
            *out += config.learning_rate * tree.predict(&x[i * d..(i + 1) * d]);
        }
        trees.push(tree);
    }

    Ok(Ensemble {
        trees,
        base_score,
        learning_rate: config.learning_rate,
        task,
        temperature: 1.0,
        n_features: d,
        config: config.clone(),
    })
}

fn presort(x: &[f64], n: usize, d: usize) -> Vec<Vec<u32>> {
    (0..d)
        .map(|j| {
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_by(|&a, &b| {
                x[a as usize * d + j]
                    .total_cmp(&x[b as usize * d + j])
                    .then(a.cmp(&b))
            });
            order
        })
        .collect()
}

struct TrainingView<'a> {
    x: &'a [f64],
    d: usize,
    sorted: &'a [Vec<u32>],
    grad: &'a [f64],
    hess: &'a [f64],
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    left: (f64, f64),
}

/// Scan state for one open node while walking a feature's sorted order.
#[derive(Clone, Copy)]
struct Scan {
    g: f64,
    h: f64,
    last: f64,
    seen: bool,
}

const NO_NODE: u32 = u32::MAX;

fn newton_score(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        g * g / denom
    } else {
        0.0
    }
}

/// Second-order leaf weight `-G / (H + λ)`.
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        -g / denom
    } else {
        0.0
    }
}

fn grow_tree(
    view: &TrainingView<'_>,
    in_sample: &[bool],
    columns: &[usize],
    config: &GbmConfig,
) -> Tree {
    let lambda = config.l2_leaf_regularization;
    let mcw = config.min_child_weight;
    let n = in_sample.len();

    // node id per row; NO_NODE for rows outside the sample or in finished leaves
    let mut position: Vec<u32> = vec![NO_NODE; n];
    let (mut g0, mut h0) = (0.0, 0.0);
    for i in 0..n {
        if in_sample[i] {
            position[i] = 0;
            g0 += view.grad[i];
            h0 += view.hess[i];
        }
    }
    // (G, H) for every node created so far
    let mut stats: Vec<(f64, f64)> = vec![(g0, h0)];
    let mut nodes: Vec<Option<Node>> = vec![None];
    let mut open: Vec<usize> = vec![0];

    for _ in 0..config.max_depth {
        if open.is_empty() {
            break;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; stats.len()];
        let mut scan: Vec<Scan> = vec![
            Scan {
                g: 0.0,
                h: 0.0,
                last: 0.0,
                seen: false
            };
            stats.len()
        ];
        for &j in columns {
            for &k in &open {
                scan[k] = Scan {
                    g: 0.0,
                    h: 0.0,
                    last: 0.0,
                    seen: false,
                };
            }
            for &row in &view.sorted[j] {
                let i = row as usize;
                let k = position[i];
                if k == NO_NODE {
                    continue;
                }
                let k = k as usize;
                let v = view.x[i * view.d + j];
                let s = &mut scan[k];
                if s.seen && v > s.last {
                    let (gt, ht) = stats[k];
                    let (gl, hl) = (s.g, s.h);
                    let (gr, hr) = (gt - gl, ht - hl);
                    if hl >= mcw && hr >= mcw {
                        let gain = 0.5
                            * (newton_score(gl, hl, lambda) + newton_score(gr, hr, lambda)
                                - newton_score(gt, ht, lambda));
                        let better = match best[k] {
                            None => gain > 0.0,
                            Some(b) => gain > b.gain,
                        };
                        if better {
                            let mid = s.last + (v - s.last) / 2.0;
                            let threshold = if mid > s.last { mid } else { v };
                            best[k] = Some(Candidate {
                                gain,
                                feature: j,
                                threshold,
                                left: (gl, hl),
                            });
                        }
                    }
                }
                s.g += view.grad[i];
                s.h += view.hess[i];
                s.last = v;
                s.seen = true;
            }
        }

        let mut next_open = Vec::new();
        // old node id -> (feature, threshold, left id, right id)
        let mut routing: Vec<Option<(usize, f64, u32, u32)>> = vec![None; stats.len()];
        for &k in &open {
            match best[k] {
                None => {
                    let (g, h) = stats[k];
                    nodes[k] = Some(Node::Leaf {
                        value: leaf_weight(g, h, lambda),
                        cover: h,
                    });
                }
                Some(c) => {
                    let (gt, ht) = stats[k];
                    let left = stats.len();
                    let right = left + 1;
                    stats.push(c.left);
                    stats.push((gt - c.left.0, ht - c.left.1));
                    nodes.push(None);
                    nodes.push(None);
                    nodes[k] = Some(Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right,
                        default_left: true,
                        cover: ht,
                    });
                    routing[k] = Some((c.feature, c.threshold, left as u32, right as u32));
                    next_open.push(left);
                    next_open.push(right);
                }
            }
        }
        for i in 0..n {
            let k = position[i];
            if k == NO_NODE {
                continue;
            }
            position[i] = match routing[k as usize] {
                Some((f, t, l, r)) => {
                    if view.x[i * view.d + f] < t {
                        l
                    } else {
                        r
                    }
                }
                None => NO_NODE,
            };
        }
        open = next_open;
    }
    for &k in &open {
        let (g, h) = stats[k];
        nodes[k] = Some(Node::Leaf {
            value: leaf_weight(g, h, lambda),
            cover: h,
        });
    }
    Tree {
        nodes: nodes.into_iter().map(|n| n.expect("every node finalized")).collect(),
    }
}

/// On-disk form: one struct-of-arrays per tree. Leaves carry
/// `feature_index = -1` and children `-1`.
#[derive(Serialize, Deserialize)]
struct EnsembleDoc {
    version: u32,
    task: Task,
    base_score: f64,
    learning_rate: f64,
    temperature: f64,
    n_features: usize,
    config: GbmConfig,
    trees: Vec<TreeArrays>,
}

#[derive(Serialize, Deserialize)]
struct TreeArrays {
    feature_index: Vec<i64>,
    threshold: Vec<f64>,
    left: Vec<i64>,
    right: Vec<i64>,
    default_left: Vec<bool>,
    leaf_value: Vec<f64>,
    cover: Vec<f64>,
}

impl From<Ensemble> for EnsembleDoc {
    fn from(e: Ensemble) -> Self {
        let trees = e
            .trees
            .iter()
            .map(|t| {
                let mut a = TreeArrays {
                    feature_index: Vec::new(),
                    threshold: Vec::new(),
                    left: Vec::new(),
                    right: Vec::new(),
                    default_left: Vec::new(),
                    leaf_value: Vec::new(),
                    cover: Vec::new(),
                };
                for node in &t.nodes {
                    match *node {
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                            default_left,
                            cover,
                        } => {
                            a.feature_index.push(feature as i64);
                            a.threshold.push(threshold);
                            a.left.push(left as i64);
                            a.right.push(right as i64);
                            a.default_left.push(default_left);
                            a.leaf_value.push(0.0);
                            a.cover.push(cover);
                        }
                        Node::Leaf { value, cover } => {
                            a.feature_index.push(-1);
                            a.threshold.push(0.0);
                            a.left.push(-1);
                            a.right.push(-1);
                            a.default_left.push(true);
                            a.leaf_value.push(value);
                            a.cover.push(cover);
                        }
                    }
                }
                a
            })
            .collect();
        EnsembleDoc {
            version: MODEL_FORMAT_VERSION,
            task: e.task,
            base_score: e.base_score,
            learning_rate: e.learning_rate,
            temperature: e.temperature,
            n_features: e.n_features,
            config: e.config,
            trees,
        }
    }
}

impl TryFrom<EnsembleDoc> for Ensemble {
    type Error = TdsError;

    fn try_from(doc: EnsembleDoc) -> Result<Ensemble> {
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(TdsError::UnsupportedVersion(doc.version));
        }
        let bad = |msg: &str| TdsError::InvalidConfig(format!("malformed model: {msg}"));
        let mut trees = Vec::with_capacity(doc.trees.len());
        for a in doc.trees {
            let m = a.feature_index.len();
            if [a.threshold.len(), a.left.len(), a.right.len(), a.leaf_value.len(), a.cover.len(), a.default_left.len()]
                .iter()
                .any(|&l| l != m)
                || m == 0
            {
                return Err(bad("tree arrays differ in length"));
            }
            let mut nodes = Vec::with_capacity(m);
            for k in 0..m {
                if a.feature_index[k] < 0 {
                    nodes.push(Node::Leaf {
                        value: a.leaf_value[k],
                        cover: a.cover[k],
                    });
                } else {
                    let (l, r) = (a.left[k], a.right[k]);
                    if l <= k as i64 || r <= k as i64 || l as usize >= m || r as usize >= m {
                        return Err(bad("child index out of range"));
                    }
                    if a.feature_index[k] as usize >= doc.n_features {
                        return Err(bad("feature index out of range"));
                    }
                    nodes.push(Node::Split {
                        feature: a.feature_index[k] as usize,
                        threshold: a.threshold[k],
                        left: l as usize,
                        right: r as usize,
                        default_left: a.default_left[k],
                        cover: a.cover[k],
                    });
                }
            }
            trees.push(Tree { nodes });
        }
        if !(doc.temperature > 0.0) || !doc.base_score.is_finite() {
            return Err(bad("temperature must be positive and base_score finite"));
        }
        Ok(Ensemble {
            trees,
            base_score: doc.base_score,
            learning_rate: doc.learning_rate,
            task: doc.task,
            temperature: doc.temperature,
            n_features: doc.n_features,
            config: doc.config,
        })
    }
}
