#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tds_core::dataset::{synth, NoiseProfile, SyntheticData};
use tds_core::gbm::{self, Ensemble, GbmConfig, Node, Tree};
use tds_core::tds::{fit_tds, DifficultyModel, RegressorConfig};
use tds_core::trajectory::TrajectoryConfig;
use tds_core::{sample_loss, Task};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cover-weighted conditional expectation of one tree given the coalition
/// `mask` of known features.
fn conditional_expectation(tree: &Tree, at: usize, x: &[f64], mask: u32) -> f64 {
    match tree.nodes[at] {
        Node::Leaf { value, .. } => value,
        Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            if mask & (1 << feature) != 0 {
                let next = if x[feature] < threshold { left } else { right };
                conditional_expectation(tree, next, x, mask)
            } else {
                let (cl, cr) = (tree.nodes[left].cover(), tree.nodes[right].cover());
                (cl * conditional_expectation(tree, left, x, mask)
                    + cr * conditional_expectation(tree, right, x, mask))
                    / (cl + cr)
            }
        }
    }
}

fn coalition_value(e: &Ensemble, x: &[f64], mask: u32) -> f64 {
    e.base_score
        + e.trees
            .iter()
            .map(|t| e.learning_rate * conditional_expectation(t, 0, x, mask))
            .sum::<f64>()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Exact Shapley values by enumerating all `2^d` coalitions; returns
/// `(contributions, value of the empty coalition)`.
pub fn brute_force_shapley(e: &Ensemble, x: &[f64]) -> (Vec<f64>, f64) {
    let d = e.n_features;
    assert!(d <= 16);
    let values: Vec<f64> = (0..1u32 << d).map(|m| coalition_value(e, x, m)).collect();
    let phi = (0..d)
        .map(|j| {
            let mut acc = 0.0;
            for mask in 0..1u32 << d {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let s = mask.count_ones() as usize;
                let w = factorial(s) * factorial(d - s - 1) / factorial(d);
                acc += w * (values[(mask | (1 << j)) as usize] - values[mask as usize]);
            }
            acc
        })
        .collect();
    (phi, values[0])
}

/// Random tree of the given depth with positive, additive covers.
pub fn random_tree(r: &mut ChaCha8Rng, d: usize, depth: usize) -> Tree {
    fn grow(r: &mut ChaCha8Rng, nodes: &mut Vec<Node>, d: usize, depth: usize, cover: f64) -> usize {
        let at = nodes.len();
        if depth == 0 || r.random::<f64>() < 0.2 {
            nodes.push(Node::Leaf {
                value: r.random_range(-3.0..3.0),
                cover,
            });
            return at;
        }
        nodes.push(Node::Leaf { value: 0.0, cover });
        let share = r.random_range(0.1..0.9);
        let left = grow(r, nodes, d, depth - 1, cover * share);
        let right = grow(r, nodes, d, depth - 1, cover * (1.0 - share));
        nodes[at] = Node::Split {
            feature: r.random_range(0..d),
            threshold: r.random_range(-1.0..1.0),
            left,
            right,
            default_left: true,
            cover,
        };
        at
    }
    let mut nodes = Vec::new();
    let cover = r.random_range(5.0..100.0);
    grow(r, &mut nodes, d, depth, cover);
    Tree { nodes }
}

pub fn random_ensemble(r: &mut ChaCha8Rng, d: usize, depth: usize, n_trees: usize) -> Ensemble {
    Ensemble {
        trees: (0..n_trees).map(|_| random_tree(r, d, depth)).collect(),
        base_score: r.random_range(-1.0..1.0),
        learning_rate: r.random_range(0.05..1.0),
        task: Task::Regression,
        temperature: 1.0,
        n_features: d,
        config: GbmConfig::default(),
    }
}

/// Disjoint row ranges of a dataset used across acceptance scenarios.
pub struct Layout {
    pub train: Vec<usize>,
    pub tds_fit: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

impl Layout {
    pub fn consecutive(sizes: [usize; 4]) -> Layout {
        let mut start = 0;
        let mut take = |n: usize| {
            let r: Vec<usize> = (start..start + n).collect();
            start += n;
            r
        };
        Layout {
            train: take(sizes[0]),
            tds_fit: take(sizes[1]),
            calibration: take(sizes[2]),
            test: take(sizes[3]),
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.tds_fit.len() + self.calibration.len() + self.test.len()
    }
}

pub struct Fitted {
    pub data: SyntheticData,
    pub ensemble: Ensemble,
    pub difficulty: DifficultyModel,
}

/// Synthesizes data, trains the ensemble on `layout.train` and the difficulty
/// model on `layout.tds_fit`.
pub fn fit_pipeline(
    task: Task,
    d: usize,
    profile: NoiseProfile,
    layout: &Layout,
    gbm_config: &GbmConfig,
    seed: u64,
) -> Fitted {
    let data = synth(task, layout.total(), d, profile, seed).unwrap();
    let (x, y) = data.dataset.gather(&layout.train);
    let mut ensemble = gbm::fit(&x, &y, task, &GbmConfig { seed, ..gbm_config.clone() }).unwrap();
    if task == Task::BinaryClassification {
        let (cx, cy) = data.dataset.gather(&layout.calibration);
        ensemble = ensemble.temperature_scale(&cx, &cy).unwrap();
    }
    let (fx, fy) = data.dataset.gather(&layout.tds_fit);
    let difficulty = fit_tds(
        &ensemble,
        &fx,
        &fy,
        &TrajectoryConfig::default(),
        &RegressorConfig::default(),
        seed,
    )
    .unwrap();
    Fitted {
        data,
        ensemble,
        difficulty,
    }
}

/// Per-row loss of the ensemble's final raw output.
pub fn losses(e: &Ensemble, rows: &[f64], targets: &[f64]) -> Vec<f64> {
    e.predict_raw_batch(rows)
        .unwrap()
        .iter()
        .zip(targets)
        .map(|(&o, &y)| sample_loss(e.task, o, y))
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
