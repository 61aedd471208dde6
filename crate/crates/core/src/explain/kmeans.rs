//! k-means++ seeding followed by Lloyd iterations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TdsError};
use crate::rng;

const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub labels: Vec<usize>,
    /// `K × dim`, row-major.
    pub centroids: Vec<f64>,
    pub dim: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub objective_history: Vec<f64>,
}

impl KMeans {
    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    centroids
        .chunks(dim)
        .enumerate()
        .map(|(c, m)| (c, sq_dist(x, m)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn plus_plus_init(points: &[f64], n: usize, dim: usize, k: usize, rng: &mut rng::Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = points
        .chunks(dim)
        .map(|x| sq_dist(x, &centroids[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = &points[pick * dim..(pick + 1) * dim];
        centroids.extend_from_slice(c);
        for (i, x) in points.chunks(dim).enumerate() {
            d2[i] = d2[i].min(sq_dist(x, c));
        }
    }
    centroids
}

/// Clusters `n` points of dimension `dim` (row-major) into `k` groups.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64) -> Result<KMeans> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(TdsError::DimensionMismatch {
            expected: dim,
            found: points.len(),
        });
    }
    let n = points.len() / dim;
    if k == 0 || n < k {
        return Err(TdsError::TooFewRows { needed: k.max(1), found: n });
    }
    let mut rng = rng::stream(seed, 0x6b6e);
    let mut centroids = plus_plus_init(points, n, dim, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();

    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        let mut objective = 0.0;
        for (i, x) in points.chunks(dim).enumerate() {
            let (c, dist) = nearest(x, &centroids, dim);
            objective += dist;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        history.push(objective);
        if !changed {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, x) in points.chunks(dim).enumerate() {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i] * dim..(labels[i] + 1) * dim].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed from the point farthest from its own centroid
                let far = points
                    .chunks(dim)
                    .enumerate()
                    .map(|(i, x)| (i, sq_dist(x, &centroids[labels[i] * dim..(labels[i] + 1) * dim])))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                    .0;
                log::debug!("k-means: cluster {c} empty, re-seeding from point {far}");
                let p = points[far * dim..(far + 1) * dim].to_vec();
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&p);
            }
        }
    }

    Ok(KMeans {
        labels,
        centroids,
        dim,
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(k: usize, per: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = rng::stream(seed, 9);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for c in 0..k {
            let center = [10.0 * c as f64, -8.0 * (c % 2) as f64];
            for _ in 0..per {
                for m in center {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    pts.push(m + 0.5 * e);
                }
                truth.push(c);
            }
        }
        (pts, truth)
    }

    /// Fraction of points whose label agrees after the best relabeling.
    fn agreement(labels: &[usize], truth: &[usize], k: usize) -> f64 {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = 0;
        fn go(p: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
            if i == p.len() {
                f(p);
                return;
            }
            for j in i..p.len() {
                p.swap(i, j);
                go(p, i + 1, f);
                p.swap(i, j);
            }
        }
        go(&mut perm, 0, &mut |p| {
            let hits = labels.iter().zip(truth).filter(|(l, t)| p[**l] == **t).count();
            best = best.max(hits);
        });
        best as f64 / labels.len() as f64
    }

    #[test]
    fn separated_blobs_are_recovered() {
        for seed in 0..5 {
            let (pts, truth) = blobs(4, 60, seed);
            let km = kmeans(&pts, 2, 4, seed).unwrap();
            assert!(agreement(&km.labels, &truth, 4) >= 0.99, "seed {seed}");
        }
    }

    #[test]
    fn single_cluster_centroid_is_the_mean() {
        let pts = [1.0, 2.0, 3.0, 4.0, 5.0, 9.0];
        let km = kmeans(&pts, 2, 1, 0).unwrap();
        assert!((km.centroids[0] - 3.0).abs() < 1e-12);
        assert!((km.centroids[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn objective_never_increases_and_runs_are_deterministic() {
        for seed in 0..10 {
            let (pts, _) = blobs(3, 40, 100 + seed);
            let km = kmeans(&pts, 2, 5, seed).unwrap();
            assert!(km.objective_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
            assert_eq!(km, kmeans(&pts, 2, 5, seed).unwrap());
        }
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let km = kmeans(&pts, 2, 2, 3).unwrap();
        assert_eq!(km.labels.len(), 4);
        assert!(km.labels.iter().all(|&l| l < 2));
    }

    #[test]
    fn too_few_points_is_an_error() {
        assert!(matches!(
            kmeans(&[0.0, 1.0], 1, 3, 0),
            Err(TdsError::TooFewRows { .. })
        ));
    }
}
