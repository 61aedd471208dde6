//! Principal components via a cyclic Jacobi eigen-decomposition of the
//! covariance matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TdsError};

const OFF_DIAGONAL_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k × d`, row `c` is the `c`-th principal axis.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalues in descending order, one per component.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|axis| {
                axis.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(a, (v, m))| a * (v - m))
                    .sum()
            })
            .collect()
    }

    pub fn transform(&self, data: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        data.chunks(d).flat_map(|x| self.transform_row(x)).collect()
    }

    /// Maps projected coordinates back to the original space.
    pub fn inverse_row(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (axis, &zc) in self.components.iter().zip(z) {
            for (xi, a) in x.iter_mut().zip(axis) {
                *xi += a * zc;
            }
        }
        x
    }
}

/// Eigen-decomposition of a symmetric `d × d` matrix (row-major).
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// eigenvectors are rows.
pub fn jacobi_eigen(matrix: &[f64], d: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off < OFF_DIAGONAL_TOL {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j * d + j].total_cmp(&a[i * d + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * d + i]).collect();
    let vectors = order
        .iter()
        .map(|&c| (0..d).map(|k| v[k * d + c]).collect())
        .collect();
    (values, vectors)
}

/// Fits a `k`-component PCA on a row-major `n × d` matrix.
pub fn fit_pca(data: &[f64], n: usize, d: usize, k: usize) -> Result<Pca> {
    if data.len() != n * d {
        return Err(TdsError::DimensionMismatch {
            expected: n * d,
            found: data.len(),
        });
    }
    if k == 0 || k > n.min(d) {
        return Err(TdsError::InvalidConfig(format!(
            "PCA needs 1 <= k <= min(n, d) = {}, got {k}",
            n.min(d)
        )));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![0.0; d * d];
    for row in data.chunks(d) {
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += da * (row[b] - mean[b]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= denom;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    let (values, vectors) = jacobi_eigen(&cov, d);
    let components = vectors
        .into_iter()
        .take(k)
        .map(|mut axis: Vec<f64>| {
            let lead = axis
                .iter()
                .copied()
                .enumerate()
                .max_by(|(i, a), (j, b)| a.abs().total_cmp(&b.abs()).then(j.cmp(i)))
                .map(|(_, v)| v)
                .unwrap_or(1.0);
            if lead < 0.0 {
                axis.iter_mut().for_each(|a| *a = -*a);
            }
            axis
        })
        .collect();
    Ok(Pca {
        mean,
        components,
        eigenvalues: values.into_iter().take(k).collect(),
    })
}

/// Centers and projects onto the top-`k` principal axes; returns `n × k`.
pub fn pca_reduce(data: &[f64], n: usize, d: usize, k: usize) -> Result<Vec<f64>> {
    Ok(fit_pca(data, n, d, k)?.transform(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::stream(seed, 0);
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn jacobi_diagonalizes_known_matrix() {
        // eigenvalues of [[2,1],[1,2]] are 3 and 1
        let (vals, vecs) = jacobi_eigen(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        let s = 0.5f64.sqrt();
        assert!((vecs[0][0].abs() - s).abs() < 1e-12);
        assert!((vecs[0][1].abs() - s).abs() < 1e-12);
    }

    #[test]
    fn rank_one_data_reconstructs_exactly() {
        let data: Vec<f64> = (0..20).flat_map(|i| [i as f64, 2.0 * i as f64 + 1.0]).collect();
        let pca = fit_pca(&data, 20, 2, 1).unwrap();
        for x in data.chunks(2) {
            let back = pca.inverse_row(&pca.transform_row(x));
            assert!((back[0] - x[0]).abs() < 1e-9 && (back[1] - x[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn full_rank_projection_preserves_distances() {
        let (n, d) = (30, 4);
        let data = random_matrix(n, d, 2);
        let z = pca_reduce(&data, n, d, d).unwrap();
        for i in 0..n {
            for j in 0..n {
                let dx: f64 = (0..d).map(|k| (data[i * d + k] - data[j * d + k]).powi(2)).sum();
                let dz: f64 = (0..d).map(|k| (z[i * d + k] - z[j * d + k]).powi(2)).sum();
                assert!((dx.sqrt() - dz.sqrt()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn component_variances_descend_and_signs_are_fixed() {
        let (n, d) = (200, 5);
        let mut data = random_matrix(n, d, 3);
        for i in 0..n {
            data[i * d] *= 5.0;
            data[i * d + 2] *= 2.0;
        }
        let pca = fit_pca(&data, n, d, 3).unwrap();
        let z = pca.transform(&data);
        let var = |c: usize| (0..n).map(|i| z[i * 3 + c].powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(var(0) >= var(1) && var(1) >= var(2));
        for (c, ev) in pca.eigenvalues.iter().enumerate() {
            assert!((var(c) - ev).abs() < 1e-9);
        }
        for axis in &pca.components {
            let lead = axis.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn rejects_bad_k() {
        let data = random_matrix(3, 2, 0);
        assert!(fit_pca(&data, 3, 2, 3).is_err());
        assert!(fit_pca(&data, 3, 2, 0).is_err());
    }
}
