//! Correlation statistics and interval summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TdsError};

/// A correlation coefficient, or `Undefined` when an input has zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    Defined(f64),
    Undefined,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Defined(v) => Some(v),
            Correlation::Undefined => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_r: Correlation,
    pub spearman_rho: Correlation,
    pub n: usize,
}

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(TdsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(TdsError::TooFewRows {
            needed: 2,
            found: x.len(),
        });
    }
    Ok(())
}

/// Product-moment correlation, computed on centered values.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation::Undefined);
    }
    Ok(Correlation::Defined((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn correlate(x: &[f64], y: &[f64]) -> Result<CorrelationReport> {
    Ok(CorrelationReport {
        pearson_r: pearson(x, y)?,
        spearman_rho: spearman(x, y)?,
        n: x.len(),
    })
}

/// Mean with a `1.96 · stderr` half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

pub fn mean_ci(values: &[f64]) -> Option<MeanCi> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let half_width = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanCi {
        mean,
        half_width,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(x: &[f64], y: &[f64]) -> f64 {
        pearson(x, y).unwrap().value().unwrap()
    }

    fn rho(x: &[f64], y: &[f64]) -> f64 {
        spearman(x, y).unwrap().value().unwrap()
    }

    #[test]
    fn affine_relations_are_perfect() {
        let x = [1.0, 2.0, 3.5, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((r(&x, &y) - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((r(&x, &neg) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn monotone_relation_has_unit_spearman() {
        let x = [0.1, 0.5, 1.0, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp().powi(3)).collect();
        assert_eq!(rho(&x, &y), 1.0);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn zero_variance_is_undefined() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), Correlation::Undefined);
        assert_eq!(spearman(&[4.0, 4.0], &[1.0, 2.0]).unwrap(), Correlation::Undefined);
    }

    #[test]
    fn bad_shapes_are_errors() {
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn mean_ci_matches_hand_computation() {
        let ci = mean_ci(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(ci.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((ci.half_width - 1.96 * sd / 2.0).abs() < 1e-12);
        assert!(mean_ci(&[]).is_none());
    }

    proptest! {
        #[test]
        fn bounded_and_symmetric(
            pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..200)
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            for (a, b) in [(pearson(&x, &y).unwrap(), pearson(&y, &x).unwrap()),
                           (spearman(&x, &y).unwrap(), spearman(&y, &x).unwrap())] {
                match (a, b) {
                    (Correlation::Defined(a), Correlation::Defined(b)) => {
                        prop_assert!(a.abs() <= 1.0);
                        prop_assert!((a - b).abs() < 1e-12);
                    }
                    (Correlation::Undefined, Correlation::Undefined) => {}
                    _ => prop_assert!(false, "asymmetric definedness"),
                }
            }
        }

        #[test]
        fn invariant_under_positive_affine_maps(
            pairs in prop::collection::vec((-10f64..10.0, -10f64..10.0), 3..100),
            a in 0.1f64..10.0,
            b in -10f64..10.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            if let (Correlation::Defined(p), Correlation::Defined(q)) =
                (pearson(&x, &y).unwrap(), pearson(&x2, &y).unwrap()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
            let x3: Vec<f64> = x.iter().map(|v| v.powi(3) + v).collect();
            prop_assert_eq!(spearman(&x, &y).unwrap(), spearman(&x3, &y).unwrap());
        }
    }
}
