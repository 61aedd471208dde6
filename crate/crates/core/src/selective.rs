//! Selective prediction: accept the least difficult rows first and track the
//! risk of the accepted set as coverage grows.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TdsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCoveragePoint {
    pub coverage: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCoverageCurve {
    /// One point per accepted prefix, `coverage = k/n` for `k = 1..=n`.
    pub points: Vec<RiskCoveragePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectiveSummary {
    pub aurc: f64,
    pub naurc: Option<f64>,
    pub full_coverage_risk: f64,
}

/// Sorts rows by ascending score (ties by index) and emits the mean loss of
/// every prefix.
pub fn risk_coverage(scores: &[f64], losses: &[f64]) -> Result<RiskCoverageCurve> {
    if scores.len() != losses.len() {
        return Err(TdsError::LengthMismatch {
            left: scores.len(),
            right: losses.len(),
        });
    }
    if scores.is_empty() {
        return Err(TdsError::Empty("risk-coverage input"));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(TdsError::NonFinite("losses"));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut sum = 0.0;
    let points = order
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            sum += losses[i];
            RiskCoveragePoint {
                coverage: (k + 1) as f64 / n as f64,
                risk: sum / (k + 1) as f64,
            }
        })
        .collect();
    Ok(RiskCoverageCurve { points })
}

impl RiskCoverageCurve {
    pub fn full_coverage_risk(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.risk)
    }

    /// Trapezoidal area over `[1/n, 1]`, plus the rectangle `[0, 1/n]` at the
    /// first point's risk.
    pub fn aurc(&self) -> f64 {
        let Some(first) = self.points.first() else {
            return 0.0;
        };
        let mut area = first.coverage * first.risk;
        for w in self.points.windows(2) {
            area += (w[1].coverage - w[0].coverage) * (w[0].risk + w[1].risk) / 2.0;
        }
        area
    }

    /// AURC divided by the full-coverage risk.
    pub fn naurc(&self) -> Result<f64> {
        let full = self.full_coverage_risk();
        if !(full > 0.0) {
            return Err(TdsError::ZeroFullCoverageRisk);
        }
        Ok(self.aurc() / full)
    }

    pub fn summary(&self) -> SelectiveSummary {
        SelectiveSummary {
            aurc: self.aurc(),
            naurc: self.naurc().ok(),
            full_coverage_risk: self.full_coverage_risk(),
        }
    }

    /// Risk at coverages 0.1, 0.2, …, 1.0 (the smallest prefix reaching each).
    pub fn deciles(&self) -> Vec<RiskCoveragePoint> {
        let n = self.points.len();
        (1..=10)
            .map(|d| {
                let k = ((d as f64 / 10.0) * n as f64).ceil().max(1.0) as usize;
                let p = self.points[k.min(n) - 1];
                RiskCoveragePoint {
                    coverage: d as f64 / 10.0,
                    risk: p.risk,
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["coverage", "risk"])?;
        for p in &self.points {
            w.write_record([format!("{:?}", p.coverage), format!("{:?}", p.risk)])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| TdsError::io("<memory>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn aurc(curve: &RiskCoverageCurve) -> f64 {
    curve.aurc()
}

pub fn naurc(curve: &RiskCoverageCurve) -> Result<f64> {
    curve.naurc()
}
