//! Segment discovery over the hardest rows: cluster their SHAP vectors, then
//! describe each cluster by feature-range rules on its most influential
//! features.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::pca::pca_reduce;
use super::shap::Attribution;
use crate::dataset::{ColumnKind, ColumnSpec};
use crate::error::{Result, TdsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    /// Number of k-means clusters.
    pub n_clusters: usize,
    /// Maximum number of rule features per segment.
    pub n_fi: usize,
    /// Calibration coverage target in percent.
    pub coverage_target: f64,
    pub pca_components: usize,
    /// Fraction of rows, ranked by TDS, that form the hard subset.
    pub hard_fraction: f64,
    pub seed: u64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            n_clusters: 4,
            n_fi: 5,
            coverage_target: 50.0,
            pca_components: 5,
            hard_fraction: 0.10,
            seed: 0,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.n_fi == 0 || self.pca_components == 0 {
            return Err(TdsError::InvalidConfig(
                "n_clusters, n_fi and pca_components must be positive".into(),
            ));
        }
        if !(0.0..=100.0).contains(&self.coverage_target) {
            return Err(TdsError::InvalidConfig(format!(
                "coverage_target must be a percentage, got {}",
                self.coverage_target
            )));
        }
        if !(self.hard_fraction > 0.0 && self.hard_fraction <= 1.0) {
            return Err(TdsError::InvalidConfig(format!(
                "hard_fraction must be in (0, 1], got {}",
                self.hard_fraction
            )));
        }
        Ok(())
    }
}

/// A condition on one feature, in the model's (standardized) feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    Interval { feature: usize, low: f64, high: f64 },
    Values { feature: usize, codes: Vec<usize> },
}

impl Rule {
    pub fn feature(&self) -> usize {
        match self {
            Rule::Interval { feature, .. } | Rule::Values { feature, .. } => *feature,
        }
    }

    pub fn matches(&self, x: &[f64]) -> bool {
        match self {
            Rule::Interval { feature, low, high } => {
                let v = x[*feature];
                v >= *low && v <= *high
            }
            Rule::Values { feature, codes } => {
                let v = x[*feature];
                v >= 0.0 && v.fract() == 0.0 && codes.contains(&(v as usize))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub rules: Vec<Rule>,
    /// Positions within the hard subset.
    pub member_indices: Vec<usize>,
    /// Mean calibration TDS over rows matching the rules; `None` when no
    /// calibration row matches.
    pub difficulty: Option<f64>,
    pub calibration_matches: Vec<usize>,
}

impl Segment {
    pub fn matches(&self, x: &[f64]) -> bool {
        self.rules.iter().all(|r| r.matches(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSet {
    /// Ordered by difficulty, descending; segments without calibration
    /// matches come last.
    pub segments: Vec<Segment>,
    pub coverage_target: f64,
    pub selected_prefix: Vec<usize>,
    pub n_calibration: usize,
}

/// Inputs to [`build_segments`]. Row matrices are row-major in the model's
/// feature space.
pub struct SegmentInput<'a> {
    pub hard_rows: &'a [f64],
    pub attributions: &'a [Attribution],
    pub schema: &'a [ColumnSpec],
    pub calibration_rows: &'a [f64],
    pub calibration_tds: &'a [f64],
}

/// Indices of the top `fraction` of rows by score (at least one row), ties
/// broken by index.
pub fn hard_subset(scores: &[f64], fraction: f64) -> Vec<usize> {
    let k = ((fraction * scores.len() as f64).ceil() as usize).clamp(1.min(scores.len()), scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

fn standardize_columns(data: &mut [f64], d: usize) {
    let n = data.len() / d;
    for j in 0..d {
        let mean = (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (data[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        for i in 0..n {
            data[i * d + j] = (data[i * d + j] - mean) / sd;
        }
    }
}

fn top_features(attributions: &[&Attribution], d: usize, n_fi: usize) -> Vec<usize> {
    let mut importance = vec![0.0; d];
    for a in attributions {
        for (imp, c) in importance.iter_mut().zip(&a.contributions) {
            *imp += c.abs();
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&j| importance[j] > 0.0)
        .take(n_fi)
        .collect();
    if chosen.is_empty() {
        chosen.push(order[0]);
    }
    chosen
}

fn rule_for(feature: usize, kind: ColumnKind, values: impl Iterator<Item = f64>) -> Rule {
    match kind {
        ColumnKind::Continuous => {
            let (low, high) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
            Rule::Interval { feature, low, high }
        }
        ColumnKind::Categorical => {
            let mut codes: Vec<usize> = values.map(|v| v as usize).collect();
            codes.sort_unstable();
            codes.dedup();
            Rule::Values { feature, codes }
        }
    }
}

/// Clusters the hard subset, derives per-cluster rules, scores each segment by
/// the mean calibration TDS of matching rows and selects the smallest prefix
/// reaching the coverage target.
pub fn build_segments(input: &SegmentInput<'_>, config: &SegmentConfig) -> Result<SegmentSet> {
    config.validate()?;
    let d = input.schema.len();
    let n_hard = input.attributions.len();
    if input.hard_rows.len() != n_hard * d {
        return Err(TdsError::DimensionMismatch {
            expected: n_hard * d,
            found: input.hard_rows.len(),
        });
    }
    if input.calibration_rows.len() != input.calibration_tds.len() * d {
        return Err(TdsError::DimensionMismatch {
            expected: input.calibration_tds.len() * d,
            found: input.calibration_rows.len(),
        });
    }
    if n_hard < config.n_clusters {
        return Err(TdsError::TooFewRows {
            needed: config.n_clusters,
            found: n_hard,
        });
    }
    if let Some(a) = input.attributions.iter().find(|a| a.contributions.len() != d) {
        return Err(TdsError::DimensionMismatch {
            expected: d,
            found: a.contributions.len(),
        });
    }

    let mut shap: Vec<f64> = input
        .attributions
        .iter()
        .flat_map(|a| a.contributions.iter().copied())
        .collect();
    standardize_columns(&mut shap, d);
    let k = config.pca_components.min(d).min(n_hard);
    let reduced = pca_reduce(&shap, n_hard, d, k)?;
    let clusters = kmeans(&reduced, k, config.n_clusters, config.seed)?;

    let n_cal = input.calibration_tds.len();
    let mut segments = Vec::new();
    for c in 0..config.n_clusters {
        let members: Vec<usize> = (0..n_hard).filter(|&i| clusters.labels[i] == c).collect();
        if members.is_empty() {
            log::debug!("segment {c}: cluster has no members, skipped");
            continue;
        }
        let member_attr: Vec<&Attribution> = members.iter().map(|&i| &input.attributions[i]).collect();
        let rules: Vec<Rule> = top_features(&member_attr, d, config.n_fi)
            .into_iter()
            .map(|j| {
                rule_for(
                    j,
                    input.schema[j].kind,
                    members.iter().map(|&i| input.hard_rows[i * d + j]),
                )
            })
            .collect();
        let mut segment = Segment {
            id: c,
            rules,
            member_indices: members,
            difficulty: None,
            calibration_matches: Vec::new(),
        };
        segment.calibration_matches = input
            .calibration_rows
            .chunks(d)
            .enumerate()
            .filter(|(_, x)| segment.matches(x))
            .map(|(i, _)| i)
            .collect();
        if !segment.calibration_matches.is_empty() {
            let sum: f64 = segment
                .calibration_matches
                .iter()
                .map(|&i| input.calibration_tds[i])
                .sum();
            segment.difficulty = Some(sum / segment.calibration_matches.len() as f64);
        }
        segments.push(segment);
    }

    segments.sort_by(|a, b| match (a.difficulty, b.difficulty) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.id.cmp(&b.id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.id.cmp(&b.id),
    });

    let selected_prefix = select_prefix(&segments, n_cal, config.coverage_target);
    Ok(SegmentSet {
        segments,
        coverage_target: config.coverage_target,
        selected_prefix,
        n_calibration: n_cal,
    })
}

fn reaches(covered: usize, n: usize, target: f64) -> bool {
    covered as f64 * 100.0 >= target * n as f64
}

fn select_prefix(segments: &[Segment], n_cal: usize, target: f64) -> Vec<usize> {
    let mut covered = vec![false; n_cal];
    let mut count = 0;
    let mut prefix = Vec::new();
    if reaches(0, n_cal, target) {
        return prefix;
    }
    for s in segments.iter().filter(|s| s.difficulty.is_some()) {
        prefix.push(s.id);
        for &i in &s.calibration_matches {
            if !covered[i] {
                covered[i] = true;
                count += 1;
            }
        }
        if reaches(count, n_cal, target) {
            return prefix;
        }
    }
    log::info!(
        "segments cover {count} of {n_cal} calibration rows, short of the {target}% target; selecting all matched segments"
    );
    prefix
}

impl SegmentSet {
    pub fn segment(&self, id: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn selected(&self) -> impl Iterator<Item = &Segment> {
        self.selected_prefix.iter().filter_map(|&id| self.segment(id))
    }

    /// Fraction of calibration rows matched by any segment in `ids`.
    pub fn calibration_coverage_of(&self, ids: &[usize]) -> f64 {
        if self.n_calibration == 0 {
            return 0.0;
        }
        let mut covered = vec![false; self.n_calibration];
        for s in ids.iter().filter_map(|&id| self.segment(id)) {
            for &i in &s.calibration_matches {
                covered[i] = true;
            }
        }
        covered.iter().filter(|&&c| c).count() as f64 / self.n_calibration as f64
    }

    pub fn calibration_coverage(&self) -> f64 {
        self.calibration_coverage_of(&self.selected_prefix)
    }

    /// Raw-unit description of every segment.
    pub fn report(&self, schema: &[ColumnSpec], standardization: &[(f64, f64)]) -> SegmentReport {
        let raw = |j: usize, v: f64| {
            let (mean, sd) = standardization.get(j).copied().unwrap_or((0.0, 1.0));
            v * sd + mean
        };
        let segments = self
            .segments
            .iter()
            .map(|s| SegmentSummary {
                id: s.id,
                difficulty: s.difficulty,
                members: s.member_indices.len(),
                calibration_matches: s.calibration_matches.len(),
                calibration_coverage: if self.n_calibration == 0 {
                    0.0
                } else {
                    s.calibration_matches.len() as f64 / self.n_calibration as f64
                },
                selected: self.selected_prefix.contains(&s.id),
                rules: s
                    .rules
                    .iter()
                    .map(|r| match r {
                        Rule::Interval { feature, low, high } => RuleSummary {
                            feature: schema[*feature].name.clone(),
                            low: Some(raw(*feature, *low)),
                            high: Some(raw(*feature, *high)),
                            values: None,
                        },
                        Rule::Values { feature, codes } => RuleSummary {
                            feature: schema[*feature].name.clone(),
                            low: None,
                            high: None,
                            values: Some(
                                codes
                                    .iter()
                                    .map(|&c| schema[*feature].label(c).to_string())
                                    .collect(),
                            ),
                        },
                    })
                    .collect(),
            })
            .collect();
        SegmentReport {
            coverage_target: self.coverage_target,
            selected_prefix: self.selected_prefix.clone(),
            calibration_coverage: self.calibration_coverage(),
            segments,
        }
    }
}

/// Indices of rows matching every rule of at least one selected segment.
pub fn segment_filter(rows: &[f64], d: usize, set: &SegmentSet) -> Vec<usize> {
    let selected: Vec<&Segment> = set.selected().collect();
    if selected.is_empty() || d == 0 {
        return Vec::new();
    }
    rows.chunks(d)
        .enumerate()
        .filter(|(_, x)| selected.iter().any(|s| s.matches(x)))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSummary {
    pub feature: String,
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub values: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub id: usize,
    pub difficulty: Option<f64>,
    pub members: usize,
    pub calibration_matches: usize,
    pub calibration_coverage: f64,
    pub selected: bool,
    pub rules: Vec<RuleSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub coverage_target: f64,
    pub selected_prefix: Vec<usize>,
    pub calibration_coverage: f64,
    pub segments: Vec<SegmentSummary>,
}

impl SegmentReport {
    /// One block per segment: a header line, then a `Feature  Low  High` table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            let d = s
                .difficulty
                .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "Segment {}{} | D(s) = {} | members = {} | calibration coverage = {:.4}",
                s.id,
                if s.selected { " (selected)" } else { "" },
                d,
                s.members,
                s.calibration_coverage
            );
            let width = s.rules.iter().map(|r| r.feature.len()).max().unwrap_or(0).max(7);
            let _ = writeln!(out, "{:<width$}  {:>12}  {:>12}", "Feature", "Low", "High");
            for r in &s.rules {
                match (&r.values, r.low, r.high) {
                    (Some(values), _, _) => {
                        let _ = writeln!(out, "{:<width$}  {{{}}}", r.feature, values.join(", "));
                    }
                    (None, Some(lo), Some(hi)) => {
                        let _ = writeln!(out, "{:<width$}  {:>12.4}  {:>12.4}", r.feature, lo, hi);
                    }
                    _ => {}
                }
            }
            out.push('\n');
        }
        out
    }
}
