//! Spotting evaluation (tolerance-matched average precision) and learning-curve
//! metrics (area under the curve, performance at a data budget, and data
//! needed to reach a fraction of the final performance).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Spot;
use crate::error::{Error, Result};
use crate::spotting::PredictedSpot;

/// Scored detections of one class, in descending-confidence processing order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassMatch {
    pub detections: Vec<(f64, bool)>,
    pub num_gt: usize,
}

impl ClassMatch {
    pub fn true_positives(&self) -> usize {
        self.detections.iter().filter(|d| d.1).count()
    }

    pub fn false_positives(&self) -> usize {
        self.detections.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.num_gt - self.true_positives()
    }

    fn merge(&mut self, other: ClassMatch) {
        self.detections.extend(other.detections);
        self.num_gt += other.num_gt;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub classes: BTreeMap<usize, ClassMatch>,
}

impl MatchResult {
    pub fn class(&self, class_id: usize) -> ClassMatch {
        self.classes.get(&class_id).cloned().unwrap_or_default()
    }

    pub fn merge(&mut self, other: MatchResult) {
        for (k, m) in other.classes {
            self.classes.entry(k).or_default().merge(m);
        }
    }
}

/// Greedy matching within one video: per class, predictions are taken in
/// descending confidence and each claims the closest still-unmatched ground
/// truth of its class within `±delta`.
pub fn match_spots(predictions: &[PredictedSpot], ground_truth: &[Spot], delta: f64) -> MatchResult {
    let mut result = MatchResult::default();
    for gt in ground_truth {
        result.classes.entry(gt.class_id).or_default().num_gt += 1;
    }
    let mut by_class: BTreeMap<usize, Vec<&PredictedSpot>> = BTreeMap::new();
    for p in predictions {
        by_class.entry(p.class_id).or_default().push(p);
    }
    for (class_id, mut preds) in by_class {
        preds.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        let gts: Vec<f64> = ground_truth
            .iter()
            .filter(|g| g.class_id == class_id)
            .map(|g| g.time)
            .collect();
        let mut used = vec![false; gts.len()];
        let entry = result.classes.entry(class_id).or_default();
        for p in preds {
            let mut best: Option<(usize, f64)> = None;
            for (i, &t) in gts.iter().enumerate() {
                let d = (t - p.time).abs();
                if !used[i] && d <= delta && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            if let Some((i, _)) = best {
                used[i] = true;
            }
            entry.detections.push((p.confidence, best.is_some()));
        }
    }
    result
}

/// All-point interpolated AP. `None` when the class has no ground truth.
pub fn average_precision(m: &ClassMatch) -> Option<f64> {
    if m.num_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..m.detections.len()).collect();
    order.sort_by(|&a, &b| m.detections[b].0.total_cmp(&m.detections[a].0));
    let mut precision = Vec::with_capacity(order.len());
    let mut is_tp = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        let hit = m.detections[i].1;
        tp += usize::from(hit);
        precision.push(tp as f64 / (rank + 1) as f64);
        is_tp.push(hit);
    }
    // Precision envelope, right to left.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let sum: f64 = precision
        .iter()
        .zip(&is_tp)
        .filter(|(_, &hit)| hit)
        .map(|(p, _)| p)
        .sum();
    Some(sum / m.num_gt as f64)
}

/// Mean AP over classes that have ground truth; `None` if none do.
pub fn mean_average_precision(m: &MatchResult) -> Option<f64> {
    let aps: Vec<f64> = m.classes.values().filter_map(average_precision).collect();
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// δ ∈ {1, …, 5} s.
    Tight,
    /// δ ∈ {5, 10, …, 60} s.
    Loose,
}

impl Regime {
    pub fn deltas(self) -> Vec<f64> {
        match self {
            Regime::Tight => (1..=5).map(f64::from).collect(),
            Regime::Loose => (1..=12).map(|i| 5.0 * f64::from(i)).collect(),
        }
    }
}

/// Predictions and ground truth of one video.
#[derive(Debug, Clone, Copy)]
pub struct VideoEval<'a> {
    pub predictions: &'a [PredictedSpot],
    pub ground_truth: &'a [Spot],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgMapReport {
    pub avg_map: f64,
    /// mAP at each tolerance of the grid.
    pub per_delta: Vec<(f64, f64)>,
    /// AP per class, averaged over the grid.
    pub per_class: BTreeMap<usize, f64>,
}

/// Average-mAP over a tolerance grid across a set of videos.
pub fn avg_map(videos: &[VideoEval<'_>], regime: Regime) -> Result<AvgMapReport> {
    avg_map_over(videos, &regime.deltas())
}

pub fn avg_map_over(videos: &[VideoEval<'_>], deltas: &[f64]) -> Result<AvgMapReport> {
    if videos.iter().all(|v| v.ground_truth.is_empty()) {
        return Err(Error::Empty("ground truth"));
    }
    let mut per_delta = Vec::with_capacity(deltas.len());
    let mut class_sums: BTreeMap<usize, f64> = BTreeMap::new();
    for &delta in deltas {
        let mut merged = MatchResult::default();
        for v in videos {
            merged.merge(match_spots(v.predictions, v.ground_truth, delta));
        }
        for (&k, m) in &merged.classes {
            if let Some(ap) = average_precision(m) {
                *class_sums.entry(k).or_default() += ap;
            }
        }
        let map = mean_average_precision(&merged).expect("ground truth is non-empty");
        per_delta.push((delta, map));
    }
    let n = deltas.len() as f64;
    Ok(AvgMapReport {
        avg_map: per_delta.iter().map(|(_, m)| m).sum::<f64>() / n,
        per_delta,
        per_class: class_sums.into_iter().map(|(k, s)| (k, s / n)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub labeled_ratio: f64,
    pub labeled_clips: usize,
    pub loose_avg_map: f64,
    pub tight_avg_map: f64,
    pub wall_seconds: f64,
}

impl CurvePoint {
    pub fn value(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Tight => self.tight_avg_map,
            Regime::Loose => self.loose_avg_map,
        }
    }
}

/// Performance against labeled-data ratio, one point per AL step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub regime: Regime,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn new(regime: Regime) -> Self {
        Self {
            regime,
            points: Vec::new(),
        }
    }

    /// `(labeled_ratio, avg_map)` pairs under the curve's regime.
    pub fn series(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .map(|p| (p.labeled_ratio, p.value(self.regime)))
            .collect()
    }

    fn csv(&self, timing: bool) -> String {
        let mut out =
            String::from("step,labeled_ratio,labeled_clips,loose_avg_map,tight_avg_map");
        out.push_str(if timing { ",wall_seconds\n" } else { "\n" });
        for p in &self.points {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                p.step, p.labeled_ratio, p.labeled_clips, p.loose_avg_map, p.tight_avg_map
            );
            if timing {
                let _ = write!(out, ",{:.3}", p.wall_seconds);
            }
            out.push('\n');
        }
        out
    }

    /// Full CSV export, wall-clock column included.
    pub fn to_csv(&self) -> String {
        self.csv(true)
    }

    /// CSV without timing; byte-identical across runs with the same seeds.
    pub fn canonical_csv(&self) -> String {
        self.csv(false)
    }

    pub fn summary(&self) -> Result<CurveSummary> {
        CurveSummary::from_series(&self.series())
    }
}

/// Trapezoidal area under `(ratio, value)` points divided by the ratio span.
pub fn aulc(series: &[(f64, f64)]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::Empty("learning curve needs at least two points"));
    }
    let area: f64 = series
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    let span = series[series.len() - 1].0 - series[0].0;
    if !(span > 0.0) {
        return Err(Error::config("learning curve ratios must increase"));
    }
    Ok(area / span)
}

const RATIO_TOL: f64 = 1e-9;

/// Value at exactly `percent`% labeled data; no interpolation.
pub fn md_at(series: &[(f64, f64)], percent: f64) -> Result<f64> {
    let target = percent / 100.0;
    series
        .iter()
        .find(|(r, _)| (r - target).abs() <= RATIO_TOL)
        .map(|&(_, v)| v)
        .ok_or(Error::MissingPoint(target))
}

/// Smallest ratio whose value reaches `percent`% of the final value.
pub fn mp_at(series: &[(f64, f64)], percent: f64) -> Result<Option<f64>> {
    let &(_, last) = series.last().ok_or(Error::Empty("learning curve"))?;
    let threshold = percent / 100.0 * last;
    Ok(series.iter().find(|(_, v)| *v >= threshold).map(|&(r, _)| r))
}

/// Curve metrics in the layout of a strategy comparison row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub aulc: f64,
    pub md5: Option<f64>,
    pub md10: Option<f64>,
    pub mp90: Option<f64>,
    pub mp99: Option<f64>,
}

impl CurveSummary {
    pub fn from_series(series: &[(f64, f64)]) -> Result<Self> {
        Ok(Self {
            aulc: aulc(series)?,
            md5: md_at(series, 5.0).ok(),
            md10: md_at(series, 10.0).ok(),
            mp90: mp_at(series, 90.0)?,
            mp99: mp_at(series, 99.0)?,
        })
    }
}

/// Renders a fraction as a percentage with two decimals, `-` when absent.
pub fn render_percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "-".to_string(),
    }
}
