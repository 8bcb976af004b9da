//! Detection scoring.
//!
//! A detection is a true detection of a ground-truth point when both have the
//! same type and lie strictly less than 10 pixels apart. Matching is
//! one-to-one: candidate pairs are taken greedily by ascending distance, ties
//! broken by ground-truth order and then detection order. Unmatched ground
//! truth is missed; unmatched detections are false alarms.
//!
//! All rates divide by the number of ground-truth points of that type, so the
//! false-alarm rate can exceed 1. An image is correctly detected when it has
//! neither misses nor false alarms of either type.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::label::{PointType, SingularPoint};

/// Squared acceptance radius in pixels².
pub const ACCEPT_DIST_SQ: f64 = 100.0;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    /// `(detected, ground_truth)` pairs.
    pub true_detections: Vec<(SingularPoint, SingularPoint)>,
    pub missed: Vec<SingularPoint>,
    pub false_alarms: Vec<SingularPoint>,
}

fn dist_sq(a: &SingularPoint, b: &SingularPoint) -> f64 {
    let dx = f64::from(a.x) - f64::from(b.x);
    let dy = f64::from(a.y) - f64::from(b.y);
    dx * dx + dy * dy
}

/// Whether a detection at `d` would be accepted for the ground-truth point `g`
/// in isolation.
pub fn accepts(d: &SingularPoint, g: &SingularPoint) -> bool {
    d.ptype == g.ptype && dist_sq(d, g) < ACCEPT_DIST_SQ
}

pub fn match_points(detected: &[SingularPoint], truth: &[SingularPoint]) -> MatchResult {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, g) in truth.iter().enumerate() {
        for (di, d) in detected.iter().enumerate() {
            if accepts(d, g) {
                candidates.push((dist_sq(d, g), ti, di));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut truth_used = vec![false; truth.len()];
    let mut det_used = vec![false; detected.len()];
    let mut result = MatchResult::default();
    for (_, ti, di) in candidates {
        if truth_used[ti] || det_used[di] {
            continue;
        }
        truth_used[ti] = true;
        det_used[di] = true;
        result.true_detections.push((detected[di], truth[ti]));
    }
    result.missed = truth
        .iter()
        .zip(&truth_used)
        .filter(|(_, &u)| !u)
        .map(|(p, _)| *p)
        .collect();
    result.false_alarms = detected
        .iter()
        .zip(&det_used)
        .filter(|(_, &u)| !u)
        .map(|(p, _)| *p)
        .collect();
    result
}

/// Raw counts for one point type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TypeCounts {
    pub ground_truth: usize,
    pub true_detections: usize,
    pub missed: usize,
    pub false_alarms: usize,
}

impl TypeCounts {
    fn add(&mut self, o: &TypeCounts) {
        self.ground_truth += o.ground_truth;
        self.true_detections += o.true_detections;
        self.missed += o.missed;
        self.false_alarms += o.false_alarms;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageScore {
    pub core: TypeCounts,
    pub delta: TypeCounts,
    pub correctly_detected: bool,
}

pub fn score_image(detected: &[SingularPoint], truth: &[SingularPoint]) -> ImageScore {
    let m = match_points(detected, truth);
    let count = |t: PointType| TypeCounts {
        ground_truth: truth.iter().filter(|p| p.ptype == t).count(),
        true_detections: m.true_detections.iter().filter(|(_, g)| g.ptype == t).count(),
        missed: m.missed.iter().filter(|p| p.ptype == t).count(),
        false_alarms: m.false_alarms.iter().filter(|p| p.ptype == t).count(),
    };
    ImageScore {
        core: count(PointType::Core),
        delta: count(PointType::Delta),
        correctly_detected: m.missed.is_empty() && m.false_alarms.is_empty(),
    }
}

/// Rates for one point type; `None` when the dataset has no ground truth of
/// that type.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TypeRates {
    pub counts: TypeCounts,
    pub detection_rate: Option<f64>,
    pub miss_rate: Option<f64>,
    pub false_alarm_rate: Option<f64>,
}

impl TypeRates {
    fn from_counts(counts: TypeCounts) -> Self {
        let rate = |n: usize| (counts.ground_truth > 0).then(|| n as f64 / counts.ground_truth as f64);
        Self {
            counts,
            detection_rate: rate(counts.true_detections),
            miss_rate: rate(counts.missed),
            false_alarm_rate: rate(counts.false_alarms),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreReport {
    pub images: usize,
    pub correctly_detected: usize,
    pub cd_rate: f64,
    pub core: TypeRates,
    pub delta: TypeRates,
}

impl ScoreReport {
    pub fn rates(&self, t: PointType) -> &TypeRates {
        match t {
            PointType::Core => &self.core,
            PointType::Delta => &self.delta,
        }
    }
}

pub fn aggregate(results: &[ImageScore]) -> Result<ScoreReport> {
    if results.is_empty() {
        return Err(Error::NoResults);
    }
    let mut core = TypeCounts::default();
    let mut delta = TypeCounts::default();
    let mut cd = 0;
    for r in results {
        core.add(&r.core);
        delta.add(&r.delta);
        cd += usize::from(r.correctly_detected);
    }
    Ok(ScoreReport {
        images: results.len(),
        correctly_detected: cd,
        cd_rate: cd as f64 / results.len() as f64,
        core: TypeRates::from_counts(core),
        delta: TypeRates::from_counts(delta),
    })
}

fn pct(v: Option<f64>) -> String {
    match v {
        Some(r) => format!("{:.1}", 100.0 * r),
        None => "n/a".to_string(),
    }
}

/// Renders the report as a fixed-width table: CD rate, then detection, miss
/// and false-alarm rates split into core and delta columns, followed by the
/// raw counts.
pub fn render_table(report: &ScoreReport, algorithm: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<18}{:>7}  {:^18}  {:^18}  {:^20}\n",
        "Algorithm", "CD(%)", "Detection rate (%)", "Miss rate (%)", "False alarm rate (%)"
    ));
    s.push_str(&format!(
        "{:<18}{:>7}  {:>8}  {:>8}  {:>8}  {:>8}  {:>9}  {:>9}\n",
        "", "", "Core", "Delta", "Core", "Delta", "Core", "Delta"
    ));
    s.push_str(&format!(
        "{:<18}{:>7}  {:>8}  {:>8}  {:>8}  {:>8}  {:>9}  {:>9}\n",
        algorithm,
        pct(Some(report.cd_rate)),
        pct(report.core.detection_rate),
        pct(report.delta.detection_rate),
        pct(report.core.miss_rate),
        pct(report.delta.miss_rate),
        pct(report.core.false_alarm_rate),
        pct(report.delta.false_alarm_rate),
    ));
    s.push('\n');
    s.push_str(&format!(
        "images: {}  correctly detected: {}\n",
        report.images, report.correctly_detected
    ));
    for (name, r) in [("core", &report.core), ("delta", &report.delta)] {
        let c = r.counts;
        s.push_str(&format!(
            "{name}: ground truth {}  detected {}  missed {}  false alarms {}\n",
            c.ground_truth, c.true_detections, c.missed, c.false_alarms
        ));
    }
    s
}
