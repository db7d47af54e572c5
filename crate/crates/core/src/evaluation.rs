//! CLEAR MOT metrics, precision-recall sweeps and prediction scoring.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::association::{best_assignment, CostMatrix};
use crate::geometry::{bev_iou, OrientedRect};
use crate::sofilter::{predict_horizon, KinematicState, MotionParams, StateCov, StateVec};

/// Overlap at which recall is additionally reported.
pub const STRICT_IOU: f64 = 0.7;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatching {
    /// `(estimate index, truth index, iou)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_estimates: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

/// One-to-one matching of maximum total IoU among pairs with IoU above `iou_thresh`.
pub fn frame_match(estimates: &[OrientedRect], truth: &[OrientedRect], iou_thresh: f64) -> FrameMatching {
    match_with_pinned(estimates, truth, iou_thresh, &[])
}

/// As [`frame_match`], with `pinned` `(estimate, truth)` pairs kept first when still above threshold.
fn match_with_pinned(estimates: &[OrientedRect], truth: &[OrientedRect], iou_thresh: f64, pinned: &[(usize, usize)]) -> FrameMatching {
    let mut pairs = Vec::new();
    let mut est_used = vec![false; estimates.len()];
    let mut truth_used = vec![false; truth.len()];
    for &(e, t) in pinned {
        if est_used[e] || truth_used[t] {
            continue;
        }
        let iou = bev_iou(&estimates[e], &truth[t]);
        if iou > iou_thresh {
            pairs.push((e, t, iou));
            est_used[e] = true;
            truth_used[t] = true;
        }
    }
    let free_t: Vec<usize> = (0..truth.len()).filter(|&t| !truth_used[t]).collect();
    let free_e: Vec<usize> = (0..estimates.len()).filter(|&e| !est_used[e]).collect();
    if !free_t.is_empty() && !free_e.is_empty() {
        let ious: Vec<Vec<f64>> = free_t
            .iter()
            .map(|&t| free_e.iter().map(|&e| bev_iou(&estimates[e], &truth[t])).collect())
            .collect();
        let costs = ious
            .iter()
            .map(|row| row.iter().map(|&v| if v > iou_thresh { -v } else { f64::INFINITY }).collect())
            .collect();
        let m = CostMatrix::new(costs, vec![0.0; free_t.len()], vec![0.0; free_e.len()]).expect("finite costs");
        let best = best_assignment(&m).expect("all-miss is always feasible");
        for (r, a) in best.assignment.iter().enumerate() {
            if let Some(c) = a {
                pairs.push((free_e[*c], free_t[r], ious[r][*c]));
                est_used[free_e[*c]] = true;
                truth_used[free_t[r]] = true;
            }
        }
    }
    pairs.sort_by_key(|p| (p.0, p.1));
    FrameMatching {
        pairs,
        unmatched_estimates: (0..estimates.len()).filter(|&e| !est_used[e]).collect(),
        unmatched_truth: (0..truth.len()).filter(|&t| !truth_used[t]).collect(),
    }
}

/// Estimates and truth of one frame, both with persistent ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalFrame {
    pub estimates: Vec<(u64, OrientedRect)>,
    pub truth: Vec<(u64, OrientedRect)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotSummary {
    pub mota: f64,
    /// Mean IoU over matches; 0 without matches.
    pub motp: f64,
    #[serde(rename = "fn")]
    pub false_negatives: usize,
    #[serde(rename = "fp")]
    pub false_positives: usize,
    pub idsw: usize,
    pub matches: usize,
    pub mt_percent: f64,
    pub gt: usize,
}

impl MotSummary {
    /// Recomputes MOTA from the counts. With no ground truth the denominator is 1.
    pub fn mota_from_counts(&self) -> f64 {
        let errors = (self.false_negatives + self.false_positives + self.idsw) as f64;
        1.0 - errors / self.gt.max(1) as f64
    }
}

/// Fraction of a truth track's frames that must be matched for it to count as mostly tracked.
pub const MOSTLY_TRACKED: f64 = 0.8;

/// CLEAR MOT over a sequence. Pairs matched in the previous frame are kept
/// while their IoU stays above threshold; the rest is optimally matched.
pub fn clear_mot(frames: &[EvalFrame], iou_thresh: f64) -> MotSummary {
    let mut fn_ = 0;
    let mut fp = 0;
    let mut idsw = 0;
    let mut iou_sum = 0.0;
    let mut matches = 0;
    let mut gt = 0;
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    let mut prev_pairs: HashSet<(u64, u64)> = HashSet::new();
    let mut presence: BTreeMap<u64, (usize, usize)> = BTreeMap::new();

    for f in frames {
        let est: Vec<OrientedRect> = f.estimates.iter().map(|e| e.1).collect();
        let tru: Vec<OrientedRect> = f.truth.iter().map(|t| t.1).collect();
        let mut pinned = Vec::new();
        for (ti, (tid, _)) in f.truth.iter().enumerate() {
            for (ei, (eid, _)) in f.estimates.iter().enumerate() {
                if prev_pairs.contains(&(*tid, *eid)) {
                    pinned.push((ei, ti));
                }
            }
        }
        let m = match_with_pinned(&est, &tru, iou_thresh, &pinned);
        gt += tru.len();
        fn_ += m.unmatched_truth.len();
        fp += m.unmatched_estimates.len();
        prev_pairs.clear();
        for &(ei, ti, iou) in &m.pairs {
            let (tid, eid) = (f.truth[ti].0, f.estimates[ei].0);
            matches += 1;
            iou_sum += iou;
            if last_match.insert(tid, eid).is_some_and(|old| old != eid) {
                idsw += 1;
            }
            prev_pairs.insert((tid, eid));
            presence.entry(tid).or_default().1 += 1;
        }
        for (tid, _) in &f.truth {
            presence.entry(*tid).or_default().0 += 1;
        }
    }
    let mostly = presence
        .values()
        .filter(|(present, matched)| *matched as f64 >= MOSTLY_TRACKED * *present as f64)
        .count();
    let mut s = MotSummary {
        mota: 0.0,
        motp: if matches > 0 { iou_sum / matches as f64 } else { 0.0 },
        false_negatives: fn_,
        false_positives: fp,
        idsw,
        matches,
        mt_percent: if presence.is_empty() {
            100.0
        } else {
            100.0 * mostly as f64 / presence.len() as f64
        },
        gt,
    };
    s.mota = s.mota_from_counts();
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    /// Recall with the matching overlap raised to [`STRICT_IOU`].
    pub recall_strict: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// Columnar text: header line then one row per threshold.
    pub fn to_columns(&self) -> String {
        let mut s = String::from("threshold precision recall recall_at_0.7\n");
        for p in &self.points {
            s.push_str(&format!("{} {} {} {}\n", p.threshold, p.precision, p.recall, p.recall_strict));
        }
        s
    }
}

/// Scored estimates and truth rectangles of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredFrame {
    pub estimates: Vec<(OrientedRect, f64)>,
    pub truth: Vec<OrientedRect>,
}

/// `n + 1` evenly spaced thresholds on [0, 1].
pub fn default_thresholds(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

/// Precision and recall when reporting estimates with score at least each threshold.
/// With no reported estimates precision is 1.
pub fn pr_sweep(frames: &[ScoredFrame], thresholds: &[f64], iou_thresh: f64) -> PrCurve {
    let mut th: Vec<f64> = thresholds.to_vec();
    th.sort_by(f64::total_cmp);
    let total_truth: usize = frames.iter().map(|f| f.truth.len()).sum();
    let points = th
        .into_iter()
        .map(|threshold| {
            let (mut tp, mut reported, mut tp_strict) = (0, 0, 0);
            for f in frames {
                let est: Vec<OrientedRect> = f.estimates.iter().filter(|(_, p)| *p >= threshold).map(|(r, _)| *r).collect();
                reported += est.len();
                tp += frame_match(&est, &f.truth, iou_thresh).pairs.len();
                tp_strict += frame_match(&est, &f.truth, iou_thresh.max(STRICT_IOU)).pairs.len();
            }
            let ratio = |a: usize, b: usize, empty: f64| if b == 0 { empty } else { a as f64 / b as f64 };
            PrPoint {
                threshold,
                precision: ratio(tp, reported, 1.0),
                recall: ratio(tp, total_truth, 0.0),
                recall_strict: ratio(tp_strict, total_truth, 0.0),
            }
        })
        .collect();
    PrCurve { points }
}

pub const PREDICTION_HORIZON_S: f64 = 1.0;
pub const PREDICTION_IOU: f64 = 0.1;

/// A reported track at time `t`, enough to extrapolate it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportedState {
    pub rect: OrientedRect,
    pub speed: f64,
    pub yaw_rate: f64,
    pub confidence: f64,
}

impl ReportedState {
    fn kinematic(&self) -> KinematicState {
        let r = &self.rect;
        KinematicState::new(
            StateVec::from_row_slice(&[r.cx, r.cy, r.yaw, r.length, r.width, self.speed, self.yaw_rate]),
            StateCov::zeros(),
        )
    }
}

/// Scores tracks extrapolated one horizon ahead against truth at `t + horizon`.
///
/// `reports` and `truth` are `(t, items)` sequences. States are in world
/// coordinates, so ego motion needs no prediction. Report times without a
/// truth frame within half a `step` of the target are skipped.
pub fn prediction_pr(
    reports: &[(f64, Vec<ReportedState>)],
    truth: &[(f64, Vec<OrientedRect>)],
    motion: &MotionParams,
    step: f64,
    thresholds: &[f64],
) -> PrCurve {
    let mut frames = Vec::new();
    for (t, states) in reports {
        let target = t + PREDICTION_HORIZON_S;
        let Some((_, objs)) = truth.iter().find(|(tt, _)| (tt - target).abs() < 0.5 * step) else {
            continue;
        };
        let estimates = states
            .iter()
            .filter_map(|s| {
                predict_horizon(&s.kinematic(), PREDICTION_HORIZON_S, step, motion)
                    .ok()
                    .map(|r| (r, s.confidence))
            })
            .collect();
        frames.push(ScoredFrame {
            estimates,
            truth: objs.clone(),
        });
    }
    pr_sweep(&frames, thresholds, PREDICTION_IOU)
}
