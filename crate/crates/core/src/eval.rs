//! Detection evaluation: greedy matching, precision/recall, all-point AP,
//! mAP at one IoU threshold or averaged over 0.50:0.95, and a confusion
//! matrix with a background row and column.
//!
//! Conventions:
//! * detections are ranked by score, ties broken by input index;
//! * zero denominators in precision and recall give 0;
//! * mAP averages only classes that have at least one ground truth;
//! * ground truths flagged `ignore` are removed before matching, so they
//!   neither match detections nor count as misses.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::losses::{iou, Bbox};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("average precision is undefined without ground truth")]
    NoPositives,
    #[error("IoU threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("detection {index} has score {score} outside [0, 1]")]
    Score { index: usize, score: f64 },
    #[error("class {0} is not in the class list")]
    UnknownClass(usize),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub image_id: String,
    pub class_id: usize,
    pub bbox: Bbox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub class_id: usize,
    pub bbox: Bbox,
    pub ignore: bool,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, class_id: usize, bbox: Bbox, score: f64) -> Self {
        Self {
            image_id: image_id.into(),
            class_id,
            bbox,
            score,
        }
    }
}

impl GroundTruth {
    pub fn new(image_id: impl Into<String>, class_id: usize, bbox: Bbox) -> Self {
        Self {
            image_id: image_id.into(),
            class_id,
            bbox,
            ignore: false,
        }
    }

    pub fn ignored(mut self) -> Self {
        self.ignore = true;
        self
    }
}

/// Outcome of matching one image's detections against its ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// Per detection (input order): index of the matched ground truth.
    pub det_match: Vec<Option<usize>>,
    /// Per ground truth (input order): index of the matching detection.
    pub gt_match: Vec<Option<usize>>,
}

impl Matching {
    pub fn is_tp(&self, det: usize) -> bool {
        self.det_match[det].is_some()
    }

    pub fn true_positives(&self) -> usize {
        self.det_match.iter().flatten().count()
    }
}

/// Indices of `dets` by descending score, ties by ascending index.
pub fn rank_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

fn greedy(
    dets: &[Detection],
    gts: &[GroundTruth],
    threshold: f64,
    eligible: impl Fn(&Detection, &GroundTruth) -> bool,
    m: &mut Matching,
) {
    for d in rank_order(dets) {
        if m.det_match[d].is_some() {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt.ignore || m.gt_match[g].is_some() || !eligible(&dets[d], gt) {
                continue;
            }
            let v = iou(&dets[d].bbox, &gt.bbox);
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            m.det_match[d] = Some(g);
            m.gt_match[g] = Some(d);
        }
    }
}

/// Greedy one-to-one matching for a single image. Detections are visited
/// in rank order; each takes the unmatched, non-ignored ground truth of
/// its class with the highest IoU at or above `threshold`.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], threshold: f64) -> Matching {
    let mut m = Matching {
        det_match: vec![None; dets.len()],
        gt_match: vec![None; gts.len()],
    };
    greedy(
        dets,
        gts,
        threshold,
        |d, g| d.class_id == g.class_id,
        &mut m,
    );
    m
}

/// `(TP / (TP + FP), TP / (TP + FN))`, with 0 for an empty denominator.
pub fn precision_recall(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    (ratio(tp, tp + fp), ratio(tp, tp + fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Area under the monotone precision envelope at every recall step.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.01, ..., 1.
    Points101,
}

/// Precision after each ranked detection.
fn precisions(labels: &[bool]) -> Vec<f64> {
    let mut tp = 0usize;
    labels
        .iter()
        .enumerate()
        .map(|(i, &hit)| {
            tp += usize::from(hit);
            tp as f64 / (i + 1) as f64
        })
        .collect()
}

/// Running maximum from the right: the monotone precision envelope.
fn envelope(p: &[f64]) -> Vec<f64> {
    let mut env = p.to_vec();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    env
}

/// AP of a ranked TP/FP sequence against `total_gt` positives.
///
/// All-point: recall rises by `1 / total_gt` at each TP, so the area under
/// the envelope is the envelope summed over TP ranks, divided by
/// `total_gt`.
pub fn average_precision(labels: &[bool], total_gt: usize, mode: Interpolation) -> Result<f64> {
    if total_gt == 0 {
        return Err(EvalError::NoPositives);
    }
    let env = envelope(&precisions(labels));
    Ok(match mode {
        Interpolation::AllPoint => {
            let sum: f64 = labels
                .iter()
                .zip(&env)
                .filter(|(&hit, _)| hit)
                .map(|(_, &p)| p)
                .sum();
            sum / total_gt as f64
        }
        Interpolation::Points101 => {
            let mut tp = 0usize;
            let recall: Vec<f64> = labels
                .iter()
                .map(|&hit| {
                    tp += usize::from(hit);
                    tp as f64 / total_gt as f64
                })
                .collect();
            let sum: f64 = (0..=100)
                .map(|t| {
                    let r = t as f64 / 100.0;
                    recall.iter().position(|&x| x >= r).map_or(0.0, |i| env[i])
                })
                .sum();
            sum / 101.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub num_gt: usize,
    pub num_det: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub ap: f64,
    /// `(recall, precision)` after each ranked detection.
    pub pr_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    /// Classes with ground truth, ascending id.
    pub classes: Vec<ClassReport>,
    pub map: f64,
    /// Over all detections and non-ignored ground truths.
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn check_inputs(dets: &[Detection], gts: &[GroundTruth], threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EvalError::Threshold(threshold));
    }
    if let Some((index, d)) = dets
        .iter()
        .enumerate()
        .find(|(_, d)| !(0.0..=1.0).contains(&d.score))
    {
        return Err(EvalError::Score {
            index,
            score: d.score,
        });
    }
    if gts.iter().all(|g| g.ignore) {
        return Err(EvalError::EmptyGroundTruth);
    }
    Ok(())
}

/// Per-detection TP flags with matching done image by image.
fn label_all(dets: &[Detection], gts: &[GroundTruth], threshold: f64) -> Vec<bool> {
    let mut by_image: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        by_image.entry(&d.image_id).or_default().0.push(i);
    }
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(&g.image_id).or_default().1.push(i);
    }
    let mut tp = vec![false; dets.len()];
    for (di, gi) in by_image.values() {
        let d: Vec<Detection> = di.iter().map(|&i| dets[i].clone()).collect();
        let g: Vec<GroundTruth> = gi.iter().map(|&i| gts[i].clone()).collect();
        let m = match_detections(&d, &g, threshold);
        for (local, &global) in di.iter().enumerate() {
            tp[global] = m.is_tp(local);
        }
    }
    tp
}

pub fn map_at(
    dets: &[Detection],
    gts: &[GroundTruth],
    threshold: f64,
    mode: Interpolation,
) -> Result<EvalReport> {
    check_inputs(dets, gts, threshold)?;
    let tp = label_all(dets, gts, threshold);
    let order = rank_order(dets);
    let classes: BTreeSet<usize> = gts
        .iter()
        .filter(|g| !g.ignore)
        .map(|g| g.class_id)
        .collect();
    let mut reports = Vec::with_capacity(classes.len());
    for &c in &classes {
        let num_gt = gts.iter().filter(|g| !g.ignore && g.class_id == c).count();
        let labels: Vec<bool> = order
            .iter()
            .filter(|&&i| dets[i].class_id == c)
            .map(|&i| tp[i])
            .collect();
        let hits = labels.iter().filter(|&&t| t).count();
        let (precision, recall) = precision_recall(hits, labels.len() - hits, num_gt - hits);
        let mut running = 0usize;
        let pr_curve = labels
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                running += usize::from(t);
                (
                    running as f64 / num_gt as f64,
                    running as f64 / (i + 1) as f64,
                )
            })
            .collect();
        reports.push(ClassReport {
            class_id: c,
            num_gt,
            num_det: labels.len(),
            tp: hits,
            fp: labels.len() - hits,
            fn_: num_gt - hits,
            precision,
            recall,
            ap: average_precision(&labels, num_gt, mode)?,
            pr_curve,
        });
    }
    let total_tp = tp.iter().filter(|&&t| t).count();
    let total_gt = gts.iter().filter(|g| !g.ignore).count();
    let (precision, recall) =
        precision_recall(total_tp, dets.len() - total_tp, total_gt - total_tp);
    let ap_sum: f64 = reports.iter().map(|r| r.ap).sum();
    Ok(EvalReport {
        iou_threshold: threshold,
        interpolation: mode,
        map: ap_sum / reports.len() as f64,
        classes: reports,
        precision,
        recall,
        tp: total_tp,
        fp: dets.len() - total_tp,
        fn_: total_gt - total_tp,
    })
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn range_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Mean of [`map_at`] over [`range_thresholds`].
pub fn map_range(dets: &[Detection], gts: &[GroundTruth], mode: Interpolation) -> Result<f64> {
    let mut sum = 0.0;
    for t in range_thresholds() {
        sum += map_at(dets, gts, t, mode)?.map;
    }
    Ok(sum / 10.0)
}

/// Counts indexed `[true][predicted]`; the last row and column stand for
/// background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<usize>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn background(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, true_class: Option<usize>, predicted: Option<usize>) -> Option<u64> {
        let idx = |c: Option<usize>| match c {
            None => Some(self.background()),
            Some(c) => self.classes.iter().position(|&x| x == c),
        };
        Some(self.counts[idx(true_class)?][idx(predicted)?])
    }

    pub fn row_sum(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    pub fn col_sum(&self, col: usize) -> u64 {
        self.counts.iter().map(|r| r[col]).sum()
    }
}

/// Confusion matrix over `classes`. Detections below `score_threshold` are
/// dropped. Same-class matches fill the diagonal; remaining detections may
/// then match a remaining ground truth of another class (true row,
/// predicted column). Leftover ground truths go to the background column,
/// leftover detections to the background row.
pub fn confusion_matrix(
    dets: &[Detection],
    gts: &[GroundTruth],
    classes: &[usize],
    iou_threshold: f64,
    score_threshold: f64,
) -> Result<ConfusionMatrix> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(EvalError::Threshold(iou_threshold));
    }
    let index = |c: usize| {
        classes
            .iter()
            .position(|&x| x == c)
            .ok_or(EvalError::UnknownClass(c))
    };
    for c in dets
        .iter()
        .map(|d| d.class_id)
        .chain(gts.iter().filter(|g| !g.ignore).map(|g| g.class_id))
    {
        index(c)?;
    }
    let n = classes.len();
    let mut counts = vec![vec![0u64; n + 1]; n + 1];
    let mut images: BTreeSet<&str> = dets.iter().map(|d| d.image_id.as_str()).collect();
    images.extend(gts.iter().map(|g| g.image_id.as_str()));
    for img in images {
        let d: Vec<Detection> = dets
            .iter()
            .filter(|d| d.image_id == img && d.score >= score_threshold)
            .cloned()
            .collect();
        let g: Vec<GroundTruth> = gts
            .iter()
            .filter(|g| g.image_id == img && !g.ignore)
            .cloned()
            .collect();
        let mut m = match_detections(&d, &g, iou_threshold);
        greedy(&d, &g, iou_threshold, |_, _| true, &mut m);
        for (di, det) in d.iter().enumerate() {
            let col = index(det.class_id)?;
            let row = match m.det_match[di] {
                Some(gi) => index(g[gi].class_id)?,
                None => n,
            };
            counts[row][col] += 1;
        }
        for (gi, gt) in g.iter().enumerate() {
            if m.gt_match[gi].is_none() {
                counts[index(gt.class_id)?][n] += 1;
            }
        }
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> Bbox {
        Bbox::new(x1, y1, x2, y2)
    }

    #[test]
    fn below_threshold_is_fp() {
        let gts = [GroundTruth::new("a", 1, b(0., 0., 10., 10.))];
        let dets = [Detection::new("a", 1, b(0., 0., 10., 4.), 0.9)];
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(m.det_match, [None]);
        assert_eq!(m.gt_match, [None]);
    }

    #[test]
    fn duplicate_detection_is_fp() {
        let gts = [GroundTruth::new("a", 1, b(0., 0., 10., 10.))];
        let dets = [
            Detection::new("a", 1, b(0., 0., 10., 10.), 0.3),
            Detection::new("a", 1, b(0., 0., 10., 9.), 0.8),
        ];
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(m.det_match, [None, Some(0)]);
    }

    #[test]
    fn class_must_agree() {
        let gts = [GroundTruth::new("a", 1, b(0., 0., 10., 10.))];
        let dets = [Detection::new("a", 2, b(0., 0., 10., 10.), 0.9)];
        assert_eq!(match_detections(&dets, &gts, 0.5).true_positives(), 0);
    }

    #[test]
    fn precision_recall_examples() {
        assert_eq!(precision_recall(8, 2, 0).0, 0.8);
        assert_eq!(precision_recall(0, 0, 0), (0.0, 0.0));
        assert_eq!(precision_recall(3, 0, 1).1, 0.75);
    }

    #[test]
    fn ap_examples() {
        let all = Interpolation::AllPoint;
        assert_eq!(average_precision(&[true], 1, all).unwrap(), 1.0);
        let ap = average_precision(&[true, false, true], 2, all).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&[false, false], 3, all).unwrap(), 0.0);
        assert_eq!(average_precision(&[], 1, all).unwrap(), 0.0);
        assert_eq!(
            average_precision(&[true], 0, all),
            Err(EvalError::NoPositives)
        );
    }

    #[test]
    fn ap_101_point() {
        let p = Interpolation::Points101;
        assert!((average_precision(&[true], 1, p).unwrap() - 1.0).abs() < 1e-15);
        // Recall 0.5 at precision 1 covers t = 0..=50; recall 1 at 2/3 covers 51..=100.
        let ap = average_precision(&[true, false, true], 2, p).unwrap();
        assert!((ap - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_scene() {
        let gts = vec![
            GroundTruth::new("a", 1, b(0., 0., 10., 10.)),
            GroundTruth::new("b", 1, b(5., 5., 9., 9.)),
        ];
        let dets: Vec<_> = gts
            .iter()
            .map(|g| Detection::new(g.image_id.clone(), 1, g.bbox, 0.7))
            .collect();
        for t in range_thresholds() {
            assert_eq!(
                map_at(&dets, &gts, t, Interpolation::AllPoint).unwrap().map,
                1.0
            );
        }
        assert_eq!(
            map_range(&dets, &gts, Interpolation::AllPoint).unwrap(),
            1.0
        );
    }

    #[test]
    fn two_class_mean() {
        let gts = vec![
            GroundTruth::new("a", 1, b(0., 0., 10., 10.)),
            GroundTruth::new("a", 2, b(20., 20., 30., 30.)),
        ];
        let dets = vec![Detection::new("a", 1, b(0., 0., 10., 10.), 0.9)];
        let r = map_at(&dets, &gts, 0.5, Interpolation::AllPoint).unwrap();
        assert_eq!(r.map, 0.5);
        assert_eq!(r.classes.len(), 2);
    }

    #[test]
    fn ignored_ground_truth_is_invisible() {
        let gts = vec![
            GroundTruth::new("a", 1, b(0., 0., 10., 10.)),
            GroundTruth::new("a", 1, b(20., 20., 30., 30.)).ignored(),
        ];
        let dets = vec![Detection::new("a", 1, b(0., 0., 10., 10.), 0.9)];
        let r = map_at(&dets, &gts, 0.5, Interpolation::AllPoint).unwrap();
        assert_eq!((r.tp, r.fn_, r.map), (1, 0, 1.0));
    }

    #[test]
    fn input_errors() {
        let gts = vec![GroundTruth::new("a", 1, b(0., 0., 1., 1.))];
        assert_eq!(
            map_at(&[], &[], 0.5, Interpolation::AllPoint),
            Err(EvalError::EmptyGroundTruth)
        );
        assert_eq!(
            map_at(&[], &gts, 1.0, Interpolation::AllPoint),
            Err(EvalError::Threshold(1.0))
        );
        let bad = vec![Detection::new("a", 1, b(0., 0., 1., 1.), 1.5)];
        assert!(matches!(
            map_at(&bad, &gts, 0.5, Interpolation::AllPoint),
            Err(EvalError::Score { .. })
        ));
    }

    #[test]
    fn confusion_cells() {
        let gts = vec![
            GroundTruth::new("a", 1, b(0., 0., 10., 10.)),
            GroundTruth::new("a", 2, b(20., 20., 30., 30.)),
            GroundTruth::new("a", 2, b(40., 40., 50., 50.)),
        ];
        let dets = vec![
            Detection::new("a", 1, b(0., 0., 10., 10.), 0.9),
            Detection::new("a", 1, b(20., 20., 30., 29.), 0.8),
            Detection::new("a", 2, b(70., 70., 80., 80.), 0.7),
            Detection::new("a", 2, b(40., 40., 50., 50.), 0.1),
        ];
        let cm = confusion_matrix(&dets, &gts, &[1, 2], 0.5, 0.25).unwrap();
        assert_eq!(cm.get(Some(1), Some(1)), Some(1));
        assert_eq!(cm.get(Some(2), Some(1)), Some(1));
        assert_eq!(cm.get(None, Some(2)), Some(1));
        assert_eq!(cm.get(Some(2), None), Some(1));
        // Rows reconcile to ground-truth counts, columns to kept detections.
        assert_eq!(cm.row_sum(0), 1);
        assert_eq!(cm.row_sum(1), 2);
        assert_eq!(cm.col_sum(0) + cm.col_sum(1), 3);
        assert_eq!(
            confusion_matrix(&dets, &gts, &[1], 0.5, 0.25),
            Err(EvalError::UnknownClass(2))
        );
    }
}
