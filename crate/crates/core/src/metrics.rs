//! Evaluation protocol: per-class IoU and AP over BEV grids, occluded IoU,
//! ego-lane metrics, and instance-level lane detection AP/Recall at IoU
//! thresholds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{ConfidenceGrid, LabelGrid, Mask, SemanticClass};
use crate::weaksup::LaneInstance;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ground truth is empty; average precision undefined")]
    EmptyGroundTruth,
    #[error("occlusion mask is empty; occluded IoU undefined")]
    NoOccludedCells,
    #[error("no ground-truth instances; detection metrics undefined")]
    NoGroundTruth,
}

/// Intersection over union of two masks. Defined as 1.0 when both are
/// empty.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64, MetricError> {
    if !pred.same_shape(gt) {
        return Err(MetricError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.rows, pred.cols, gt.rows, gt.cols
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (a, b) in pred.as_slice().iter().zip(gt.as_slice().iter()) {
        inter += (a & b) as usize;
        union += (a | b) as usize;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// One point of a precision/recall sweep, tagged with the confidence that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
}

/// Precision/recall curve ordered by the confidence sweep; recall is
/// nondecreasing along the curve.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// All-point (exact) area under the curve.
    pub fn average_precision(&self) -> f64 {
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for p in &self.points {
            ap += (p.recall - prev_recall) * p.precision;
            prev_recall = p.recall;
        }
        ap
    }
}

/// Cell-level precision/recall sweep over descending confidence. Cells with
/// equal confidence form one tie group and are processed as a single block.
pub fn pr_curve_cells(conf: &[f64], gt: &Mask) -> Result<PrCurve, MetricError> {
    if conf.len() != gt.len() {
        return Err(MetricError::ShapeMismatch(format!(
            "{} confidences vs {} cells",
            conf.len(),
            gt.len()
        )));
    }
    let positives = gt.count();
    if positives == 0 {
        return Err(MetricError::EmptyGroundTruth);
    }
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[b].partial_cmp(&conf[a]).unwrap());

    let mut curve = PrCurve::default();
    let gt_cells = gt.as_slice();
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut i = 0;
    while i < order.len() {
        let value = conf[order[i]];
        let mut j = i;
        while j < order.len() && conf[order[j]] == value {
            tp += gt_cells[order[j]] as usize;
            seen += 1;
            j += 1;
        }
        curve.points.push(PrPoint {
            precision: tp as f64 / seen as f64,
            recall: tp as f64 / positives as f64,
            threshold: value,
        });
        i = j;
    }
    Ok(curve)
}

/// All-point average precision of a per-cell confidence raster against a
/// ground-truth mask.
pub fn average_precision(conf: &[f64], gt: &Mask) -> Result<f64, MetricError> {
    Ok(pr_curve_cells(conf, gt)?.average_precision())
}

/// Binarize a confidence channel at `threshold` and compute IoU against the
/// ground-truth mask of `class`.
pub fn miou_from_confidence(
    conf: &ConfidenceGrid,
    gt: &LabelGrid,
    class: SemanticClass,
    threshold: f64,
) -> Result<f64, MetricError> {
    if conf.spec() != gt.spec() {
        return Err(MetricError::ShapeMismatch("grid specs differ".into()));
    }
    let channel = conf
        .class_channel(class)
        .ok_or_else(|| MetricError::ShapeMismatch(format!("no channel for {}", class.name())))?;
    let pred = binarize(channel, gt.spec().rows, gt.spec().cols, threshold);
    iou(&pred, &gt.binary_mask(class))
}

pub fn binarize(conf: &[f64], rows: usize, cols: usize, threshold: f64) -> Mask {
    Mask::from_fn(rows, cols, |r, c| conf[r * cols + c] >= threshold)
}

/// IoU restricted to cells where the occlusion mask is true.
pub fn occluded_miou(pred: &Mask, gt: &Mask, occlusion: &Mask) -> Result<f64, MetricError> {
    if !pred.same_shape(gt) || !pred.same_shape(occlusion) {
        return Err(MetricError::ShapeMismatch("raster shapes differ".into()));
    }
    if !occlusion.any() {
        return Err(MetricError::NoOccludedCells);
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for i in 0..pred.len() {
        if !occlusion.as_slice()[i] {
            continue;
        }
        let (a, b) = (pred.as_slice()[i], gt.as_slice()[i]);
        inter += (a & b) as usize;
        union += (a | b) as usize;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// One instance per distinct nonzero id in a lane-id raster. Instance
/// confidence is the mean per-cell confidence over its mask when a
/// confidence raster is supplied, else 1.0.
pub fn extract_lane_instances(
    rows: usize,
    cols: usize,
    ids: &[u16],
    conf: Option<&[f64]>,
) -> Vec<LaneInstance> {
    let mut by_id: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, &id) in ids.iter().enumerate() {
        if id != 0 {
            by_id.entry(id).or_default().push(i);
        }
    }
    by_id
        .into_iter()
        .map(|(id, cells)| {
            let mut mask = Mask::new(rows, cols);
            for &i in &cells {
                mask.set(i / cols, i % cols, true);
            }
            let confidence = match conf {
                Some(c) => cells.iter().map(|&i| c[i]).sum::<f64>() / cells.len() as f64,
                None => 1.0,
            };
            LaneInstance {
                id,
                side: None,
                left: None,
                right: None,
                mask,
                confidence,
            }
        })
        .collect()
}

/// Greedy confidence-ordered matching of predicted lane instances against
/// ground truth: each prediction claims the unmatched ground-truth lane of
/// highest mask IoU and counts as a detection when that IoU exceeds the
/// threshold. Returns per-prediction (confidence, is_true_positive) in match
/// order plus the ground-truth count, for pooling across frames.
pub fn lane_match_details(
    preds: &[LaneInstance],
    gts: &[LaneInstance],
    iou_threshold: f64,
) -> Result<(Vec<(f64, bool)>, usize), MetricError> {
    if gts.is_empty() {
        return Err(MetricError::NoGroundTruth);
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.partial_cmp(&preds[a].confidence).unwrap());
    let mut taken = vec![false; gts.len()];
    let mut details = Vec::with_capacity(preds.len());
    for &pi in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let overlap = iou(&preds[pi].mask, &gt.mask)?;
            if best.map_or(true, |(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        let tp = match best {
            Some((gi, overlap)) if overlap > iou_threshold => {
                taken[gi] = true;
                true
            }
            _ => false,
        };
        details.push((preds[pi].confidence, tp));
    }
    Ok((details, gts.len()))
}

/// All-point AP and Recall from pooled (confidence, is_tp) detections.
pub fn detection_pr(details: &[(f64, bool)], gt_count: usize) -> (PrCurve, f64) {
    let mut sorted: Vec<(f64, bool)> = details.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut curve = PrCurve::default();
    let mut tp = 0usize;
    for (i, &(conf, is_tp)) in sorted.iter().enumerate() {
        tp += is_tp as usize;
        curve.points.push(PrPoint {
            precision: tp as f64 / (i + 1) as f64,
            recall: tp as f64 / gt_count as f64,
            threshold: conf,
        });
    }
    let recall = curve.points.last().map_or(0.0, |p| p.recall);
    (curve, recall)
}

/// Instance-level lane detection score at one IoU threshold.
pub fn lane_detection_score(
    preds: &[LaneInstance],
    gts: &[LaneInstance],
    iou_threshold: f64,
) -> Result<(f64, f64), MetricError> {
    let (details, gt_count) = lane_match_details(preds, gts, iou_threshold)?;
    let (curve, recall) = detection_pr(&details, gt_count);
    Ok((curve.average_precision(), recall))
}

/// Evaluation options; thresholds are pinned by the benchmark protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Binarization threshold for confidence channels.
    pub binarize_threshold: f64,
    /// Instance IoU thresholds for lane detection.
    pub lane_iou_thresholds: Vec<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            binarize_threshold: 0.5,
            lane_iou_thresholds: vec![0.5, 0.7],
        }
    }
}

/// Per-frame evaluation intermediates, pooled by [`evaluate_sequence`].
#[derive(Debug, Clone)]
pub struct FrameEval {
    pub class_iou: BTreeMap<SemanticClass, Option<f64>>,
    pub class_ap: BTreeMap<SemanticClass, Option<f64>>,
    pub class_occluded_iou: BTreeMap<SemanticClass, Option<f64>>,
    pub ego_iou: Option<f64>,
    pub ego_ap: Option<f64>,
    pub lane_matches: Vec<(f64, Vec<(f64, bool)>, usize)>,
}

/// Aggregated metrics for one class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub iou: Option<f64>,
    pub ap: Option<f64>,
    pub occluded_iou: Option<f64>,
    pub frames_counted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneDetectionReport {
    pub iou_threshold: f64,
    pub ap: Option<f64>,
    pub recall: Option<f64>,
    pub true_positives: usize,
    pub predictions: usize,
    pub ground_truth_lanes: usize,
}

/// Full evaluation report for a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frame_count: usize,
    pub per_class: BTreeMap<String, ClassReport>,
    pub miou: Option<f64>,
    pub map: Option<f64>,
    pub occluded_miou: Option<f64>,
    pub ego_lane: ClassReport,
    pub lane_detection: Vec<LaneDetectionReport>,
    /// Number of (metric, frame) pairs skipped because the metric was
    /// undefined there (empty ground truth, no occluded cells, ...).
    pub excluded_metrics: usize,
    /// Echo of the configuration that produced the report.
    pub config_echo: Option<String>,
}

/// Evaluate one predicted layout against its ground truth.
///
/// Classes absent from the prediction's channels, or with empty ground
/// truth, are excluded (`None`) rather than scored as zero.
pub fn evaluate_frame(
    pred: &ConfidenceGrid,
    gt: &LabelGrid,
    options: &EvalOptions,
) -> Result<FrameEval, MetricError> {
    if pred.spec() != gt.spec() {
        return Err(MetricError::ShapeMismatch("grid specs differ".into()));
    }
    let spec = gt.spec();
    let occlusion = gt.occlusion_mask();

    let mut class_iou = BTreeMap::new();
    let mut class_ap = BTreeMap::new();
    let mut class_occ = BTreeMap::new();
    for class in SemanticClass::FOREGROUND {
        let gt_mask = gt.binary_mask(class);
        let channel = pred.class_channel(class);
        let (iou_v, ap_v, occ_v) = match channel {
            Some(conf) if gt_mask.any() => {
                let pred_mask = binarize(conf, spec.rows, spec.cols, options.binarize_threshold);
                let iou_v = iou(&pred_mask, &gt_mask)?;
                let ap_v = average_precision(conf, &gt_mask)?;
                let occ_v = match occluded_miou(&pred_mask, &gt_mask, &occlusion) {
                    Ok(v) => {
                        // Exclude when the class is absent inside the
                        // occluded region.
                        let occluded_gt = (0..gt_mask.len()).any(|i| {
                            gt_mask.as_slice()[i] && occlusion.as_slice()[i]
                        });
                        occluded_gt.then_some(v)
                    }
                    Err(MetricError::NoOccludedCells) => None,
                    Err(e) => return Err(e),
                };
                (Some(iou_v), Some(ap_v), occ_v)
            }
            _ => (None, None, None),
        };
        class_iou.insert(class, iou_v);
        class_ap.insert(class, ap_v);
        class_occ.insert(class, occ_v);
    }

    // Ego lane: ground truth id 1 against the prediction's id raster.
    let gt_ego = gt.lane_mask(1);
    let (ego_iou, ego_ap) = if gt_ego.any() {
        let pred_ids = pred.lane_ids();
        let pred_ego = match pred_ids {
            Some(ids) => Mask::from_fn(spec.rows, spec.cols, |r, c| ids[r * spec.cols + c] == 1),
            None => Mask::new(spec.rows, spec.cols),
        };
        let ego_iou = iou(&pred_ego, &gt_ego)?;
        // Confidence for "cell is ego lane": the lane channel masked to the
        // predicted ego cells, falling back to the hard mask.
        let ego_conf: Vec<f64> = match pred.class_channel(SemanticClass::Lane) {
            Some(lane_conf) => (0..gt_ego.len())
                .map(|i| {
                    if pred_ego.as_slice()[i] {
                        lane_conf[i]
                    } else {
                        0.0
                    }
                })
                .collect(),
            None => pred_ego.as_slice().iter().map(|&b| b as u8 as f64).collect(),
        };
        let ego_ap = average_precision(&ego_conf, &gt_ego)?;
        (Some(ego_iou), Some(ego_ap))
    } else {
        (None, None)
    };

    // Instance-level lane detection per threshold.
    let gt_instances = extract_lane_instances(spec.rows, spec.cols, gt.lane_ids(), None);
    let pred_instances = match pred.lane_ids() {
        Some(ids) => extract_lane_instances(
            spec.rows,
            spec.cols,
            ids,
            pred.class_channel(SemanticClass::Lane),
        ),
        None => Vec::new(),
    };
    let mut lane_matches = Vec::new();
    for &thr in &options.lane_iou_thresholds {
        match lane_match_details(&pred_instances, &gt_instances, thr) {
            Ok((details, gt_count)) => lane_matches.push((thr, details, gt_count)),
            Err(MetricError::NoGroundTruth) => lane_matches.push((thr, Vec::new(), 0)),
            Err(e) => return Err(e),
        }
    }

    Ok(FrameEval {
        class_iou,
        class_ap,
        class_occluded_iou: class_occ,
        ego_iou,
        ego_ap,
        lane_matches,
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Aggregate per-frame evaluations: frame-averaged IoUs and APs per class,
/// class-averaged mIoU/mAP, and lane detections pooled over the sequence
/// before the PR sweep.
pub fn aggregate_frames(frames: &[FrameEval], options: &EvalOptions) -> EvalReport {
    let mut excluded = 0usize;
    let mut per_class = BTreeMap::new();
    let mut class_means_iou = Vec::new();
    let mut class_means_ap = Vec::new();
    let mut class_means_occ = Vec::new();
    for class in SemanticClass::FOREGROUND {
        let ious: Vec<f64> = frames.iter().filter_map(|f| f.class_iou[&class]).collect();
        let aps: Vec<f64> = frames.iter().filter_map(|f| f.class_ap[&class]).collect();
        let occs: Vec<f64> = frames
            .iter()
            .filter_map(|f| f.class_occluded_iou[&class])
            .collect();
        excluded += frames.len() - ious.len();
        let report = ClassReport {
            iou: mean(&ious),
            ap: mean(&aps),
            occluded_iou: mean(&occs),
            frames_counted: ious.len(),
        };
        if let Some(v) = report.iou {
            class_means_iou.push(v);
        }
        if let Some(v) = report.ap {
            class_means_ap.push(v);
        }
        if let Some(v) = report.occluded_iou {
            class_means_occ.push(v);
        }
        per_class.insert(class.name().to_string(), report);
    }

    let ego_ious: Vec<f64> = frames.iter().filter_map(|f| f.ego_iou).collect();
    let ego_aps: Vec<f64> = frames.iter().filter_map(|f| f.ego_ap).collect();
    excluded += frames.len() - ego_ious.len();
    let ego_lane = ClassReport {
        iou: mean(&ego_ious),
        ap: mean(&ego_aps),
        occluded_iou: None,
        frames_counted: ego_ious.len(),
    };

    let mut lane_detection = Vec::new();
    for &thr in &options.lane_iou_thresholds {
        let mut pooled: Vec<(f64, bool)> = Vec::new();
        let mut gt_total = 0usize;
        for frame in frames {
            if let Some((_, details, gt_count)) =
                frame.lane_matches.iter().find(|(t, _, _)| *t == thr)
            {
                pooled.extend_from_slice(details);
                gt_total += gt_count;
            }
        }
        let (ap, recall, tp) = if gt_total == 0 {
            excluded += 1;
            (None, None, 0)
        } else {
            let (curve, recall) = detection_pr(&pooled, gt_total);
            let tp = pooled.iter().filter(|&&(_, t)| t).count();
            (Some(curve.average_precision()), Some(recall), tp)
        };
        lane_detection.push(LaneDetectionReport {
            iou_threshold: thr,
            ap,
            recall,
            true_positives: tp,
            predictions: pooled_len(frames, thr),
            ground_truth_lanes: gt_total_for(frames, thr),
        });
    }

    EvalReport {
        frame_count: frames.len(),
        per_class,
        miou: mean(&class_means_iou),
        map: mean(&class_means_ap),
        occluded_miou: mean(&class_means_occ),
        ego_lane,
        lane_detection,
        excluded_metrics: excluded,
        config_echo: None,
    }
}

fn pooled_len(frames: &[FrameEval], thr: f64) -> usize {
    frames
        .iter()
        .filter_map(|f| f.lane_matches.iter().find(|(t, _, _)| *t == thr))
        .map(|(_, d, _)| d.len())
        .sum()
}

fn gt_total_for(frames: &[FrameEval], thr: f64) -> usize {
    frames
        .iter()
        .filter_map(|f| f.lane_matches.iter().find(|(t, _, _)| *t == thr))
        .map(|(_, _, g)| g)
        .sum()
}

/// Evaluate a sequence of (prediction, ground truth) pairs.
pub fn evaluate_sequence(
    pairs: &[(&ConfidenceGrid, &LabelGrid)],
    options: &EvalOptions,
) -> Result<EvalReport, MetricError> {
    let frames = pairs
        .iter()
        .map(|(pred, gt)| evaluate_frame(pred, gt, options))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate_frames(&frames, options))
}
