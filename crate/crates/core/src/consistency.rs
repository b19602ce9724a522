//! Temporal scoring of layout sequences: supervised deviation, short-range
//! and long-range cross-frame consistency, and their weighted total.
//!
//! These are the training losses of the temporal layout model, implemented
//! here as diagnostics over predicted sequences; no gradients are involved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Pose;
use crate::grid::{ChannelTag, ConfidenceGrid, LabelGrid, SemanticClass};

#[derive(Debug, Error, PartialEq)]
pub enum ConsistencyError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence of length {len} too short; need at least {need}")]
    SequenceTooShort { len: usize, need: usize },
    #[error("warp requested but the sequence carries no relative poses")]
    MissingPoses,
    #[error("no overlapping cells after pose warp")]
    NoOverlap,
}

/// Probability clamp keeping logarithms finite for hard predictions.
const EPS: f64 = 1e-7;

/// Cross-entropy target: either soft per-class probabilities or hard labels
/// treated as one-hot.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Soft(&'a ConfidenceGrid),
    Hard(&'a LabelGrid),
}

fn hard_value(grid: &LabelGrid, tag: ChannelTag, row: usize, col: usize) -> f64 {
    match tag {
        ChannelTag::Class(class) => (grid.class_at(row, col) == class) as u8 as f64,
        ChannelTag::Occupancy => (grid.class_at(row, col) != SemanticClass::Free) as u8 as f64,
    }
}

/// Mean cross-entropy between a predicted grid and a target.
///
/// Multi-channel grids are scored categorically, mean over cells of
/// -sum_c target_c * ln(pred_c); single-channel grids use the Bernoulli
/// form with both the positive and negative term. Predictions are clamped
/// to [EPS, 1-EPS].
pub fn xent(pred: &ConfidenceGrid, target: Target) -> Result<f64, ConsistencyError> {
    xent_mapped(pred, target, |r, c| Some((r, c)))
}

/// Cross-entropy where each prediction cell reads its target value at a
/// mapped cell; cells mapping to `None` are excluded from the mean.
fn xent_mapped(
    pred: &ConfidenceGrid,
    target: Target,
    map: impl Fn(usize, usize) -> Option<(usize, usize)>,
) -> Result<f64, ConsistencyError> {
    match target {
        Target::Soft(t) => {
            if t.spec() != pred.spec() {
                return Err(ConsistencyError::ShapeMismatch("grid specs differ".into()));
            }
            if t.channels() != pred.channels() {
                return Err(ConsistencyError::ShapeMismatch("channel lists differ".into()));
            }
        }
        Target::Hard(t) => {
            if t.spec() != pred.spec() {
                return Err(ConsistencyError::ShapeMismatch("grid specs differ".into()));
            }
        }
    }
    let spec = *pred.spec();
    let bernoulli = pred.channels().len() == 1;
    let mut sum = 0.0;
    let mut cells = 0usize;
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            let Some((tr, tc)) = map(row, col) else {
                continue;
            };
            cells += 1;
            for (ci, &tag) in pred.channels().iter().enumerate() {
                let p = pred.get(ci, row, col).clamp(EPS, 1.0 - EPS);
                let t = match target {
                    Target::Soft(s) => s.get(ci, tr, tc),
                    Target::Hard(h) => hard_value(h, tag, tr, tc),
                };
                sum -= t * p.ln();
                if bernoulli {
                    sum -= (1.0 - t) * (1.0 - p).ln();
                }
            }
        }
    }
    if cells == 0 {
        return Err(ConsistencyError::NoOverlap);
    }
    Ok(sum / cells as f64)
}

/// One supervised item: predicted static/dynamic layouts with their targets.
#[derive(Clone, Copy)]
pub struct SupPair<'a> {
    pub static_pred: &'a ConfidenceGrid,
    pub static_target: Target<'a>,
    pub dynamic_pred: &'a ConfidenceGrid,
    pub dynamic_target: Target<'a>,
}

/// Supervised deviation: sum over the batch of the static and dynamic
/// cross-entropies.
pub fn sup_loss(batch: &[SupPair]) -> Result<f64, ConsistencyError> {
    let mut total = 0.0;
    for pair in batch {
        total += xent(pair.static_pred, pair.static_target)?;
        total += xent(pair.dynamic_pred, pair.dynamic_target)?;
    }
    Ok(total)
}

/// Predicted static and dynamic layouts for one timestep.
#[derive(Debug, Clone)]
pub struct LayoutFrame {
    pub static_layout: ConfidenceGrid,
    pub dynamic_layout: ConfidenceGrid,
}

/// An ordered layout sequence, optionally with per-step ego motion.
/// `relative_poses[j]` maps frame j+1 coordinates into frame j.
#[derive(Debug, Clone)]
pub struct LayoutSequence {
    pub frames: Vec<LayoutFrame>,
    pub relative_poses: Option<Vec<Pose>>,
}

impl LayoutSequence {
    pub fn new(frames: Vec<LayoutFrame>) -> Result<LayoutSequence, ConsistencyError> {
        let seq = LayoutSequence {
            frames,
            relative_poses: None,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn with_poses(
        frames: Vec<LayoutFrame>,
        relative_poses: Vec<Pose>,
    ) -> Result<LayoutSequence, ConsistencyError> {
        if relative_poses.len() + 1 != frames.len() {
            return Err(ConsistencyError::ShapeMismatch(
                "need one relative pose per adjacent frame pair".into(),
            ));
        }
        let seq = LayoutSequence {
            frames,
            relative_poses: Some(relative_poses),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<(), ConsistencyError> {
        if self.frames.is_empty() {
            return Err(ConsistencyError::SequenceTooShort { len: 0, need: 1 });
        }
        let first = &self.frames[0];
        for f in &self.frames[1..] {
            if f.static_layout.spec() != first.static_layout.spec()
                || f.dynamic_layout.spec() != first.dynamic_layout.spec()
                || f.static_layout.channels() != first.static_layout.channels()
                || f.dynamic_layout.channels() != first.dynamic_layout.channels()
            {
                return Err(ConsistencyError::ShapeMismatch(
                    "all frames must share one grid spec and channel list".into(),
                ));
            }
        }
        Ok(())
    }

    /// Composed pose mapping frame `k` coordinates into frame `j` (j < k).
    fn pose_between(&self, j: usize, k: usize) -> Result<Pose, ConsistencyError> {
        let rel = self
            .relative_poses
            .as_ref()
            .ok_or(ConsistencyError::MissingPoses)?;
        let mut t = Pose::identity();
        for i in (j..k).rev() {
            t = t.then(&rel[i]);
        }
        Ok(t)
    }
}

/// Whether cross-frame terms compare grids as stored or after resampling the
/// later frame into the earlier frame's coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpMode {
    Off,
    PoseWarp,
}

fn cross_frame_xent(
    seq: &LayoutSequence,
    j: usize,
    k: usize,
    warp: WarpMode,
) -> Result<f64, ConsistencyError> {
    let pred = &seq.frames[j];
    let target = &seq.frames[k];
    match warp {
        WarpMode::Off => Ok(xent(
            &pred.static_layout,
            Target::Soft(&target.static_layout),
        )? + xent(
            &pred.dynamic_layout,
            Target::Soft(&target.dynamic_layout),
        )?),
        WarpMode::PoseWarp => {
            // Map each frame-j cell center into frame k; nearest-cell lookup,
            // out-of-extent cells excluded from the mean.
            let into_j = seq.pose_between(j, k)?;
            let into_k = into_j.inverse();
            let spec = *pred.static_layout.spec();
            let map = move |row: usize, col: usize| {
                let (lat, fwd) = spec.cell_center(row, col);
                let q = into_k.apply(nalgebra::Vector3::new(lat, 0.0, fwd));
                spec.cell_of(q.x, q.z)
            };
            Ok(
                xent_mapped(&pred.static_layout, Target::Soft(&target.static_layout), map)?
                    + xent_mapped(
                        &pred.dynamic_layout,
                        Target::Soft(&target.dynamic_layout),
                        map,
                    )?,
            )
        }
    }
}

/// Short-range consistency: adjacent-frame cross-entropies, the later frame
/// acting as the target. Returns the score and the number of frame pairs.
pub fn short_consistency_terms(
    seq: &LayoutSequence,
    warp: WarpMode,
) -> Result<(f64, usize), ConsistencyError> {
    if seq.len() < 2 {
        return Err(ConsistencyError::SequenceTooShort {
            len: seq.len(),
            need: 2,
        });
    }
    seq.validate()?;
    let mut total = 0.0;
    let mut pairs = 0;
    for j in 0..seq.len() - 1 {
        total += cross_frame_xent(seq, j, j + 1, warp)?;
        pairs += 1;
    }
    Ok((total, pairs))
}

pub fn short_consistency(seq: &LayoutSequence, warp: WarpMode) -> Result<f64, ConsistencyError> {
    short_consistency_terms(seq, warp).map(|(v, _)| v)
}

/// Long-range consistency: all frame pairs at least two steps apart.
pub fn long_consistency_terms(
    seq: &LayoutSequence,
    warp: WarpMode,
) -> Result<(f64, usize), ConsistencyError> {
    if seq.len() < 3 {
        return Err(ConsistencyError::SequenceTooShort {
            len: seq.len(),
            need: 3,
        });
    }
    seq.validate()?;
    let mut total = 0.0;
    let mut pairs = 0;
    for j in 0..seq.len() - 1 {
        for k in j + 2..seq.len() {
            total += cross_frame_xent(seq, j, k, warp)?;
            pairs += 1;
        }
    }
    Ok((total, pairs))
}

pub fn long_consistency(seq: &LayoutSequence, warp: WarpMode) -> Result<f64, ConsistencyError> {
    long_consistency_terms(seq, warp).map(|(v, _)| v)
}

/// Weights of the three score components. The intended ordering is
/// lambda_sup > lambda_short >> lambda_long; violations are reported as a
/// warning, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyWeights {
    pub lambda_sup: f64,
    pub lambda_short: f64,
    pub lambda_long: f64,
}

impl Default for ConsistencyWeights {
    fn default() -> Self {
        ConsistencyWeights {
            lambda_sup: 1.0,
            lambda_short: 0.1,
            lambda_long: 0.01,
        }
    }
}

impl ConsistencyWeights {
    /// `Some(warning)` when the expected ordering does not hold.
    pub fn ordering_warning(&self) -> Option<String> {
        if self.lambda_sup > self.lambda_short && self.lambda_short > self.lambda_long {
            None
        } else {
            Some(format!(
                "weights should satisfy sup > short > long, got ({}, {}, {})",
                self.lambda_sup, self.lambda_short, self.lambda_long
            ))
        }
    }
}

/// Weighted total of the three components.
pub fn total_score(sup: f64, short: f64, long: f64, w: &ConsistencyWeights) -> f64 {
    w.lambda_sup * sup + w.lambda_short * short + w.lambda_long * long
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use nalgebra::Vector3;

    fn spec() -> GridSpec {
        GridSpec::new(8, 8, 0.5).unwrap()
    }

    fn single_channel(value: f64) -> ConfidenceGrid {
        let s = spec();
        let mut g = ConfidenceGrid::new(s, vec![ChannelTag::Class(SemanticClass::Vehicle)]);
        for r in 0..s.rows {
            for c in 0..s.cols {
                g.set(0, r, c, value);
            }
        }
        g
    }

    fn label_grid_all(class: SemanticClass) -> LabelGrid {
        let s = spec();
        let mut g = LabelGrid::new(s);
        if class != SemanticClass::Free {
            for r in 0..s.rows {
                for c in 0..s.cols {
                    g.set_cell(r, c, class, 0).unwrap();
                }
            }
        }
        g
    }

    #[test]
    fn one_hot_self_xent_is_tiny() {
        let gt = label_grid_all(SemanticClass::Road);
        let pred = ConfidenceGrid::one_hot(&gt, &SemanticClass::ALL);
        let v = xent(&pred, Target::Hard(&gt)).unwrap();
        assert!(v >= 0.0 && v <= 1e-6, "xent = {v}");
        let v = xent(&pred, Target::Soft(&pred)).unwrap();
        assert!(v <= 1e-6);
    }

    #[test]
    fn bernoulli_half_is_ln_two() {
        let pred = single_channel(0.5);
        let gt = label_grid_all(SemanticClass::Vehicle);
        let v = xent(&pred, Target::Hard(&gt)).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        // Same for a negative target: both Bernoulli terms are symmetric
        // at p = 0.5.
        let gt = label_grid_all(SemanticClass::Free);
        let v = xent(&pred, Target::Hard(&gt)).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn uniform_four_class_is_ln_four() {
        let s = spec();
        let classes = [
            SemanticClass::Free,
            SemanticClass::Road,
            SemanticClass::Vehicle,
            SemanticClass::Lane,
        ];
        let mut pred =
            ConfidenceGrid::new(s, classes.iter().map(|&c| ChannelTag::Class(c)).collect());
        for ci in 0..4 {
            for r in 0..s.rows {
                for c in 0..s.cols {
                    pred.set(ci, r, c, 0.25);
                }
            }
        }
        let gt = label_grid_all(SemanticClass::Road);
        let v = xent(&pred, Target::Hard(&gt)).unwrap();
        assert!((v - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sup_loss_sums_over_batch() {
        let gt_s = label_grid_all(SemanticClass::Road);
        let gt_d = label_grid_all(SemanticClass::Vehicle);
        let pred_s = single_channel(0.7);
        let pred_d = single_channel(0.4);
        let pair = SupPair {
            static_pred: &pred_s,
            static_target: Target::Hard(&gt_s),
            dynamic_pred: &pred_d,
            dynamic_target: Target::Hard(&gt_d),
        };
        let one = sup_loss(&[pair]).unwrap();
        let two = sup_loss(&[pair, pair]).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);
        // Oracle: direct two-term sum.
        let direct = xent(&pred_s, Target::Hard(&gt_s)).unwrap()
            + xent(&pred_d, Target::Hard(&gt_d)).unwrap();
        assert!((one - direct).abs() < 1e-12);
    }

    fn constant_sequence(len: usize) -> LayoutSequence {
        let gt = label_grid_all(SemanticClass::Road);
        let static_layout = ConfidenceGrid::one_hot(&gt, &SemanticClass::ALL);
        let dynamic_layout = single_channel(1.0);
        LayoutSequence::new(
            (0..len)
                .map(|_| LayoutFrame {
                    static_layout: static_layout.clone(),
                    dynamic_layout: dynamic_layout.clone(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_one_hot_sequences_score_zero() {
        let seq = constant_sequence(4);
        assert!(short_consistency(&seq, WarpMode::Off).unwrap() <= 1e-5);
        assert!(long_consistency(&seq, WarpMode::Off).unwrap() <= 1e-5);
    }

    #[test]
    fn pair_counts_match_index_ranges() {
        for len in 2..=6 {
            let seq = constant_sequence(len);
            let (_, short_pairs) = short_consistency_terms(&seq, WarpMode::Off).unwrap();
            assert_eq!(short_pairs, len - 1);
            if len >= 3 {
                let (_, long_pairs) = long_consistency_terms(&seq, WarpMode::Off).unwrap();
                assert_eq!(long_pairs, (len - 1) * (len - 2) / 2);
            }
        }
        // seqlen 5 pairs enumerate to (1,3),(1,4),(1,5),(2,4),(2,5),(3,5).
        let seq = constant_sequence(5);
        let (_, pairs) = long_consistency_terms(&seq, WarpMode::Off).unwrap();
        assert_eq!(pairs, 6);
    }

    #[test]
    fn too_short_sequences_error() {
        let seq = constant_sequence(1);
        assert!(matches!(
            short_consistency(&seq, WarpMode::Off),
            Err(ConsistencyError::SequenceTooShort { need: 2, .. })
        ));
        let seq = constant_sequence(2);
        assert!(matches!(
            long_consistency(&seq, WarpMode::Off),
            Err(ConsistencyError::SequenceTooShort { need: 3, .. })
        ));
    }

    #[test]
    fn total_score_weighted_sum() {
        let w = ConsistencyWeights::default();
        let v = total_score(2.0, 0.5, 0.3, &w);
        assert!((v - 2.053).abs() < 1e-12);
        assert_eq!(total_score(7.0, 9.0, 11.0, &ConsistencyWeights {
            lambda_sup: 1.0,
            lambda_short: 0.0,
            lambda_long: 0.0,
        }), 7.0);
        assert_eq!(total_score(0.0, 0.0, 0.0, &w), 0.0);
    }

    #[test]
    fn total_score_is_linear_in_components() {
        let w = ConsistencyWeights::default();
        let base = total_score(1.0, 2.0, 3.0, &w);
        let scaled = total_score(2.0, 4.0, 6.0, &w);
        assert!((scaled - 2.0 * base).abs() < 1e-12);
        let a = total_score(1.0, 0.0, 0.0, &w);
        let b = total_score(0.0, 2.0, 0.0, &w);
        let c = total_score(0.0, 0.0, 3.0, &w);
        assert!((a + b + c - base).abs() < 1e-12);
    }

    #[test]
    fn weight_ordering_warning() {
        assert!(ConsistencyWeights::default().ordering_warning().is_none());
        let bad = ConsistencyWeights {
            lambda_sup: 0.1,
            lambda_short: 1.0,
            lambda_long: 0.01,
        };
        assert!(bad.ordering_warning().is_some());
    }

    /// A static world seen from a forward-moving ego: warped comparison is
    /// near zero, unwarped is not.
    #[test]
    fn pose_warp_aligns_moving_ego() {
        let s = spec();
        let band = |ego_forward: f64| {
            let mut gt = LabelGrid::new(s);
            for r in 0..s.rows {
                for c in 0..s.cols {
                    let (_, fwd) = s.cell_center(r, c);
                    let world_fwd = fwd + ego_forward;
                    if (1.0..2.5).contains(&world_fwd) {
                        gt.set_cell(r, c, SemanticClass::Road, 0).unwrap();
                    }
                }
            }
            LayoutFrame {
                static_layout: ConfidenceGrid::one_hot(&gt, &SemanticClass::ALL),
                dynamic_layout: {
                    let mut d = ConfidenceGrid::new(s, vec![ChannelTag::Occupancy]);
                    for r in 0..s.rows {
                        for c in 0..s.cols {
                            let v = (gt.class_at(r, c) != SemanticClass::Free) as u8 as f64;
                            d.set(0, r, c, v);
                        }
                    }
                    d
                },
            }
        };
        // Ego advances 1 m per frame; frame j+1 coordinates map into frame j
        // by adding 1 m of forward distance.
        let frames = vec![band(0.0), band(1.0), band(2.0)];
        let rel = Pose::translation_only(Vector3::new(0.0, 0.0, 1.0));
        let seq = LayoutSequence::with_poses(frames, vec![rel, rel]).unwrap();
        let warped = short_consistency(&seq, WarpMode::PoseWarp).unwrap();
        let raw = short_consistency(&seq, WarpMode::Off).unwrap();
        assert!(warped <= 1e-5, "warped = {warped}");
        assert!(raw > 0.05, "raw = {raw}");
        let warped_long = long_consistency(&seq, WarpMode::PoseWarp).unwrap();
        assert!(warped_long <= 1e-5);
    }

    #[test]
    fn warp_without_poses_is_error() {
        let seq = constant_sequence(3);
        assert_eq!(
            short_consistency(&seq, WarpMode::PoseWarp),
            Err(ConsistencyError::MissingPoses)
        );
    }
}
