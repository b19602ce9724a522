//! Grouping fitted boundaries and road edges into lane instances.

use crate::grid::{polygon_mask, GridSpec};
use crate::weaksup::{LaneBound, LaneBoundary, LaneInstance, WeaksupError};

/// Parameters for lane assembly.
#[derive(Debug, Clone, Copy)]
pub struct LaneAssembly {
    /// Forward distance at which bounds are ordered laterally.
    pub z_ref: f64,
    /// Pairs narrower than this at `z_ref` are not emitted as lanes; this
    /// keeps road-edge shoulders from becoming slivers.
    pub min_lane_width: f64,
    /// Forward sampling step for lane polygons.
    pub sample_step: f64,
}

impl Default for LaneAssembly {
    fn default() -> Self {
        LaneAssembly {
            z_ref: 5.0,
            min_lane_width: 2.0,
            sample_step: 0.15625,
        }
    }
}

/// Sort bounds laterally, pair adjacent ones into lanes, and assign
/// ego-relative sides and ids.
///
/// The lane whose bounds straddle lateral 0 at `z_ref` becomes the ego lane
/// (id 1, side 0); the others get sides ..., -2, -1, +1, +2, ... in lateral
/// order and ids 2..K ordered by |side| then sign (left before right).
/// With no fitted boundaries the result is empty: road edges alone do not
/// make a lane.
pub fn assemble_lanes(
    boundaries: &[LaneBoundary],
    road_bounds: Option<(&[(f64, f64)], &[(f64, f64)])>,
    spec: &GridSpec,
    params: &LaneAssembly,
) -> Result<Vec<LaneInstance>, WeaksupError> {
    if boundaries.is_empty() {
        return Ok(Vec::new());
    }
    let mut bounds: Vec<LaneBound> = boundaries
        .iter()
        .cloned()
        .map(LaneBound::Curve)
        .collect();
    if let Some((left, right)) = road_bounds {
        bounds.push(LaneBound::RoadEdge(left.to_vec()));
        bounds.push(LaneBound::RoadEdge(right.to_vec()));
    }
    bounds.sort_by(|a, b| {
        a.lateral_at(params.z_ref)
            .partial_cmp(&b.lateral_at(params.z_ref))
            .unwrap()
    });

    // Candidate lanes from adjacent pairs with a usable domain and width.
    struct Candidate {
        left: LaneBound,
        right: LaneBound,
        polygon: Vec<(f64, f64)>,
    }
    let mut candidates: Vec<Candidate> = Vec::new();
    for pair in bounds.windows(2) {
        let (left, right) = (&pair[0], &pair[1]);
        let width = right.lateral_at(params.z_ref) - left.lateral_at(params.z_ref);
        if width < params.min_lane_width {
            continue;
        }
        let (l_lo, l_hi) = left.domain();
        let (r_lo, r_hi) = right.domain();
        let (lo, hi) = (l_lo.max(r_lo), l_hi.min(r_hi));
        if hi - lo < params.sample_step * 2.0 {
            continue;
        }
        let steps = ((hi - lo) / params.sample_step).ceil() as usize;
        let mut polygon = Vec::with_capacity(2 * (steps + 1));
        for i in 0..=steps {
            let z = lo + (hi - lo) * i as f64 / steps as f64;
            polygon.push((left.lateral_at(z), z));
        }
        for i in (0..=steps).rev() {
            let z = lo + (hi - lo) * i as f64 / steps as f64;
            polygon.push((right.lateral_at(z), z));
        }
        candidates.push(Candidate {
            left: left.clone(),
            right: right.clone(),
            polygon,
        });
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    let ego_index = candidates.iter().position(|c| {
        c.left.lateral_at(params.z_ref) <= 0.0 && c.right.lateral_at(params.z_ref) > 0.0
    });
    let Some(ego_index) = ego_index else {
        return Err(WeaksupError::NoEgoLane);
    };

    // Sides in lateral order, then ids 2..K by |side| then sign.
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| {
        let side = i as i32 - ego_index as i32;
        (side.abs(), side)
    });
    let mut lanes = Vec::with_capacity(candidates.len());
    for (rank, &i) in order.iter().enumerate() {
        let side = i as i32 - ego_index as i32;
        let id = if side == 0 { 1 } else { rank as u16 + 1 };
        let c = &candidates[i];
        let mask = polygon_mask(spec, &c.polygon)?;
        lanes.push(LaneInstance {
            id,
            side: Some(side),
            left: Some(c.left.clone()),
            right: Some(c.right.clone()),
            mask,
            confidence: 1.0,
        });
    }
    lanes.sort_by_key(|l| l.id);
    Ok(lanes)
}
