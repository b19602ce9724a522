//! End-to-end weak label generation for a frame sequence.

use serde::{Deserialize, Serialize};

use crate::geom::{CameraIntrinsics, PointCloud, Pose};
use crate::grid::{GridSpec, LabelGrid, SemanticClass};
use crate::weaksup::{
    accumulate_static, assemble_lanes, cluster_boundaries, fill_stationary_obstacles,
    fit_boundary, paint_cloud, road_boundary, LaneAssembly, LaneBoundary, LaneInstance,
    PaintedCloud, PointClass, SegImage, WeaksupError,
};

/// Tunables for the weak-supervision pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeaksupConfig {
    /// DBSCAN neighborhood radius in meters.
    pub eps: f64,
    /// DBSCAN core-point threshold (neighbors including self).
    pub min_pts: usize,
    /// Minimum forward span of a cluster to attempt a fit, meters.
    pub min_span: f64,
    /// Forward distance for lateral ordering of bounds, meters.
    pub z_ref: f64,
    /// Minimum lane width at `z_ref`, meters.
    pub min_lane_width: f64,
    /// Ridge weight for rank-deficient fits.
    pub ridge: f64,
    /// Frames whose worst fit residual exceeds this are flagged for review.
    pub residual_flag: f64,
    /// Also treat points with remission at or above this value as marker
    /// evidence (in addition to the marker segmentation class).
    pub marker_remission_threshold: Option<f64>,
    /// Run the stationary-obstacle road densification step.
    pub fill_obstacles: bool,
}

impl Default for WeaksupConfig {
    fn default() -> Self {
        WeaksupConfig {
            eps: 0.5,
            min_pts: 8,
            min_span: 4.0,
            z_ref: 5.0,
            min_lane_width: 2.0,
            ridge: 1e-8,
            residual_flag: 0.5,
            marker_remission_threshold: None,
            fill_obstacles: true,
        }
    }
}

/// One frame of sensor input: a sensor-frame cloud, the world-from-sensor
/// pose, and the frame's segmentation image.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub cloud: PointCloud,
    pub pose: Pose,
    pub seg: SegImage,
}

/// A full sequence plus its calibration.
#[derive(Debug, Clone)]
pub struct SequenceInput {
    pub frames: Vec<FrameInput>,
    pub intrinsics: CameraIntrinsics,
    pub cam_from_lidar: Pose,
}

/// Weak labels for one frame.
#[derive(Debug, Clone)]
pub struct FrameLabel {
    pub grid: LabelGrid,
    pub lanes: Vec<LaneInstance>,
    pub boundaries: Vec<LaneBoundary>,
    /// Worst RMS residual among fitted boundaries, meters.
    pub max_residual: f64,
    /// True when `max_residual` exceeds the review threshold.
    pub flagged: bool,
    /// Clusters that could not be fitted (short span, rank deficiency).
    pub rejected_clusters: usize,
}

/// Generate weak labels for every frame of a sequence.
///
/// Per frame: all painted clouds are registered into that frame, accumulated
/// into a static layout, densified under stationary obstacles, and lane
/// instances are assembled from clustered marker points and the road edges.
/// A failing frame is recorded as an error without aborting the sequence.
pub fn generate_labels(
    input: &SequenceInput,
    spec: &GridSpec,
    config: &WeaksupConfig,
) -> Result<Vec<Result<FrameLabel, WeaksupError>>, WeaksupError> {
    if input.frames.is_empty() {
        return Err(WeaksupError::EmptyInput("sequence has no frames".into()));
    }
    spec.validate()?;

    // Painting is frame-local, so do it once per source frame.
    let mut painted: Vec<(PaintedCloud, Pose)> = Vec::with_capacity(input.frames.len());
    for (i, frame) in input.frames.iter().enumerate() {
        let p = paint_cloud(&frame.cloud, &frame.seg, &input.intrinsics, &input.cam_from_lidar)?
            .with_source_index(i as u32);
        painted.push((p, frame.pose));
    }

    Ok(input
        .frames
        .iter()
        .map(|frame| label_frame(&painted, &frame.pose, spec, config))
        .collect())
}

/// Weak labels for one target frame given the painted sequence. This is
/// the per-frame unit of work; frames are independent, so callers may run
/// it in parallel over targets.
pub fn label_frame(
    painted: &[(PaintedCloud, Pose)],
    target: &Pose,
    spec: &GridSpec,
    config: &WeaksupConfig,
) -> Result<FrameLabel, WeaksupError> {
    let accumulated = accumulate_static(painted, target, spec)?;
    let grid = if config.fill_obstacles {
        fill_stationary_obstacles(&accumulated, painted, target)
    } else {
        accumulated
    };

    // Marker evidence registered into the target frame, clipped to the grid.
    let target_inv = target.inverse();
    let mut marker_points: Vec<(f64, f64)> = Vec::new();
    for (cloud, pose) in painted {
        let reg = pose.then(&target_inv);
        for ((p, &class), &rem) in cloud
            .cloud
            .points
            .iter()
            .zip(cloud.classes.iter())
            .zip(cloud.cloud.remission.iter())
        {
            let is_marker = class == PointClass::LaneMarker
                || (config
                    .marker_remission_threshold
                    .map_or(false, |t| rem >= t && class == PointClass::Road));
            if !is_marker {
                continue;
            }
            let q = reg.apply(*p);
            if spec.cell_of(q.x, q.z).is_some() {
                marker_points.push((q.x, q.z));
            }
        }
    }

    let clusters = cluster_boundaries(&marker_points, config.eps, config.min_pts);
    let mut boundaries = Vec::new();
    let mut rejected = 0usize;
    for (id, cluster) in clusters.iter().enumerate() {
        match fit_boundary(cluster, id, config.min_span, config.ridge) {
            Ok(b) => boundaries.push(b),
            Err(WeaksupError::SpanTooShort { .. }) | Err(WeaksupError::RankDeficient(_)) => {
                rejected += 1;
            }
            Err(e) => return Err(e),
        }
    }

    let road = road_boundary(&grid)?;
    let assembly = LaneAssembly {
        z_ref: config.z_ref,
        min_lane_width: config.min_lane_width,
        sample_step: spec.resolution,
    };
    let lanes = assemble_lanes(
        &boundaries,
        Some((&road.0, &road.1)),
        spec,
        &assembly,
    )?;

    // Rasterize lanes over the static layout, ego last so it wins shared
    // boundary cells.
    let mut grid = grid;
    let mut by_rasterization_order: Vec<&LaneInstance> = lanes.iter().collect();
    by_rasterization_order.sort_by_key(|l| std::cmp::Reverse(l.id));
    for lane in by_rasterization_order {
        for row in 0..spec.rows {
            for col in 0..spec.cols {
                if lane.mask.get(row, col) {
                    grid.set_cell(row, col, SemanticClass::Lane, lane.id)?;
                }
            }
        }
    }
    grid.validate()?;

    let max_residual = boundaries
        .iter()
        .map(|b| b.rms_residual)
        .fold(0.0f64, f64::max);
    Ok(FrameLabel {
        grid,
        lanes,
        boundaries,
        max_residual,
        flagged: max_residual > config.residual_flag,
        rejected_clusters: rejected,
    })
}
