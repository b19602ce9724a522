//! Weak-supervision label generation from registered, semantically painted
//! lidar: dense static layouts, fitted lane boundaries, and assembled lane
//! instances with ego-relative ids.

mod boundary;
mod dbscan;
mod lanes;
mod pipeline;

pub use boundary::{fit_boundary, road_boundary};
pub use dbscan::{cluster_boundaries, dbscan_labels};
pub use lanes::{assemble_lanes, LaneAssembly};
pub use pipeline::{
    generate_labels, label_frame, FrameInput, FrameLabel, SequenceInput, WeaksupConfig,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{transform_cloud, CameraIntrinsics, Frame, GeomError, PointCloud, Pose};
use crate::grid::{GridError, GridSpec, LabelGrid, Mask, SemanticClass};

#[derive(Debug, Error, PartialEq)]
pub enum WeaksupError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("cluster forward span {span:.2} m below minimum {min:.2} m")]
    SpanTooShort { span: f64, min: f64 },
    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),
    #[error("grid contains no road cells")]
    NoRoad,
    #[error("no lane pair straddles lateral zero")]
    NoEgoLane,
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Per-point semantics taken from image segmentation. This is a superset of
/// the grid classes: markers and generic obstacles exist at point level but
/// never as cell labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum PointClass {
    Unlabeled = 0,
    Road = 1,
    Sidewalk = 2,
    Crosswalk = 3,
    OtherRoad = 4,
    LaneMarker = 5,
    Vehicle = 6,
    Obstacle = 7,
}

impl PointClass {
    pub fn from_u8(v: u8) -> Option<PointClass> {
        use PointClass::*;
        [Unlabeled, Road, Sidewalk, Crosswalk, OtherRoad, LaneMarker, Vehicle, Obstacle]
            .get(v as usize)
            .copied()
    }

    /// Classes that vote in static accumulation.
    pub fn is_static_votable(&self) -> bool {
        matches!(
            self,
            PointClass::Road | PointClass::Sidewalk | PointClass::Crosswalk | PointClass::LaneMarker
        )
    }

    /// Stationary-obstacle classes used by the road-densification step.
    pub fn is_obstacle(&self) -> bool {
        matches!(self, PointClass::Vehicle | PointClass::Obstacle)
    }

    /// Tie priority in majority voting; higher wins.
    fn priority(&self) -> u8 {
        match self {
            PointClass::LaneMarker => 3,
            PointClass::Crosswalk => 2,
            PointClass::Road => 1,
            PointClass::Sidewalk => 0,
            _ => 0,
        }
    }

    /// Grid class a winning vote produces. Markers are paint on the road
    /// surface, so they label the cell as road.
    fn to_cell_class(self) -> SemanticClass {
        match self {
            PointClass::Road | PointClass::LaneMarker => SemanticClass::Road,
            PointClass::Sidewalk => SemanticClass::Sidewalk,
            PointClass::Crosswalk => SemanticClass::Crosswalk,
            PointClass::OtherRoad => SemanticClass::OtherRoad,
            _ => SemanticClass::Free,
        }
    }
}

/// Per-pixel class image produced by a 2D segmentation model.
#[derive(Debug, Clone, PartialEq)]
pub struct SegImage {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<PointClass>,
}

impl SegImage {
    pub fn filled(width: usize, height: usize, class: PointClass) -> SegImage {
        SegImage {
            width,
            height,
            classes: vec![class; width * height],
        }
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> PointClass {
        self.classes[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, class: PointClass) {
        self.classes[v * self.width + u] = class;
    }
}

/// A point cloud with per-point semantics and the index of the frame it
/// came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PaintedCloud {
    pub cloud: PointCloud,
    pub classes: Vec<PointClass>,
    pub source_frame: Vec<u32>,
}

impl PaintedCloud {
    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn with_source_index(mut self, index: u32) -> PaintedCloud {
        self.source_frame.iter_mut().for_each(|s| *s = index);
        self
    }
}

/// Fitted cubic lane boundary: lateral = a0 + a1 z + a2 z^2 + a3 z^3 over a
/// forward domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneBoundary {
    pub coefficients: [f64; 4],
    pub z_range: (f64, f64),
    pub cluster_id: usize,
    pub rms_residual: f64,
}

impl LaneBoundary {
    pub fn lateral_at(&self, z: f64) -> f64 {
        let [a0, a1, a2, a3] = self.coefficients;
        a0 + z * (a1 + z * (a2 + z * a3))
    }
}

/// One side of a lane region.
#[derive(Debug, Clone, PartialEq)]
pub enum LaneBound {
    Curve(LaneBoundary),
    /// Road-edge polyline of (lateral, forward) points ordered by forward.
    RoadEdge(Vec<(f64, f64)>),
}

impl LaneBound {
    pub fn lateral_at(&self, z: f64) -> f64 {
        match self {
            LaneBound::Curve(b) => b.lateral_at(z),
            LaneBound::RoadEdge(poly) => interp_polyline(poly, z),
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        match self {
            LaneBound::Curve(b) => b.z_range,
            LaneBound::RoadEdge(poly) => {
                let lo = poly.first().map(|p| p.1).unwrap_or(0.0);
                let hi = poly.last().map(|p| p.1).unwrap_or(0.0);
                (lo, hi)
            }
        }
    }
}

/// Linear interpolation of lateral over a forward-ordered polyline, clamped
/// at the ends.
fn interp_polyline(poly: &[(f64, f64)], z: f64) -> f64 {
    match poly {
        [] => 0.0,
        [p] => p.0,
        _ => {
            if z <= poly[0].1 {
                return poly[0].0;
            }
            if z >= poly[poly.len() - 1].1 {
                return poly[poly.len() - 1].0;
            }
            for w in poly.windows(2) {
                let (l0, f0) = w[0];
                let (l1, f1) = w[1];
                if z >= f0 && z <= f1 {
                    if f1 == f0 {
                        return l0;
                    }
                    return l0 + (z - f0) / (f1 - f0) * (l1 - l0);
                }
            }
            poly[poly.len() - 1].0
        }
    }
}

/// A lane region with an ego-relative id.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneInstance {
    /// 1 is the ego lane; ids are contiguous from 1.
    pub id: u16,
    /// 0 = ego, negative = left of ego, positive = right. `None` for
    /// instances recovered from id rasters, where the side is unknown.
    pub side: Option<i32>,
    pub left: Option<LaneBound>,
    pub right: Option<LaneBound>,
    pub mask: Mask,
    pub confidence: f64,
}

/// Paint every point with the segmentation class of the pixel it projects
/// to; points behind the camera or outside the frame stay `Unlabeled`.
/// The returned cloud keeps the input's coordinates and frame.
pub fn paint_cloud(
    cloud: &PointCloud,
    seg: &SegImage,
    k: &CameraIntrinsics,
    cam_from_lidar: &Pose,
) -> Result<PaintedCloud, WeaksupError> {
    if seg.width != k.width || seg.height != k.height {
        return Err(WeaksupError::ShapeMismatch(format!(
            "segmentation {}x{} vs intrinsics {}x{}",
            seg.width, seg.height, k.width, k.height
        )));
    }
    k.validate()?;
    let in_camera = transform_cloud(cloud, cam_from_lidar, Frame::Camera)?;
    let classes = in_camera
        .points
        .iter()
        .map(|&p| match crate::geom::project_pinhole(p, k) {
            Some((u, v)) => seg.at(u as usize, v as usize),
            None => PointClass::Unlabeled,
        })
        .collect();
    Ok(PaintedCloud {
        cloud: cloud.clone(),
        classes,
        source_frame: vec![0; cloud.len()],
    })
}

fn registration(frame_pose: &Pose, target: &Pose) -> Pose {
    frame_pose.then(&target.inverse())
}

/// Register all painted frames into the target frame, drop height, and take
/// the per-cell majority vote among static classes. Vehicle and obstacle
/// points do not vote; cells without votes stay `Free`.
pub fn accumulate_static(
    frames: &[(PaintedCloud, Pose)],
    target: &Pose,
    spec: &GridSpec,
) -> Result<LabelGrid, WeaksupError> {
    if frames.is_empty() {
        return Err(WeaksupError::EmptyInput("no frames to accumulate".into()));
    }
    spec.validate()?;
    const VOTABLE: [PointClass; 4] = [
        PointClass::Road,
        PointClass::Sidewalk,
        PointClass::Crosswalk,
        PointClass::LaneMarker,
    ];
    let mut votes = vec![[0u32; 4]; spec.n_cells()];
    for (painted, pose) in frames {
        let reg = registration(pose, target);
        for (p, &class) in painted.cloud.points.iter().zip(painted.classes.iter()) {
            if !class.is_static_votable() {
                continue;
            }
            let q = reg.apply(*p);
            // Flat-plane orthographic drop: x is lateral, z is forward.
            if let Some((row, col)) = spec.cell_of(q.x, q.z) {
                let slot = VOTABLE.iter().position(|&v| v == class).unwrap();
                votes[spec.index(row, col)][slot] += 1;
            }
        }
    }
    let mut grid = LabelGrid::new(*spec);
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            let counts = &votes[spec.index(row, col)];
            let mut winner: Option<PointClass> = None;
            let mut best = 0u32;
            for (slot, &class) in VOTABLE.iter().enumerate() {
                let n = counts[slot];
                if n == 0 {
                    continue;
                }
                let better = match winner {
                    None => true,
                    Some(w) => n > best || (n == best && class.priority() > w.priority()),
                };
                if better {
                    winner = Some(class);
                    best = n;
                }
            }
            if let Some(w) = winner {
                grid.set_cell(row, col, w.to_cell_class(), 0)?;
            }
        }
    }
    Ok(grid)
}

/// Densify the road under parked obstacles: cells covered by obstacle-class
/// points whose 4-neighborhood is majority Road (at least 3 in-grid road
/// neighbors) are relabeled Road. The rule iterates to a fixpoint so that
/// blobs erode from their rim inward.
pub fn fill_stationary_obstacles(
    grid: &LabelGrid,
    frames: &[(PaintedCloud, Pose)],
    target: &Pose,
) -> LabelGrid {
    let spec = *grid.spec();
    let mut covered = Mask::new(spec.rows, spec.cols);
    for (painted, pose) in frames {
        let reg = registration(pose, target);
        for (p, &class) in painted.cloud.points.iter().zip(painted.classes.iter()) {
            if !class.is_obstacle() {
                continue;
            }
            let q = reg.apply(*p);
            if let Some((row, col)) = spec.cell_of(q.x, q.z) {
                covered.set(row, col, true);
            }
        }
    }
    let mut out = grid.clone();
    loop {
        let mut changed = Vec::new();
        for row in 0..spec.rows {
            for col in 0..spec.cols {
                if !covered.get(row, col) {
                    continue;
                }
                let class = out.class_at(row, col);
                if class == SemanticClass::Road || class == SemanticClass::Lane {
                    continue;
                }
                let mut road_neighbors = 0;
                for (dr, dc) in [(-1i32, 0i32), (1, 0), (0, -1), (0, 1)] {
                    let (nr, nc) = (row as i32 + dr, col as i32 + dc);
                    if nr >= 0
                        && nr < spec.rows as i32
                        && nc >= 0
                        && nc < spec.cols as i32
                        && out.class_at(nr as usize, nc as usize) == SemanticClass::Road
                    {
                        road_neighbors += 1;
                    }
                }
                if road_neighbors >= 3 {
                    changed.push((row, col));
                }
            }
        }
        if changed.is_empty() {
            break;
        }
        for (row, col) in changed {
            out.set_cell(row, col, SemanticClass::Road, 0).unwrap();
            covered.set(row, col, false);
        }
    }
    out
}
