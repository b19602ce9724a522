//! Parametric synthetic road scenes: analytic ground-truth grids, simulated
//! lidar with painted-strip remission, per-frame poses, ray-cast occlusion
//! masks, rendered segmentation images, and noised predictions.
//!
//! Every stochastic choice is driven by the scene seed, so identical
//! parameters produce bit-identical output.

use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CameraIntrinsics, Frame, PointCloud, Pose};
use crate::grid::{ChannelTag, ConfidenceGrid, GridSpec, LabelGrid, Mask, SemanticClass};
use crate::weaksup::{PointClass, SegImage};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),
}

/// An oriented vehicle footprint in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleRect {
    /// World (x, z) of the footprint center.
    pub center: (f64, f64),
    /// Yaw in radians; 0 faces along +z.
    pub heading: f64,
    /// Lateral extent, meters.
    pub width: f64,
    /// Forward extent, meters.
    pub length: f64,
}

impl VehicleRect {
    /// Point in the rectangle's local frame.
    fn to_local(&self, x: f64, z: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let (dx, dz) = (x - self.center.0, z - self.center.1);
        (c * dx - s * dz, s * dx + c * dz)
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        let (lx, lz) = self.to_local(x, z);
        lx.abs() <= self.width / 2.0 && lz.abs() <= self.length / 2.0
    }

    /// Parametric entry/exit of the segment a + t(b - a), t in [0, 1],
    /// through the rectangle (slab test in the local frame).
    pub fn segment_span(&self, a: (f64, f64), b: (f64, f64)) -> Option<(f64, f64)> {
        let (ax, az) = self.to_local(a.0, a.1);
        let (bx, bz) = self.to_local(b.0, b.1);
        let (dx, dz) = (bx - ax, bz - az);
        let mut t_in = 0.0f64;
        let mut t_out = 1.0f64;
        for (origin, dir, half) in [(ax, dx, self.width / 2.0), (az, dz, self.length / 2.0)] {
            if dir.abs() < 1e-15 {
                if origin.abs() > half {
                    return None;
                }
                continue;
            }
            let mut t0 = (-half - origin) / dir;
            let mut t1 = (half - origin) / dir;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_in = t_in.max(t0);
            t_out = t_out.min(t1);
            if t_in > t_out {
                return None;
            }
        }
        Some((t_in, t_out))
    }
}

/// Scene description. The road centerline drifts laterally as a cubic in
/// world forward distance; lanes are parallel offsets of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub grid: GridSpec,
    pub lane_count: usize,
    pub lane_width: f64,
    /// Cubic centerline drift: lateral = d0 + d1 z + d2 z^2 + d3 z^3.
    pub drift: [f64; 4],
    /// Which lane (0-based, left to right) the ego starts in.
    pub ego_lane_index: usize,
    /// Road shoulder width outside the outer boundaries, meters.
    pub margin: f64,
    pub sidewalk_width: f64,
    /// Painted marker strip width, meters.
    pub marker_width: f64,
    pub vehicles: Vec<VehicleRect>,
    pub vehicle_height: f64,
    pub frames: usize,
    /// Ego advance per frame along world forward, meters.
    pub speed: f64,
    /// Simulated lidar ground returns per square meter.
    pub point_density: f64,
    /// Gaussian noise added to each point coordinate, meters.
    pub noise_sigma: f64,
    pub camera: CameraIntrinsics,
    /// Camera height above the ground plane, meters.
    pub camera_height: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            grid: GridSpec::default(),
            lane_count: 3,
            lane_width: 3.5,
            drift: [0.0; 4],
            ego_lane_index: 1,
            margin: 1.0,
            sidewalk_width: 2.0,
            marker_width: 0.15,
            vehicles: Vec::new(),
            vehicle_height: 1.5,
            frames: 4,
            speed: 2.0,
            point_density: 80.0,
            noise_sigma: 0.0,
            camera: CameraIntrinsics {
                fx: 300.0,
                fy: 300.0,
                cx: 320.0,
                cy: 240.0,
                width: 640,
                height: 480,
            },
            camera_height: 1.65,
            seed: 0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: &str| Err(SynthError::InvalidParams(msg.into()));
        if self.grid.validate().is_err() {
            return fail("grid");
        }
        if self.lane_count == 0 {
            return fail("lane_count must be >= 1");
        }
        if !(self.lane_width > 0.0) {
            return fail("lane_width must be > 0");
        }
        if self.ego_lane_index >= self.lane_count {
            return fail("ego_lane_index out of range");
        }
        if self.frames == 0 {
            return fail("frames must be >= 1");
        }
        if !(self.point_density > 0.0) {
            return fail("point_density must be > 0");
        }
        if self.margin < 0.0 || self.sidewalk_width < 0.0 || self.noise_sigma < 0.0 {
            return fail("margin, sidewalk_width and noise_sigma must be >= 0");
        }
        if !(self.marker_width > 0.0 && self.marker_width < self.lane_width) {
            return fail("marker_width must be positive and below lane_width");
        }
        if !(self.camera_height > 0.0) {
            return fail("camera_height must be > 0");
        }
        if self.camera.validate().is_err() {
            return fail("camera");
        }
        Ok(())
    }

    pub fn drift_at(&self, z: f64) -> f64 {
        let [d0, d1, d2, d3] = self.drift;
        d0 + z * (d1 + z * (d2 + z * d3))
    }

    pub fn drift_slope_at(&self, z: f64) -> f64 {
        let [_, d1, d2, d3] = self.drift;
        d1 + 2.0 * d2 * z + 3.0 * d3 * z * z
    }

    /// Lateral offset of boundary `j` (0..=lane_count) from the centerline.
    pub fn boundary_offset(&self, j: usize) -> f64 {
        (j as f64 - self.ego_lane_index as f64 - 0.5) * self.lane_width
    }

    /// World lateral position of boundary `j` at world forward `z`.
    pub fn boundary_lateral(&self, j: usize, z: f64) -> f64 {
        self.drift_at(z) + self.boundary_offset(j)
    }

    /// World-from-ego pose at a frame: the ego follows its lane centerline
    /// with the heading tangent to the drift.
    pub fn ego_pose(&self, frame: usize) -> Pose {
        let z = frame as f64 * self.speed;
        let heading = self.drift_slope_at(z).atan();
        Pose::yaw(heading, Vector3::new(self.drift_at(z), 0.0, z))
    }

    /// Ground-truth lane ids indexed by lane (0..lane_count): ego lane gets
    /// 1, the rest are ordered by |side| then sign (left before right).
    pub fn lane_id_map(&self) -> Vec<u16> {
        let mut lanes: Vec<usize> = (0..self.lane_count).collect();
        lanes.sort_by_key(|&j| {
            let side = j as i32 - self.ego_lane_index as i32;
            (side.abs(), side)
        });
        let mut ids = vec![0u16; self.lane_count];
        for (rank, &j) in lanes.iter().enumerate() {
            ids[j] = rank as u16 + 1;
        }
        ids
    }

    /// Static world class at a world ground point, ignoring vehicles.
    /// Returns the grid class and the lane id (0 when not a lane).
    fn classify_static(&self, x: f64, z: f64) -> (SemanticClass, u16) {
        let rel = x - self.drift_at(z);
        let lo = self.boundary_offset(0);
        let hi = self.boundary_offset(self.lane_count);
        if rel >= lo && rel < hi {
            let lane = ((rel - lo) / self.lane_width) as usize;
            let lane = lane.min(self.lane_count - 1);
            return (SemanticClass::Lane, self.lane_id_map()[lane]);
        }
        if rel >= lo - self.margin && rel < hi + self.margin {
            return (SemanticClass::Road, 0);
        }
        if rel >= lo - self.margin - self.sidewalk_width && rel < hi + self.margin + self.sidewalk_width
        {
            return (SemanticClass::Sidewalk, 0);
        }
        (SemanticClass::Free, 0)
    }

    fn on_marker(&self, x: f64, z: f64) -> bool {
        let rel = x - self.drift_at(z);
        (0..=self.lane_count)
            .any(|j| (rel - self.boundary_offset(j)).abs() <= self.marker_width / 2.0)
    }

    fn point_class(&self, x: f64, z: f64) -> PointClass {
        if self.vehicles.iter().any(|v| v.contains(x, z)) {
            return PointClass::Vehicle;
        }
        if self.on_marker(x, z) {
            return PointClass::LaneMarker;
        }
        match self.classify_static(x, z).0 {
            SemanticClass::Lane | SemanticClass::Road => PointClass::Road,
            SemanticClass::Sidewalk => PointClass::Sidewalk,
            _ => PointClass::Unlabeled,
        }
    }
}

/// Everything generated for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    /// Analytic labels with the occlusion layer filled in.
    pub ground_truth: LabelGrid,
    /// Simulated lidar in the ego/sensor frame.
    pub cloud: PointCloud,
    /// World-from-sensor pose.
    pub pose: Pose,
    pub occlusion: Mask,
    /// Analytic segmentation image rendered from the same geometry.
    pub seg: SegImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frames: Vec<SceneFrame>,
    pub intrinsics: CameraIntrinsics,
    /// Lidar and camera are co-located in the simulator.
    pub cam_from_lidar: Pose,
}

/// Generate the full scene for every frame.
pub fn generate_scene(params: &SceneParams) -> Result<Scene, SynthError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let frames = (0..params.frames)
        .map(|f| generate_frame(params, f, &mut rng))
        .collect();
    Ok(Scene {
        frames,
        intrinsics: params.camera,
        cam_from_lidar: Pose::identity(),
    })
}

fn generate_frame(params: &SceneParams, frame: usize, rng: &mut ChaCha8Rng) -> SceneFrame {
    let pose = params.ego_pose(frame);
    let spec = params.grid;
    let ego_world = (pose.translation().x, pose.translation().z);

    // Ground truth: classify each cell center in world coordinates; vehicles
    // overwrite the static world.
    let mut gt = LabelGrid::new(spec);
    let mut occlusion = Mask::new(spec.rows, spec.cols);
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            let (lat, fwd) = spec.cell_center(row, col);
            let w = pose.apply(Vector3::new(lat, 0.0, fwd));
            let cell = if params.vehicles.iter().any(|v| v.contains(w.x, w.z)) {
                (SemanticClass::Vehicle, 0)
            } else {
                params.classify_static(w.x, w.z)
            };
            gt.set_cell(row, col, cell.0, cell.1).unwrap();
            if occluded_by_any(params, ego_world, (w.x, w.z)) {
                occlusion.set(row, col, true);
                gt.set_occluded(row, col, true);
            }
        }
    }

    let cloud = simulate_lidar(params, &pose, rng);
    let seg = render_segmentation(params, &pose);
    SceneFrame {
        ground_truth: gt,
        cloud,
        pose,
        occlusion,
        seg,
    }
}

/// A cell is occluded when the 2D ray from the ego to its center enters a
/// vehicle rectangle before reaching the center.
fn occluded_by_any(params: &SceneParams, ego: (f64, f64), target: (f64, f64)) -> bool {
    params.vehicles.iter().any(|v| {
        v.segment_span(ego, target)
            .map_or(false, |(t_in, _)| t_in < 1.0)
    })
}

fn simulate_lidar(params: &SceneParams, pose: &Pose, rng: &mut ChaCha8Rng) -> PointCloud {
    let spec = params.grid;
    let half = spec.lateral_half_extent();
    let fwd_max = spec.forward_extent();
    let h = params.camera_height;
    let mut cloud = PointCloud::empty(Frame::Sensor);

    let draws = (params.point_density * 2.0 * half * fwd_max).round() as usize;
    for _ in 0..draws {
        let lat = rng.gen_range(-half..half);
        let fwd = rng.gen_range(0.0..fwd_max);
        let w = pose.apply(Vector3::new(lat, 0.0, fwd));
        // No ground return under a vehicle.
        if params.vehicles.iter().any(|v| v.contains(w.x, w.z)) {
            continue;
        }
        let class = params.point_class(w.x, w.z);
        let remission = match class {
            PointClass::LaneMarker => rng.gen_range(0.85..0.95),
            PointClass::Road => rng.gen_range(0.05..0.25),
            PointClass::Sidewalk => rng.gen_range(0.10..0.30),
            _ => continue, // off-surface ground gives no usable return
        };
        let noise = params.noise_sigma;
        let jitter = |rng: &mut ChaCha8Rng| -> f64 {
            if noise > 0.0 {
                // Box-Muller keeps the draw count per point fixed.
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * noise
            } else {
                0.0
            }
        };
        let p = Vector3::new(lat + jitter(rng), h + jitter(rng), fwd + jitter(rng));
        cloud.push(p, remission);
    }

    // Vehicle shells: perimeter points at sampled heights.
    let ego_from_world = pose.inverse();
    for rect in &params.vehicles {
        let (s, c) = rect.heading.sin_cos();
        let perimeter = 2.0 * (rect.width + rect.length);
        let n = (perimeter / 0.08).ceil() as usize;
        for i in 0..n {
            let d = perimeter * i as f64 / n as f64;
            let (lx, lz) = perimeter_point(rect.width, rect.length, d);
            let wx = rect.center.0 + c * lx + s * lz;
            let wz = rect.center.1 - s * lx + c * lz;
            let y = h - rng.gen_range(0.0..params.vehicle_height);
            let p = ego_from_world.apply(Vector3::new(wx, y, wz));
            // Keep only returns inside the frame's swath.
            if p.z >= 0.0 && p.z < fwd_max && p.x.abs() < half {
                cloud.push(p, rng.gen_range(0.3..0.6));
            }
        }
    }
    cloud
}

/// Point at arc distance `d` along the perimeter of a width x length
/// rectangle centered at the origin.
fn perimeter_point(width: f64, length: f64, d: f64) -> (f64, f64) {
    let (hw, hl) = (width / 2.0, length / 2.0);
    let mut d = d;
    if d < width {
        return (-hw + d, -hl);
    }
    d -= width;
    if d < length {
        return (hw, -hl + d);
    }
    d -= length;
    if d < width {
        return (hw - d, hl);
    }
    d -= width;
    (-hw, hl - d)
}

/// Render the analytic segmentation: each pixel's ground ray is classified
/// in world space, with vehicle bodies blocking rays whose height at the
/// crossing lies within the vehicle.
fn render_segmentation(params: &SceneParams, pose: &Pose) -> SegImage {
    let k = params.camera;
    let h = params.camera_height;
    let mut seg = SegImage::filled(k.width, k.height, PointClass::Unlabeled);
    let ego_world = (pose.translation().x, pose.translation().z);
    for v in 0..k.height {
        let dy = (v as f64 + 0.5 - k.cy) / k.fy;
        if dy <= 0.0 {
            continue; // horizon and above
        }
        let zg = h / dy;
        for u in 0..k.width {
            let xg = (u as f64 + 0.5 - k.cx) / k.fx * zg;
            let w = pose.apply(Vector3::new(xg, 0.0, zg));
            let blocked = params.vehicles.iter().any(|rect| {
                match rect.segment_span(ego_world, (w.x, w.z)) {
                    Some((t_in, t_out)) => {
                        let t_reach = t_out.min(1.0);
                        t_in <= t_reach && t_reach * h >= h - params.vehicle_height
                    }
                    None => false,
                }
            });
            let class = if blocked {
                PointClass::Vehicle
            } else {
                params.point_class(w.x, w.z)
            };
            seg.set(u, v, class);
        }
    }
    seg
}

/// Blend the ground truth's one-hot encoding with uniform noise and flip a
/// fraction of cell labels. Returns the confidence grid (lane-id layer
/// attached) and the flipped lane-id raster.
pub fn simulate_prediction(
    gt: &LabelGrid,
    noise_level: f64,
    seed: u64,
) -> (ConfidenceGrid, Vec<u16>) {
    let noise = noise_level.clamp(0.0, 1.0);
    let spec = *gt.spec();
    let classes = SemanticClass::ALL;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conf = ConfidenceGrid::new(
        spec,
        classes.iter().map(|&c| ChannelTag::Class(c)).collect(),
    );
    let mut ids = vec![0u16; spec.n_cells()];
    let uniform = noise / classes.len() as f64;
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            let truth = gt.class_at(row, col);
            let flip: f64 = rng.gen();
            let label = if flip < noise / 2.0 {
                // Uniform among the other classes.
                let mut pick = classes[rng.gen_range(0..classes.len() - 1)];
                if pick == truth {
                    pick = classes[classes.len() - 1];
                }
                pick
            } else {
                truth
            };
            for (ci, &class) in classes.iter().enumerate() {
                let one_hot = (class == label) as u8 as f64;
                conf.set(ci, row, col, (1.0 - noise) * one_hot + uniform);
            }
            if label == SemanticClass::Lane {
                ids[spec.index(row, col)] = gt.lane_id_at(row, col);
            }
        }
    }
    conf.set_normalized(true);
    conf.set_lane_ids(ids.clone()).unwrap();
    (conf, ids)
}
