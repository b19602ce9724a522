//! Rigid transforms, pinhole projection, and point clouds.
//!
//! Camera coordinates follow the KITTI convention: x right, y down,
//! z forward. "Above the camera" is therefore negative y.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in input")]
    NonFinite,
}

/// Which coordinate frame a cloud's points are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Sensor,
    Camera,
    World,
}

const ROTATION_TOL: f64 = 1e-6;

/// Rigid SE(3) transform: `p_out = R * p_in + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Pose, GeomError> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.check(ROTATION_TOL)?;
        Ok(pose)
    }

    pub fn identity() -> Pose {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Construct without the rotation check; for readers that validate or
    /// re-orthonormalize afterwards.
    pub fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Pose {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn translation_only(t: Vector3<f64>) -> Pose {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation about the vertical (y) axis. Positive angles turn the
    /// forward axis toward +x (rightward).
    pub fn yaw(angle: f64, translation: Vector3<f64>) -> Pose {
        let (s, c) = angle.sin_cos();
        let rotation = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        Pose {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Orthonormality and handedness check: RᵀR = I within `tol`, det > 0.
    pub fn check(&self, tol: f64) -> Result<(), GeomError> {
        if !self
            .rotation
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(GeomError::InvalidPose("non-finite entries".into()));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > tol {
            return Err(GeomError::InvalidPose(format!(
                "rotation not orthonormal (|R'R - I| = {dev:.2e})"
            )));
        }
        if self.rotation.determinant() <= 0.0 {
            return Err(GeomError::InvalidPose("rotation determinant <= 0".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Composition: `(a.then(b)).apply(p) == b.apply(a.apply(p))`.
    pub fn then(&self, outer: &Pose) -> Pose {
        Pose {
            rotation: outer.rotation * self.rotation,
            translation: outer.rotation * self.translation + outer.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Project a near-rotation onto SO(3) (nearest rotation by SVD).
    pub fn orthonormalized(&self) -> Result<Pose, GeomError> {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (
            svd.u.ok_or_else(|| GeomError::InvalidPose("svd failed".into()))?,
            svd.v_t
                .ok_or_else(|| GeomError::InvalidPose("svd failed".into()))?,
        );
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            // Flip the axis of least singular value to stay in SO(3).
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Ok(Pose {
            rotation: r,
            translation: self.translation,
        })
    }
}

/// Pinhole camera model without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<CameraIntrinsics, GeomError> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeomError::InvalidIntrinsics("focal lengths must be > 0".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeomError::InvalidIntrinsics("cx outside image".into()));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeomError::InvalidIntrinsics("cy outside image".into()));
        }
        Ok(())
    }
}

/// 3D points with remission in [0, 1] and a frame tag.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub remission: Vec<f64>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn empty(frame: Frame) -> PointCloud {
        PointCloud {
            points: Vec::new(),
            remission: Vec::new(),
            frame,
        }
    }

    pub fn new(
        points: Vec<Vector3<f64>>,
        remission: Vec<f64>,
        frame: Frame,
    ) -> Result<PointCloud, GeomError> {
        if points.len() != remission.len() {
            return Err(GeomError::ShapeMismatch(
                "points and remission lengths differ".into(),
            ));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite()))
            || remission.iter().any(|r| !r.is_finite())
        {
            return Err(GeomError::NonFinite);
        }
        Ok(PointCloud {
            points,
            remission,
            frame,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Vector3<f64>, remission: f64) {
        self.points.push(p);
        self.remission.push(remission);
    }
}

/// Apply a rigid transform to every point; remission is preserved and the
/// frame tag becomes `target`.
pub fn transform_cloud(
    cloud: &PointCloud,
    pose: &Pose,
    target: Frame,
) -> Result<PointCloud, GeomError> {
    pose.check(ROTATION_TOL)?;
    Ok(PointCloud {
        points: cloud.points.iter().map(|&p| pose.apply(p)).collect(),
        remission: cloud.remission.clone(),
        frame: target,
    })
}

/// Project a camera-frame point; `None` if behind the camera or outside the
/// image bounds [0, width) x [0, height).
pub fn project_pinhole(point: Vector3<f64>, k: &CameraIntrinsics) -> Option<(f64, f64)> {
    if point.z <= 0.0 {
        return None;
    }
    let u = k.fx * point.x / point.z + k.cx;
    let v = k.fy * point.y / point.z + k.cy;
    if u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64 {
        Some((u, v))
    } else {
        None
    }
}

/// Dense depth image in meters; values <= 0 mark invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depths: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depths: Vec<f64>) -> Result<DepthMap, GeomError> {
        if depths.len() != width * height {
            return Err(GeomError::ShapeMismatch("depth buffer size".into()));
        }
        Ok(DepthMap {
            width,
            height,
            depths,
        })
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.depths[v * self.width + u]
    }
}

/// 8-bit RGB image used to derive pseudo-lidar remission.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, 3 bytes per pixel.
    pub data: Vec<u8>,
}

impl RgbImage {
    #[inline]
    pub fn at(&self, u: usize, v: usize) -> [u8; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Back-project a depth map to a camera-frame cloud, one point per valid
/// pixel. Remission is mean(r, g, b) / 255 when an RGB image is given,
/// otherwise 1.0.
pub fn backproject_depth(
    depth: &DepthMap,
    k: &CameraIntrinsics,
    rgb: Option<&RgbImage>,
) -> Result<PointCloud, GeomError> {
    k.validate()?;
    if depth.width != k.width || depth.height != k.height {
        return Err(GeomError::ShapeMismatch(
            "depth dimensions do not match intrinsics".into(),
        ));
    }
    if let Some(img) = rgb {
        if img.width != depth.width || img.height != depth.height {
            return Err(GeomError::ShapeMismatch(
                "rgb dimensions do not match depth".into(),
            ));
        }
    }
    let mut cloud = PointCloud::empty(Frame::Camera);
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.at(u, v);
            if !(d > 0.0) || !d.is_finite() {
                continue;
            }
            let x = (u as f64 - k.cx) * d / k.fx;
            let y = (v as f64 - k.cy) * d / k.fy;
            let remission = match rgb {
                Some(img) => {
                    let [r, g, b] = img.at(u, v);
                    (r as f64 + g as f64 + b as f64) / 3.0 / 255.0
                }
                None => 1.0,
            };
            cloud.push(Vector3::new(x, y, d), remission);
        }
    }
    Ok(cloud)
}
