//! KITTI-style odometry files: one pose per line, 12 whitespace-separated
//! reals forming a row-major 3x4 matrix.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bevbench_core::geom::Pose;
use nalgebra::{Matrix3, Vector3};

use super::DataIoError;

/// Tolerance within which near-rotations are re-orthonormalized instead of
/// rejected.
const ORTHONORMALITY_TOL: f64 = 1e-3;

pub fn load_poses(path: &Path) -> Result<Vec<Pose>, DataIoError> {
    let text = fs::read_to_string(path).map_err(|e| DataIoError::io(path, e))?;
    let p = || path.display().to_string();
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 12 {
            return Err(DataIoError::ParseError {
                path: p(),
                line: line_no,
                message: format!("expected 12 fields, got {}", fields.len()),
            });
        }
        let mut values = [0.0f64; 12];
        for (j, field) in fields.iter().enumerate() {
            values[j] = field.parse().map_err(|_| DataIoError::ParseError {
                path: p(),
                line: line_no,
                message: format!("field {} is not a number: {:?}", j + 1, field),
            })?;
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataIoError::NonFiniteValue { path: p() });
        }
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8],
            values[9], values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        let candidate = match Pose::new(rotation, translation) {
            Ok(pose) => Ok(pose),
            Err(_) => {
                // Within tolerance: project onto the nearest rotation.
                let gram_dev = (rotation.transpose() * rotation - Matrix3::identity())
                    .abs()
                    .max();
                if gram_dev <= ORTHONORMALITY_TOL && rotation.determinant() > 0.0 {
                    raw_pose(rotation, translation).orthonormalized()
                } else {
                    Err(bevbench_core::geom::GeomError::InvalidPose(format!(
                        "|R'R - I| = {gram_dev:.2e}, det = {:.4}",
                        rotation.determinant()
                    )))
                }
            }
        };
        match candidate {
            Ok(pose) => poses.push(pose),
            Err(e) => {
                return Err(DataIoError::NonRigid {
                    path: p(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(poses)
}

// Pose construction without validation, for the orthonormalization path.
fn raw_pose(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Pose {
    Pose::from_parts_unchecked(rotation, translation)
}

pub fn save_poses(path: &Path, poses: &[Pose]) -> Result<(), DataIoError> {
    let mut out = String::new();
    for pose in poses {
        let r = pose.rotation();
        let t = pose.translation();
        let row = [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ];
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            // 17 significant digits round-trip f64 exactly.
            let _ = write!(out, "{v:.17e}");
        }
        out.push('\n');
    }
    super::atomic_write(path, out.as_bytes())
}
