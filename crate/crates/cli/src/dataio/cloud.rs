//! Point cloud binaries: packed little-endian f32 quadruples
//! (x, y, z, remission), the KITTI `.bin` convention.

use std::fs;
use std::path::Path;

use bevbench_core::geom::{Frame, PointCloud};
use nalgebra::Vector3;

use super::DataIoError;

pub fn load_cloud(path: &Path) -> Result<PointCloud, DataIoError> {
    let bytes = fs::read(path).map_err(|e| DataIoError::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(DataIoError::TruncatedFile {
            path: path.display().to_string(),
            expected: bytes.len() / 16 * 16 + 16,
            got: bytes.len(),
        });
    }
    let n = bytes.len() / 16;
    let mut cloud = PointCloud::empty(Frame::Sensor);
    for i in 0..n {
        let f = |k: usize| {
            f32::from_le_bytes(bytes[i * 16 + 4 * k..i * 16 + 4 * k + 4].try_into().unwrap())
                as f64
        };
        let (x, y, z, rem) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite() && rem.is_finite()) {
            return Err(DataIoError::NonFiniteValue {
                path: path.display().to_string(),
            });
        }
        cloud.push(Vector3::new(x, y, z), rem);
    }
    Ok(cloud)
}

pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<(), DataIoError> {
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for (p, &rem) in cloud.points.iter().zip(cloud.remission.iter()) {
        for v in [p.x, p.y, p.z, rem] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    super::atomic_write(path, &bytes)
}
