//! Sequence manifests: the JSON index tying together a sequence's clouds,
//! poses, images, and grids. All paths resolve relative to the manifest
//! file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bevbench_core::geom::{CameraIntrinsics, Pose};
use bevbench_core::grid::GridSpec;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{default_palette, DataIoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub sequence_id: String,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraIntrinsics>,
    /// Row-major 3x4 rigid transform from lidar to camera coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cam_from_lidar: Option<[f64; 12]>,
    /// Relative path of the KITTI-style pose file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses: Option<String>,
    #[serde(default = "default_palette")]
    pub palette: BTreeMap<String, [u8; 3]>,
    pub frames: Vec<FrameRecord>,
}

impl SequenceManifest {
    pub fn new(sequence_id: impl Into<String>, grid: GridSpec) -> SequenceManifest {
        SequenceManifest {
            sequence_id: sequence_id.into(),
            grid,
            camera: None,
            cam_from_lidar: None,
            poses: None,
            palette: default_palette(),
            frames: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<SequenceManifest, DataIoError> {
        let text = fs::read_to_string(path).map_err(|e| DataIoError::io(path, e))?;
        let manifest: SequenceManifest =
            serde_json::from_str(&text).map_err(|e| DataIoError::ParseError {
                path: path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
        manifest.validate().map_err(|message| DataIoError::Malformed {
            path: path.display().to_string(),
            message,
        })?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataIoError> {
        self.validate().map_err(|message| DataIoError::Malformed {
            path: path.display().to_string(),
            message,
        })?;
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        super::atomic_write(path, text.as_bytes())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.grid.validate().map_err(|e| format!("grid: {e}"))?;
        if let Some(cam) = &self.camera {
            cam.validate().map_err(|e| format!("camera: {e}"))?;
        }
        for (i, pair) in self.frames.windows(2).enumerate() {
            if !(pair[1].timestamp > pair[0].timestamp) {
                return Err(format!(
                    "frames[{}]: timestamp {} not greater than predecessor {}",
                    i + 1,
                    pair[1].timestamp,
                    pair[0].timestamp
                ));
            }
        }
        Ok(())
    }

    /// Resolve a frame-relative path against the manifest location.
    pub fn resolve(&self, manifest_path: &Path, relative: &str) -> PathBuf {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(relative)
    }

    /// The lidar-to-camera transform, identity when unset.
    pub fn cam_from_lidar_pose(&self) -> Result<Pose, DataIoError> {
        match &self.cam_from_lidar {
            None => Ok(Pose::identity()),
            Some(v) => {
                let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
                let translation = Vector3::new(v[3], v[7], v[11]);
                Pose::new(rotation, translation).map_err(|e| DataIoError::Malformed {
                    path: "<manifest cam_from_lidar>".into(),
                    message: e.to_string(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("manifest-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn sample() -> SequenceManifest {
        let mut m = SequenceManifest::new("seq-00", GridSpec::default());
        m.poses = Some("poses.txt".into());
        m.frames = vec![
            FrameRecord {
                timestamp: 0.0,
                cloud: Some("clouds/000000.bin".into()),
                pose_index: Some(0),
                semantic: Some("seg/000000.png".into()),
                ..FrameRecord::default()
            },
            FrameRecord {
                timestamp: 0.1,
                cloud: Some("clouds/000001.bin".into()),
                pose_index: Some(1),
                semantic: Some("seg/000001.png".into()),
                ..FrameRecord::default()
            },
        ];
        m
    }

    #[test]
    fn save_load_round_trip() {
        let path = tmp("m.json");
        let m = sample();
        m.save(&path).unwrap();
        let back = SequenceManifest::load(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn non_increasing_timestamps_rejected() {
        let mut m = sample();
        m.frames[1].timestamp = 0.0;
        assert!(m.validate().is_err());
        let path = tmp("bad.json");
        let text = serde_json::to_string(&m).unwrap();
        fs::write(&path, text).unwrap();
        assert!(matches!(
            SequenceManifest::load(&path),
            Err(DataIoError::Malformed { .. })
        ));
    }

    #[test]
    fn unknown_fields_rejected() {
        let path = tmp("unknown.json");
        fs::write(
            &path,
            r#"{"sequence_id":"x","grid":{"rows":4,"cols":4,"resolution":1.0},"frames":[],"bogus":1}"#,
        )
        .unwrap();
        assert!(matches!(
            SequenceManifest::load(&path),
            Err(DataIoError::ParseError { .. })
        ));
    }

    #[test]
    fn paths_resolve_relative_to_manifest() {
        let m = sample();
        let resolved = m.resolve(Path::new("/data/seq/manifest.json"), "clouds/0.bin");
        assert_eq!(resolved, PathBuf::from("/data/seq/clouds/0.bin"));
    }

    #[test]
    fn default_palette_covers_all_classes() {
        let m = sample();
        for class in bevbench_core::grid::SemanticClass::ALL {
            assert!(m.palette.contains_key(class.name()), "{}", class.name());
        }
    }
}
