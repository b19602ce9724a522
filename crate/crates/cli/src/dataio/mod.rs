//! Dataset ingestion and the toolkit's own file formats.

mod bevg;
mod cloud;
mod manifest;
mod png;
mod poses;

pub use bevg::{
    read_confidence_grid, read_grid, read_label_grid, read_voxel_volume, write_confidence_grid,
    write_grid, write_label_grid, write_voxel_volume, GridFile,
};
pub use cloud::{load_cloud, save_cloud};
pub use manifest::{FrameRecord, SequenceManifest};
pub use png::{
    export_confidence_png, export_label_png, read_depth_png, read_seg_png, write_depth_png,
    write_seg_png, LANE_COLORS,
};
pub use poses::{load_poses, save_poses};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a BEVG file (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported BEVG version {version}")]
    VersionUnsupported { path: String, version: u16 },
    #[error("{path}: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch {
        path: String,
        stored: u32,
        computed: u32,
    },
    #[error("{path}: truncated file (expected {expected} bytes, got {got})")]
    TruncatedFile {
        path: String,
        expected: usize,
        got: usize,
    },
    #[error("{path}:{line}: parse error: {message}")]
    ParseError {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: rotation is not rigid: {message}")]
    NonRigid {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: non-finite value in input")]
    NonFiniteValue { path: String },
    #[error("{path}: malformed content: {message}")]
    Malformed { path: String, message: String },
}

impl DataIoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> DataIoError {
        DataIoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Whole-file atomic write: write to a sibling temp file, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), DataIoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DataIoError::io(path, e))?;
    }
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| DataIoError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| DataIoError::io(&tmp, e))?;
        f.sync_all().map_err(|e| DataIoError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| DataIoError::io(path, e))
}

/// Default color palette for PNG rendering, keyed by class name.
pub fn default_palette() -> BTreeMap<String, [u8; 3]> {
    [
        ("free", [40, 40, 40]),
        ("road", [128, 128, 128]),
        ("sidewalk", [244, 35, 232]),
        ("crosswalk", [250, 170, 30]),
        ("other_road", [110, 110, 140]),
        ("vehicle", [220, 220, 220]),
        ("lane", [66, 133, 244]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}
