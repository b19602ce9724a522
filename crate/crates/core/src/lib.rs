//! Core algorithms for bird's-eye-view scene-layout benchmarking: the BEV
//! grid model, sensor geometry, pseudo-lidar voxelization, weak-supervision
//! label generation, the evaluation protocol, temporal consistency scoring,
//! and a synthetic-scene oracle.

pub mod consistency;
pub mod geom;
pub mod grid;
pub mod metrics;
pub mod pseudolidar;
pub mod synth;
pub mod weaksup;

pub use geom::{CameraIntrinsics, Frame, Pose};
pub use grid::{ChannelTag, ConfidenceGrid, GridSpec, LabelGrid, Mask, SemanticClass};
pub use metrics::{EvalOptions, EvalReport};
pub use pseudolidar::{VoxelSpec, VoxelVolume};
pub use weaksup::{LaneBoundary, LaneInstance, PointClass, WeaksupConfig};
