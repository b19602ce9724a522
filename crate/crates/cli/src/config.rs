//! The single TOML configuration shared by all commands. Every field has a
//! default; the effective (post-default) config is echoed into every output
//! tree so results are reproducible from their artifacts alone.

use std::fs;
use std::path::Path;

use bevbench_core::consistency::{ConsistencyWeights, WarpMode};
use bevbench_core::grid::GridSpec;
use bevbench_core::metrics::EvalOptions;
use bevbench_core::pseudolidar::VoxelSpec;
use bevbench_core::weaksup::WeaksupConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoxelConfig {
    pub channels: usize,
    pub y_min: f64,
    pub y_max: f64,
    /// Count at which flattened occupancy saturates to 1.
    pub flatten_saturation: f64,
    /// Depth PNG scale: meters = pixel value / scale.
    pub depth_scale: f64,
}

impl Default for VoxelConfig {
    fn default() -> Self {
        VoxelConfig {
            channels: 10,
            y_min: -0.4,
            y_max: 2.0,
            flatten_saturation: 4.0,
            depth_scale: 256.0,
        }
    }
}

impl VoxelConfig {
    pub fn voxel_spec(&self, bev: GridSpec) -> VoxelSpec {
        VoxelSpec {
            bev,
            channels: self.channels,
            y_min: self.y_min,
            y_max: self.y_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub lambda_sup: f64,
    pub lambda_short: f64,
    pub lambda_long: f64,
    pub warp: WarpMode,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        let w = ConsistencyWeights::default();
        ConsistencyConfig {
            lambda_sup: w.lambda_sup,
            lambda_short: w.lambda_short,
            lambda_long: w.lambda_long,
            warp: WarpMode::Off,
        }
    }
}

impl ConsistencyConfig {
    pub fn weights(&self) -> ConsistencyWeights {
        ConsistencyWeights {
            lambda_sup: self.lambda_sup,
            lambda_short: self.lambda_short,
            lambda_long: self.lambda_long,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub grid: GridSpec,
    pub weaksup: WeaksupConfig,
    pub voxel: VoxelConfig,
    pub metrics: EvalOptions,
    pub consistency: ConsistencyConfig,
}

impl ToolConfig {
    /// Load and validate, or fall back to defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<ToolConfig, ConfigError> {
        let config = match path {
            None => ToolConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                toml::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?
            }
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, msg: &str| Err(ConfigError::Invalid(format!("{field}: {msg}")));
        if self.grid.validate().is_err() {
            return bad("grid", "rows, cols and resolution must be positive");
        }
        if !(self.weaksup.eps > 0.0) {
            return bad("weaksup.eps", "must be > 0");
        }
        if self.weaksup.min_pts == 0 {
            return bad("weaksup.min_pts", "must be >= 1");
        }
        if !(self.weaksup.min_span > 0.0) {
            return bad("weaksup.min_span", "must be > 0");
        }
        if !(self.weaksup.min_lane_width > 0.0) {
            return bad("weaksup.min_lane_width", "must be > 0");
        }
        if self.voxel.channels == 0 {
            return bad("voxel.channels", "must be >= 1");
        }
        if !(self.voxel.y_max > self.voxel.y_min) {
            return bad("voxel.y_max", "must exceed voxel.y_min");
        }
        if !(self.voxel.depth_scale > 0.0) {
            return bad("voxel.depth_scale", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.metrics.binarize_threshold) {
            return bad("metrics.binarize_threshold", "must lie in [0, 1]");
        }
        if self.metrics.lane_iou_thresholds.is_empty() {
            return bad("metrics.lane_iou_thresholds", "must not be empty");
        }
        if self
            .metrics
            .lane_iou_thresholds
            .iter()
            .any(|t| !(0.0 < *t && *t < 1.0))
        {
            return bad("metrics.lane_iou_thresholds", "thresholds must lie in (0, 1)");
        }
        if self.consistency.lambda_sup < 0.0
            || self.consistency.lambda_short < 0.0
            || self.consistency.lambda_long < 0.0
        {
            return bad("consistency", "weights must be nonnegative");
        }
        Ok(())
    }

    /// Canonical TOML echo of the effective configuration.
    pub fn echo(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
