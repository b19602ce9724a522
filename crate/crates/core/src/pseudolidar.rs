//! BEV voxelization of camera-frame point clouds.
//!
//! The volume slices space vertically along the camera y axis into a fixed
//! number of channels (default 10, from 0.4 m above the camera to 2 m below)
//! and horizontally into the BEV grid at the grid resolution. Each voxel
//! stores a point count and the mean remission of its points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{ChannelTag, ConfidenceGrid, GridSpec};
use crate::geom::{Frame, PointCloud};

#[derive(Debug, Error, PartialEq)]
pub enum VoxelError {
    #[error("invalid voxel spec: {0}")]
    InvalidSpec(String),
    #[error("cloud must be in the camera frame, got {0:?}")]
    WrongFrame(Frame),
}

/// Geometry of the voxel volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelSpec {
    pub bev: GridSpec,
    pub channels: usize,
    /// Lowest camera-frame y included (negative = above the camera).
    pub y_min: f64,
    /// Exclusive upper bound on camera-frame y.
    pub y_max: f64,
}

impl Default for VoxelSpec {
    fn default() -> Self {
        VoxelSpec {
            bev: GridSpec::default(),
            channels: 10,
            y_min: -0.4,
            y_max: 2.0,
        }
    }
}

impl VoxelSpec {
    pub fn validate(&self) -> Result<(), VoxelError> {
        self.bev
            .validate()
            .map_err(|e| VoxelError::InvalidSpec(e.to_string()))?;
        if self.channels == 0 {
            return Err(VoxelError::InvalidSpec("channel count must be >= 1".into()));
        }
        if !(self.y_max > self.y_min) {
            return Err(VoxelError::InvalidSpec("y_max must exceed y_min".into()));
        }
        if !(self.channel_height() > 0.0) {
            return Err(VoxelError::InvalidSpec("channel height must be > 0".into()));
        }
        Ok(())
    }

    pub fn channel_height(&self) -> f64 {
        (self.y_max - self.y_min) / self.channels as f64
    }

    /// Vertical channel for a camera-frame y, `None` outside [y_min, y_max).
    pub fn channel_of(&self, y: f64) -> Option<usize> {
        if y < self.y_min || y >= self.y_max {
            return None;
        }
        let ch = ((y - self.y_min) / self.channel_height()).floor() as usize;
        Some(ch.min(self.channels - 1))
    }
}

/// Per-voxel occupancy counts and mean remission.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    spec: VoxelSpec,
    counts: Vec<u32>,
    mean_remission: Vec<f64>,
}

impl VoxelVolume {
    pub fn new(spec: VoxelSpec) -> Result<VoxelVolume, VoxelError> {
        spec.validate()?;
        let n = spec.channels * spec.bev.n_cells();
        Ok(VoxelVolume {
            spec,
            counts: vec![0; n],
            mean_remission: vec![0.0; n],
        })
    }

    pub fn from_layers(
        spec: VoxelSpec,
        counts: Vec<u32>,
        mean_remission: Vec<f64>,
    ) -> Result<VoxelVolume, VoxelError> {
        spec.validate()?;
        let n = spec.channels * spec.bev.n_cells();
        if counts.len() != n || mean_remission.len() != n {
            return Err(VoxelError::InvalidSpec("layer sizes".into()));
        }
        Ok(VoxelVolume {
            spec,
            counts,
            mean_remission,
        })
    }

    pub fn spec(&self) -> &VoxelSpec {
        &self.spec
    }

    #[inline]
    fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        channel * self.spec.bev.n_cells() + self.spec.bev.index(row, col)
    }

    pub fn count(&self, channel: usize, row: usize, col: usize) -> u32 {
        self.counts[self.index(channel, row, col)]
    }

    pub fn mean_remission(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.mean_remission[self.index(channel, row, col)]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn remissions(&self) -> &[f64] {
        &self.mean_remission
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Bin a camera-frame cloud into the voxel volume.
///
/// A point lands in a voxel when its y lies in [y_min, y_max) and its
/// (x, z) falls inside the BEV extent; everything else is dropped.
pub fn voxelize(cloud: &PointCloud, spec: &VoxelSpec) -> Result<VoxelVolume, VoxelError> {
    if cloud.frame != Frame::Camera {
        return Err(VoxelError::WrongFrame(cloud.frame));
    }
    let mut vol = VoxelVolume::new(*spec)?;
    let mut remission_sum = vec![0.0f64; vol.counts.len()];
    for (p, &rem) in cloud.points.iter().zip(cloud.remission.iter()) {
        let Some(ch) = spec.channel_of(p.y) else {
            continue;
        };
        let Some((row, col)) = spec.bev.cell_of(p.x, p.z) else {
            continue;
        };
        let i = vol.index(ch, row, col);
        vol.counts[i] += 1;
        remission_sum[i] += rem;
    }
    for i in 0..vol.counts.len() {
        if vol.counts[i] > 0 {
            vol.mean_remission[i] = remission_sum[i] / vol.counts[i] as f64;
        }
    }
    Ok(vol)
}

/// Collapse the vertical channels into a single occupancy confidence layer:
/// per-cell value = min(1, total count / saturation).
pub fn flatten_occupancy(vol: &VoxelVolume, saturation: f64) -> ConfidenceGrid {
    let bev = vol.spec.bev;
    let mut grid = ConfidenceGrid::new(bev, vec![ChannelTag::Occupancy]);
    let sat = if saturation > 0.0 { saturation } else { 1.0 };
    for row in 0..bev.rows {
        for col in 0..bev.cols {
            let total: u32 = (0..vol.spec.channels).map(|ch| vol.count(ch, row, col)).sum();
            grid.set(0, row, col, (total as f64 / sat).min(1.0));
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn default_spec_matches_published_constants() {
        let spec = VoxelSpec::default();
        assert_eq!(spec.channels, 10);
        assert_eq!(spec.y_min, -0.4);
        assert_eq!(spec.y_max, 2.0);
        assert!((spec.channel_height() - 0.24).abs() < 1e-12);
        assert!((spec.bev.resolution - 0.15625).abs() < 1e-12);
    }

    #[test]
    fn single_point_lands_in_expected_voxel() {
        let spec = VoxelSpec::default();
        let cloud = PointCloud::new(
            vec![Vector3::new(0.0, 0.0, 10.0)],
            vec![0.8],
            Frame::Camera,
        )
        .unwrap();
        let vol = voxelize(&cloud, &spec).unwrap();
        // floor((0 - (-0.4)) / 0.24) = 1; forward 10 m -> row 191, col 128.
        assert_eq!(vol.count(1, 191, 128), 1);
        assert_eq!(vol.mean_remission(1, 191, 128), 0.8);
        assert_eq!(vol.total_count(), 1);
    }

    #[test]
    fn points_outside_vertical_range_are_dropped() {
        let spec = VoxelSpec::default();
        let cloud = PointCloud::new(
            vec![
                Vector3::new(0.0, -0.5, 10.0), // 0.5 m above camera
                Vector3::new(0.0, 2.0, 10.0),  // exactly y_max, half-open
            ],
            vec![1.0, 1.0],
            Frame::Camera,
        )
        .unwrap();
        let vol = voxelize(&cloud, &spec).unwrap();
        assert_eq!(vol.total_count(), 0);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut spec = VoxelSpec::default();
        spec.y_max = spec.y_min;
        assert!(matches!(voxelize(&PointCloud::empty(Frame::Camera), &spec), Err(VoxelError::InvalidSpec(_))));
        spec = VoxelSpec {
            channels: 0,
            ..VoxelSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = PointCloud::empty(Frame::Camera);
        for _ in 0..n {
            // Mix of in-range and out-of-range points.
            let p = Vector3::new(
                rng.gen_range(-25.0..25.0),
                rng.gen_range(-1.0..3.0),
                rng.gen_range(-5.0..45.0),
            );
            cloud.push(p, rng.gen_range(0.0..1.0));
        }
        cloud
    }

    /// Brute-force binning oracle keyed on (channel, row, col).
    fn bin_oracle(cloud: &PointCloud, spec: &VoxelSpec) -> HashMap<(usize, usize, usize), (u32, f64)> {
        let mut bins: HashMap<(usize, usize, usize), (u32, f64)> = HashMap::new();
        for (p, &rem) in cloud.points.iter().zip(cloud.remission.iter()) {
            if p.y < spec.y_min || p.y >= spec.y_max {
                continue;
            }
            let ch = ((p.y - spec.y_min) / spec.channel_height()).floor() as usize;
            if let Some((r, c)) = spec.bev.cell_of(p.x, p.z) {
                let e = bins.entry((ch, r, c)).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += rem;
            }
        }
        bins
    }

    #[test]
    fn counts_match_brute_force_oracle() {
        let spec = VoxelSpec::default();
        let cloud = random_cloud(7, 5000);
        let vol = voxelize(&cloud, &spec).unwrap();
        let oracle = bin_oracle(&cloud, &spec);
        let oracle_total: u32 = oracle.values().map(|&(n, _)| n).sum();
        assert_eq!(vol.total_count(), oracle_total as u64);
        for (&(ch, r, c), &(n, sum)) in &oracle {
            assert_eq!(vol.count(ch, r, c), n);
            assert!((vol.mean_remission(ch, r, c) - sum / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn point_conservation_on_random_clouds() {
        let spec = VoxelSpec::default();
        for seed in 0..10 {
            let cloud = random_cloud(seed, 2000);
            let in_range = cloud
                .points
                .iter()
                .filter(|p| {
                    p.y >= spec.y_min
                        && p.y < spec.y_max
                        && spec.bev.cell_of(p.x, p.z).is_some()
                })
                .count() as u64;
            let vol = voxelize(&cloud, &spec).unwrap();
            assert_eq!(vol.total_count(), in_range);
        }
    }

    #[test]
    fn permutation_invariance() {
        let spec = VoxelSpec::default();
        let cloud = random_cloud(42, 3000);
        let mut shuffled = cloud.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut order: Vec<usize> = (0..cloud.len()).collect();
        order.shuffle(&mut rng);
        shuffled.points = order.iter().map(|&i| cloud.points[i]).collect();
        shuffled.remission = order.iter().map(|&i| cloud.remission[i]).collect();

        let a = voxelize(&cloud, &spec).unwrap();
        let b = voxelize(&shuffled, &spec).unwrap();
        assert_eq!(a.counts(), b.counts());
        for (x, y) in a.remissions().iter().zip(b.remissions().iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn flatten_occupancy_counts_nonzero_cells() {
        let spec = VoxelSpec::default();
        let empty = voxelize(&PointCloud::empty(Frame::Camera), &spec).unwrap();
        let flat = flatten_occupancy(&empty, 4.0);
        assert!(flat.channel_slice(0).iter().all(|&v| v == 0.0));

        let one = PointCloud::new(vec![Vector3::new(0.0, 0.0, 5.0)], vec![1.0], Frame::Camera).unwrap();
        let flat = flatten_occupancy(&voxelize(&one, &spec).unwrap(), 4.0);
        let nonzero = flat.channel_slice(0).iter().filter(|&&v| v > 0.0).count();
        assert_eq!(nonzero, 1);

        // Oracle: distinct (row, col) bins of 100 random in-range points.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cloud = PointCloud::empty(Frame::Camera);
        for _ in 0..100 {
            cloud.push(
                Vector3::new(rng.gen_range(-19.9..19.9), rng.gen_range(-0.39..1.99), rng.gen_range(0.01..39.9)),
                0.5,
            );
        }
        let distinct: std::collections::HashSet<(usize, usize)> = cloud
            .points
            .iter()
            .filter_map(|p| spec.bev.cell_of(p.x, p.z))
            .collect();
        let flat = flatten_occupancy(&voxelize(&cloud, &spec).unwrap(), 4.0);
        let nonzero = flat.channel_slice(0).iter().filter(|&&v| v > 0.0).count();
        assert_eq!(nonzero, distinct.len());
    }
}
