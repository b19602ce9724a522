//! BEV grid coordinate system and raster types.
//!
//! The grid is a top-down orthographic raster over the ground plane around
//! the ego vehicle. The ego camera sits at the midpoint of the bottom edge;
//! forward (camera z) increases toward the top edge and lateral (camera x)
//! increases to the right. Metric coordinates are half-open intervals, so
//! every ground point maps to at most one cell.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("lane id must be nonzero for Lane cells and zero otherwise")]
    InvalidLaneId,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Geometry of the BEV raster: cell counts and metric resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Meters per cell.
    pub resolution: f64,
}

impl Default for GridSpec {
    /// 256 x 256 cells at 0.15625 m, a 40 m x 40 m swath.
    fn default() -> Self {
        GridSpec {
            rows: 256,
            cols: 256,
            resolution: 0.15625,
        }
    }
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, resolution: f64) -> Result<Self, GridError> {
        let spec = GridSpec {
            rows,
            cols,
            resolution,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(GridError::InvalidSpec("rows and cols must be > 0".into()));
        }
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(GridError::InvalidSpec("resolution must be > 0".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Forward metric extent in meters.
    pub fn forward_extent(&self) -> f64 {
        self.rows as f64 * self.resolution
    }

    /// Half of the lateral metric extent in meters.
    pub fn lateral_half_extent(&self) -> f64 {
        self.cols as f64 * self.resolution / 2.0
    }

    /// Cell containing a metric point, or `None` outside the extent.
    ///
    /// `lateral` is camera x (right positive), `forward` is camera z.
    /// Intervals are half-open: forward in [0, rows*res), lateral in
    /// [-cols*res/2, cols*res/2).
    pub fn cell_of(&self, lateral: f64, forward: f64) -> Option<(usize, usize)> {
        if !(forward >= 0.0 && forward < self.forward_extent()) {
            return None;
        }
        let half = self.lateral_half_extent();
        if !(lateral >= -half && lateral < half) {
            return None;
        }
        let col = (self.cols as f64 / 2.0 + lateral / self.resolution).floor();
        let row = self.rows as f64 - 1.0 - (forward / self.resolution).floor();
        if col < 0.0 || col >= self.cols as f64 || row < 0.0 || row >= self.rows as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// Metric center of a cell as (lateral, forward).
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let lateral = (col as f64 - self.cols as f64 / 2.0 + 0.5) * self.resolution;
        let forward = (self.rows as f64 - 1.0 - row as f64 + 0.5) * self.resolution;
        (lateral, forward)
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols);
        row * self.cols + col
    }
}

/// Cell semantics. `Free` is the background class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum SemanticClass {
    Free = 0,
    Road = 1,
    Sidewalk = 2,
    Crosswalk = 3,
    OtherRoad = 4,
    Vehicle = 5,
    Lane = 6,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; 7] = [
        SemanticClass::Free,
        SemanticClass::Road,
        SemanticClass::Sidewalk,
        SemanticClass::Crosswalk,
        SemanticClass::OtherRoad,
        SemanticClass::Vehicle,
        SemanticClass::Lane,
    ];

    /// Every class except the background.
    pub const FOREGROUND: [SemanticClass; 6] = [
        SemanticClass::Road,
        SemanticClass::Sidewalk,
        SemanticClass::Crosswalk,
        SemanticClass::OtherRoad,
        SemanticClass::Vehicle,
        SemanticClass::Lane,
    ];

    pub fn from_u8(v: u8) -> Option<SemanticClass> {
        SemanticClass::ALL.get(v as usize).copied()
    }

    pub fn name(&self) -> &'static str {
        match self {
            SemanticClass::Free => "free",
            SemanticClass::Road => "road",
            SemanticClass::Sidewalk => "sidewalk",
            SemanticClass::Crosswalk => "crosswalk",
            SemanticClass::OtherRoad => "other_road",
            SemanticClass::Vehicle => "vehicle",
            SemanticClass::Lane => "lane",
        }
    }
}

/// Boolean raster with the same layout as a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize) -> Mask {
        Mask {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: bool) -> Mask {
        Mask {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Mask {
        let mut m = Mask::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.cols + col] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Morphological dilation by one cell (8-neighborhood).
    pub fn dilated(&self) -> Mask {
        let mut out = Mask::new(self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if !self.get(r, c) {
                    continue;
                }
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let (nr, nc) = (r as isize + dr, c as isize + dc);
                        if nr >= 0 && nr < self.rows as isize && nc >= 0 && nc < self.cols as isize
                        {
                            out.set(nr as usize, nc as usize, true);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Dense per-cell labels: semantic class, lane instance id, and occlusion.
///
/// Invariant: `lane_id > 0` exactly where the class is [`SemanticClass::Lane`];
/// id 1 is the ego lane.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    spec: GridSpec,
    classes: Vec<SemanticClass>,
    lane_ids: Vec<u16>,
    occlusion: Vec<bool>,
}

impl LabelGrid {
    pub fn new(spec: GridSpec) -> LabelGrid {
        let n = spec.n_cells();
        LabelGrid {
            spec,
            classes: vec![SemanticClass::Free; n],
            lane_ids: vec![0; n],
            occlusion: vec![false; n],
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn class_at(&self, row: usize, col: usize) -> SemanticClass {
        self.classes[self.spec.index(row, col)]
    }

    #[inline]
    pub fn lane_id_at(&self, row: usize, col: usize) -> u16 {
        self.lane_ids[self.spec.index(row, col)]
    }

    #[inline]
    pub fn occluded_at(&self, row: usize, col: usize) -> bool {
        self.occlusion[self.spec.index(row, col)]
    }

    /// Assign a cell, keeping the lane-id/class invariant.
    pub fn set_cell(
        &mut self,
        row: usize,
        col: usize,
        class: SemanticClass,
        lane_id: u16,
    ) -> Result<(), GridError> {
        if (class == SemanticClass::Lane) != (lane_id != 0) {
            return Err(GridError::InvalidLaneId);
        }
        let i = self.spec.index(row, col);
        self.classes[i] = class;
        self.lane_ids[i] = lane_id;
        Ok(())
    }

    pub fn set_occluded(&mut self, row: usize, col: usize, occluded: bool) {
        let i = self.spec.index(row, col);
        self.occlusion[i] = occluded;
    }

    pub fn classes(&self) -> &[SemanticClass] {
        &self.classes
    }

    pub fn lane_ids(&self) -> &[u16] {
        &self.lane_ids
    }

    pub fn occlusion(&self) -> &[bool] {
        &self.occlusion
    }

    pub fn occlusion_mask(&self) -> Mask {
        Mask::from_fn(self.spec.rows, self.spec.cols, |r, c| self.occluded_at(r, c))
    }

    /// Raw constructor for deserialization; validates the invariant.
    pub fn from_layers(
        spec: GridSpec,
        classes: Vec<SemanticClass>,
        lane_ids: Vec<u16>,
        occlusion: Vec<bool>,
    ) -> Result<LabelGrid, GridError> {
        spec.validate()?;
        let n = spec.n_cells();
        if classes.len() != n || lane_ids.len() != n || occlusion.len() != n {
            return Err(GridError::ShapeMismatch(format!(
                "layers must have {} cells",
                n
            )));
        }
        let grid = LabelGrid {
            spec,
            classes,
            lane_ids,
            occlusion,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Check the lane-id/class invariant and lane-id contiguity {1..K}.
    pub fn validate(&self) -> Result<(), GridError> {
        let mut max_id = 0u16;
        for i in 0..self.classes.len() {
            if (self.classes[i] == SemanticClass::Lane) != (self.lane_ids[i] != 0) {
                return Err(GridError::InvalidLaneId);
            }
            max_id = max_id.max(self.lane_ids[i]);
        }
        if max_id > 0 {
            let mut seen = vec![false; max_id as usize + 1];
            for &id in &self.lane_ids {
                seen[id as usize] = true;
            }
            if !seen[1..].iter().all(|&s| s) {
                return Err(GridError::InvalidLaneId);
            }
        }
        Ok(())
    }

    /// True exactly where the class layer equals `class`.
    pub fn binary_mask(&self, class: SemanticClass) -> Mask {
        Mask::from_fn(self.spec.rows, self.spec.cols, |r, c| {
            self.class_at(r, c) == class
        })
    }

    /// True exactly where the lane id equals `id` (nonzero).
    pub fn lane_mask(&self, id: u16) -> Mask {
        Mask::from_fn(self.spec.rows, self.spec.cols, |r, c| {
            id != 0 && self.lane_id_at(r, c) == id
        })
    }

    /// Fill every cell whose center lies inside the polygon (even-odd rule).
    ///
    /// Vertices are metric (lateral, forward) pairs. Later calls overwrite
    /// earlier ones. `lane_id` must be nonzero iff `class` is `Lane`.
    pub fn rasterize_polygon(
        &mut self,
        vertices: &[(f64, f64)],
        class: SemanticClass,
        lane_id: u16,
    ) -> Result<(), GridError> {
        if (class == SemanticClass::Lane) != (lane_id != 0) {
            return Err(GridError::InvalidLaneId);
        }
        let spec = self.spec;
        for (row, col) in polygon_cells(&spec, vertices)? {
            self.set_cell(row, col, class, lane_id)?;
        }
        Ok(())
    }
}

/// Cells whose centers lie inside the polygon (even-odd rule), via scanline
/// span filling at each row of cell centers.
pub fn polygon_cells(
    spec: &GridSpec,
    vertices: &[(f64, f64)],
) -> Result<Vec<(usize, usize)>, GridError> {
    if vertices.len() < 3 {
        return Err(GridError::DegeneratePolygon(format!(
            "{} vertices",
            vertices.len()
        )));
    }
    // Shoelace area to reject zero-area input.
    let mut area2 = 0.0;
    for i in 0..vertices.len() {
        let (x1, y1) = vertices[i];
        let (x2, y2) = vertices[(i + 1) % vertices.len()];
        area2 += x1 * y2 - x2 * y1;
    }
    if area2.abs() < 1e-12 {
        return Err(GridError::DegeneratePolygon("zero area".into()));
    }

    let (min_f, max_f) = vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, f)| {
            (lo.min(f), hi.max(f))
        });
    let mut cells = Vec::new();
    for row in 0..spec.rows {
        let (_, fwd) = spec.cell_center(row, 0);
        if fwd < min_f || fwd > max_f {
            continue;
        }
        let mut crossings: Vec<f64> = Vec::new();
        for i in 0..vertices.len() {
            let (x1, y1) = vertices[i];
            let (x2, y2) = vertices[(i + 1) % vertices.len()];
            if (y1 > fwd) != (y2 > fwd) {
                crossings.push(x1 + (fwd - y1) * (x2 - x1) / (y2 - y1));
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in crossings.chunks(2) {
            if pair.len() < 2 {
                break;
            }
            let (x_lo, x_hi) = (pair[0], pair[1]);
            // Columns whose center lateral lies in (x_lo, x_hi).
            for col in 0..spec.cols {
                let (lat, _) = spec.cell_center(row, col);
                if lat > x_lo && lat < x_hi {
                    cells.push((row, col));
                }
            }
        }
    }
    Ok(cells)
}

/// Mask of cells whose centers lie inside the polygon.
pub fn polygon_mask(spec: &GridSpec, vertices: &[(f64, f64)]) -> Result<Mask, GridError> {
    let mut mask = Mask::new(spec.rows, spec.cols);
    for (row, col) in polygon_cells(spec, vertices)? {
        mask.set(row, col, true);
    }
    Ok(mask)
}

/// Which quantity a confidence channel carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelTag {
    Class(SemanticClass),
    /// Pseudo-class for flattened occupancy.
    Occupancy,
}

/// Per-cell, per-channel probabilities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceGrid {
    spec: GridSpec,
    channels: Vec<ChannelTag>,
    /// Channel-major, row-major within a channel.
    values: Vec<f64>,
    lane_ids: Option<Vec<u16>>,
    normalized: bool,
}

impl ConfidenceGrid {
    pub fn new(spec: GridSpec, channels: Vec<ChannelTag>) -> ConfidenceGrid {
        let n = spec.n_cells() * channels.len();
        ConfidenceGrid {
            spec,
            channels,
            values: vec![0.0; n],
            lane_ids: None,
            normalized: false,
        }
    }

    pub fn from_values(
        spec: GridSpec,
        channels: Vec<ChannelTag>,
        values: Vec<f64>,
    ) -> Result<ConfidenceGrid, GridError> {
        if values.len() != spec.n_cells() * channels.len() {
            return Err(GridError::ShapeMismatch(
                "values length must be channels * cells".into(),
            ));
        }
        Ok(ConfidenceGrid {
            spec,
            channels,
            values,
            lane_ids: None,
            normalized: false,
        })
    }

    /// One-hot encoding of a label grid over the given class channels.
    pub fn one_hot(grid: &LabelGrid, classes: &[SemanticClass]) -> ConfidenceGrid {
        let spec = *grid.spec();
        let channels: Vec<ChannelTag> = classes.iter().map(|&c| ChannelTag::Class(c)).collect();
        let mut out = ConfidenceGrid::new(spec, channels);
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                let cls = grid.class_at(r, c);
                if let Some(ch) = classes.iter().position(|&k| k == cls) {
                    out.set(ch, r, c, 1.0);
                }
            }
        }
        out.normalized = classes.len() == SemanticClass::ALL.len();
        out.lane_ids = Some(grid.lane_ids().to_vec());
        out
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn channels(&self) -> &[ChannelTag] {
        &self.channels
    }

    pub fn channel_index(&self, tag: ChannelTag) -> Option<usize> {
        self.channels.iter().position(|&t| t == tag)
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.values[channel * self.spec.n_cells() + self.spec.index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        self.values[channel * self.spec.n_cells() + self.spec.index(row, col)] = value;
    }

    /// Row-major slice of one channel.
    pub fn channel_slice(&self, channel: usize) -> &[f64] {
        let n = self.spec.n_cells();
        &self.values[channel * n..(channel + 1) * n]
    }

    pub fn class_channel(&self, class: SemanticClass) -> Option<&[f64]> {
        self.channel_index(ChannelTag::Class(class))
            .map(|i| self.channel_slice(i))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lane_ids(&self) -> Option<&[u16]> {
        self.lane_ids.as_deref()
    }

    pub fn set_lane_ids(&mut self, ids: Vec<u16>) -> Result<(), GridError> {
        if ids.len() != self.spec.n_cells() {
            return Err(GridError::ShapeMismatch("lane id layer size".into()));
        }
        self.lane_ids = Some(ids);
        Ok(())
    }

    pub fn set_normalized(&mut self, normalized: bool) {
        self.normalized = normalized;
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(GridError::ShapeMismatch(
                "confidence values must lie in [0, 1]".into(),
            ));
        }
        if self.normalized {
            let n = self.spec.n_cells();
            for i in 0..n {
                let sum: f64 = (0..self.channels.len())
                    .map(|c| self.values[c * n + i])
                    .sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(GridError::ShapeMismatch(format!(
                        "cell {} probabilities sum to {}",
                        i, sum
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-cell argmax over class channels; ties resolve to the lowest index.
    pub fn argmax_class(&self, row: usize, col: usize) -> Option<SemanticClass> {
        let mut best: Option<(f64, SemanticClass)> = None;
        for (ci, tag) in self.channels.iter().enumerate() {
            if let ChannelTag::Class(cls) = tag {
                let v = self.get(ci, row, col);
                if best.map_or(true, |(bv, _)| v > bv) {
                    best = Some((v, *cls));
                }
            }
        }
        best.map(|(_, c)| c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_spec() -> GridSpec {
        GridSpec::default()
    }

    #[test]
    fn spec_default_is_40m_swath() {
        let s = default_spec();
        assert_eq!(s.rows, 256);
        assert_eq!(s.cols, 256);
        assert!((s.forward_extent() - 40.0).abs() < 1e-12);
        assert!((s.lateral_half_extent() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn spec_rejects_bad_fields() {
        assert!(GridSpec::new(0, 10, 0.1).is_err());
        assert!(GridSpec::new(10, 0, 0.1).is_err());
        assert!(GridSpec::new(10, 10, 0.0).is_err());
        assert!(GridSpec::new(10, 10, -1.0).is_err());
    }

    #[test]
    fn cell_of_ego_is_bottom_center() {
        let s = default_spec();
        assert_eq!(s.cell_of(0.0, 0.0), Some((255, 128)));
    }

    #[test]
    fn cell_of_outside_extent_is_none() {
        let s = default_spec();
        assert_eq!(s.cell_of(0.0, 41.0), None);
        assert_eq!(s.cell_of(0.0, 40.0), None); // half-open upper bound
        assert_eq!(s.cell_of(20.0, 1.0), None);
        assert_eq!(s.cell_of(-20.0 - 1e-9, 1.0), None);
        assert_eq!(s.cell_of(0.0, -0.001), None);
    }

    /// Brute-force oracle: scan all cells and test half-open metric bounds.
    fn cell_of_oracle(s: &GridSpec, lateral: f64, forward: f64) -> Option<(usize, usize)> {
        for row in 0..s.rows {
            for col in 0..s.cols {
                let f_lo = (s.rows - 1 - row) as f64 * s.resolution;
                let f_hi = f_lo + s.resolution;
                let l_lo = (col as f64 - s.cols as f64 / 2.0) * s.resolution;
                let l_hi = l_lo + s.resolution;
                if forward >= f_lo && forward < f_hi && lateral >= l_lo && lateral < l_hi {
                    return Some((row, col));
                }
            }
        }
        None
    }

    #[test]
    fn cell_of_matches_boundary_scan_oracle() {
        let s = default_spec();
        assert_eq!(s.cell_of(-3.2, 20.0), Some((127, 107)));
        assert_eq!(cell_of_oracle(&s, -3.2, 20.0), Some((127, 107)));
        for &(lat, fwd) in &[
            (0.0, 0.0),
            (-19.99, 39.99),
            (19.99, 0.01),
            (0.15625, 0.15625),
            (-0.0781, 5.0),
        ] {
            assert_eq!(s.cell_of(lat, fwd), cell_of_oracle(&s, lat, fwd), "({lat},{fwd})");
        }
    }

    #[test]
    fn cell_of_inverts_cell_center() {
        let s = GridSpec::new(31, 17, 0.25).unwrap();
        for row in 0..s.rows {
            for col in 0..s.cols {
                let (lat, fwd) = s.cell_center(row, col);
                assert_eq!(s.cell_of(lat, fwd), Some((row, col)));
            }
        }
    }

    /// Point-in-polygon oracle (even-odd) evaluated at every cell center.
    fn rasterize_oracle(spec: &GridSpec, verts: &[(f64, f64)]) -> Vec<(usize, usize)> {
        let inside = |px: f64, py: f64| {
            let mut odd = false;
            for i in 0..verts.len() {
                let (x1, y1) = verts[i];
                let (x2, y2) = verts[(i + 1) % verts.len()];
                if (y1 > py) != (y2 > py) && px < x1 + (py - y1) * (x2 - x1) / (y2 - y1) {
                    odd = !odd;
                }
            }
            odd
        };
        let mut cells = Vec::new();
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                let (lat, fwd) = spec.cell_center(r, c);
                if inside(lat, fwd) {
                    cells.push((r, c));
                }
            }
        }
        cells
    }

    #[test]
    fn rasterize_rectangle_covers_expected_cells() {
        let spec = default_spec();
        let mut grid = LabelGrid::new(spec);
        // Rectangle spanning cells (0..=1, 0..=1): lateral [-20, -19.6875],
        // forward [39.6875, 40].
        let verts = [
            (-20.0, 39.6875),
            (-19.6875, 39.6875),
            (-19.6875, 40.0),
            (-20.0, 40.0),
        ];
        grid.rasterize_polygon(&verts, SemanticClass::Road, 0).unwrap();
        let expected = rasterize_oracle(&spec, &verts);
        assert_eq!(expected.len(), 4);
        let got: Vec<(usize, usize)> = (0..spec.rows)
            .flat_map(|r| (0..spec.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| grid.class_at(r, c) == SemanticClass::Road)
            .collect();
        assert_eq!(got, expected);
        assert!(got.contains(&(0, 0)) && got.contains(&(1, 1)));
    }

    #[test]
    fn rasterize_matches_oracle_on_irregular_polygon() {
        let spec = GridSpec::new(64, 64, 0.25).unwrap();
        let mut grid = LabelGrid::new(spec);
        let verts = [(-3.0, 1.0), (4.0, 2.5), (1.0, 9.0), (-5.0, 6.0), (-1.0, 4.0)];
        grid.rasterize_polygon(&verts, SemanticClass::Crosswalk, 0).unwrap();
        let expected = rasterize_oracle(&spec, &verts);
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                assert_eq!(
                    grid.class_at(r, c) == SemanticClass::Crosswalk,
                    expected.contains(&(r, c)),
                    "cell ({r},{c})"
                );
            }
        }
    }

    #[test]
    fn rasterize_outside_extent_leaves_grid_unchanged() {
        let mut grid = LabelGrid::new(default_spec());
        let verts = [(100.0, 100.0), (110.0, 100.0), (110.0, 110.0), (100.0, 110.0)];
        grid.rasterize_polygon(&verts, SemanticClass::Road, 0).unwrap();
        assert_eq!(grid.binary_mask(SemanticClass::Road).count(), 0);
    }

    #[test]
    fn rasterize_rejects_degenerate_input() {
        let mut grid = LabelGrid::new(default_spec());
        let two = [(0.0, 0.0), (1.0, 1.0)];
        assert!(matches!(
            grid.rasterize_polygon(&two, SemanticClass::Road, 0),
            Err(GridError::DegeneratePolygon(_))
        ));
        let collinear = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)];
        assert!(matches!(
            grid.rasterize_polygon(&collinear, SemanticClass::Road, 0),
            Err(GridError::DegeneratePolygon(_))
        ));
    }

    #[test]
    fn rasterize_complement_partitions_extent() {
        // An axis-aligned rectangle plus its complement (as four rectangles)
        // must cover every cell exactly once.
        let spec = GridSpec::new(32, 32, 0.5).unwrap();
        let half = spec.lateral_half_extent();
        let fwd = spec.forward_extent();
        // Edges on cell boundaries (centers sit at 0.25 mod 0.5), so no
        // center ever lies exactly on a rectangle edge.
        let (x0, x1, y0, y1) = (-3.5, 2.5, 4.5, 10.5);
        let rects = [
            [(x0, y0), (x1, y0), (x1, y1), (x0, y1)],
            [(-half, 0.0), (half, 0.0), (half, y0), (-half, y0)],
            [(-half, y1), (half, y1), (half, fwd), (-half, fwd)],
            [(-half, y0), (x0, y0), (x0, y1), (-half, y1)],
            [(x1, y0), (half, y0), (half, y1), (x1, y1)],
        ];
        let mut cover = vec![0u32; spec.n_cells()];
        for rect in &rects {
            let mut grid = LabelGrid::new(spec);
            grid.rasterize_polygon(rect, SemanticClass::Road, 0).unwrap();
            for r in 0..spec.rows {
                for c in 0..spec.cols {
                    if grid.class_at(r, c) == SemanticClass::Road {
                        cover[spec.index(r, c)] += 1;
                    }
                }
            }
        }
        assert!(cover.iter().all(|&n| n == 1));
    }

    #[test]
    fn binary_mask_counts_and_partitions() {
        let spec = GridSpec::new(16, 16, 1.0).unwrap();
        let mut grid = LabelGrid::new(spec);
        let mut placed = 0;
        for (r, c) in [(0, 0), (1, 5), (2, 2), (3, 9), (8, 8), (15, 15), (7, 0)] {
            grid.set_cell(r, c, SemanticClass::Road, 0).unwrap();
            placed += 1;
        }
        assert_eq!(grid.binary_mask(SemanticClass::Road).count(), placed);
        assert_eq!(grid.binary_mask(SemanticClass::Lane).count(), 0);
        let total: usize = SemanticClass::ALL
            .iter()
            .map(|&k| grid.binary_mask(k).count())
            .sum();
        assert_eq!(total, spec.n_cells());
    }

    #[test]
    fn lane_invariant_enforced() {
        let mut grid = LabelGrid::new(GridSpec::new(4, 4, 1.0).unwrap());
        assert!(grid.set_cell(0, 0, SemanticClass::Lane, 0).is_err());
        assert!(grid.set_cell(0, 0, SemanticClass::Road, 3).is_err());
        grid.set_cell(0, 0, SemanticClass::Lane, 1).unwrap();
        grid.validate().unwrap();
        // Gap in lane ids {1,3} fails contiguity.
        grid.set_cell(0, 1, SemanticClass::Lane, 3).unwrap();
        assert!(grid.validate().is_err());
        grid.set_cell(0, 2, SemanticClass::Lane, 2).unwrap();
        grid.validate().unwrap();
    }

    #[test]
    fn confidence_grid_normalization_check() {
        let spec = GridSpec::new(2, 2, 1.0).unwrap();
        let channels = vec![
            ChannelTag::Class(SemanticClass::Free),
            ChannelTag::Class(SemanticClass::Road),
        ];
        let mut g = ConfidenceGrid::new(spec, channels);
        for r in 0..2 {
            for c in 0..2 {
                g.set(0, r, c, 0.25);
                g.set(1, r, c, 0.75);
            }
        }
        g.set_normalized(true);
        g.validate().unwrap();
        g.set(0, 0, 0, 0.5);
        assert!(g.validate().is_err());
    }
}
