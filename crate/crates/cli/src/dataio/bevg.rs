//! The BEVG grid container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "BEVG" | version u16 | rows u32 | cols u32 | resolution f32
//! | channel count u16 | per channel: semantic tag u8, element type u8
//! | row-major channel payloads | CRC-32 over all preceding bytes
//! ```
//!
//! Element types: 0 = u8, 1 = u16, 2 = f32. Semantic tags: 0x01 class
//! layer, 0x02 lane-id layer, 0x03 occlusion layer, 0x10+k confidence for
//! class k, 0x20 occupancy confidence, 0x30+i voxel count channel i,
//! 0x50+i voxel mean-remission channel i.
//!
//! The container stores the BEV geometry; a voxel volume's vertical range
//! is configuration and must be supplied again on read.

use std::fs;
use std::path::Path;

use bevbench_core::grid::{ChannelTag, ConfidenceGrid, GridSpec, LabelGrid, SemanticClass};
use bevbench_core::pseudolidar::{VoxelSpec, VoxelVolume};

use super::DataIoError;

const MAGIC: &[u8; 4] = b"BEVG";
const VERSION: u16 = 1;

const ELEM_U8: u8 = 0;
const ELEM_U16: u8 = 1;
const ELEM_F32: u8 = 2;

const TAG_CLASS: u8 = 0x01;
const TAG_LANE_ID: u8 = 0x02;
const TAG_OCCLUSION: u8 = 0x03;
const TAG_CONF_BASE: u8 = 0x10;
const TAG_OCCUPANCY: u8 = 0x20;
const TAG_COUNT_BASE: u8 = 0x30;
const TAG_REMISSION_BASE: u8 = 0x50;

enum Payload {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl Payload {
    fn elem_type(&self) -> u8 {
        match self {
            Payload::U8(_) => ELEM_U8,
            Payload::U16(_) => ELEM_U16,
            Payload::F32(_) => ELEM_F32,
        }
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        match self {
            Payload::U8(v) => out.extend_from_slice(v),
            Payload::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

fn encode(spec: &GridSpec, channels: &[(u8, Payload)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.rows as u32).to_le_bytes());
    out.extend_from_slice(&(spec.cols as u32).to_le_bytes());
    out.extend_from_slice(&(spec.resolution as f32).to_le_bytes());
    out.extend_from_slice(&(channels.len() as u16).to_le_bytes());
    for (tag, payload) in channels {
        out.push(*tag);
        out.push(payload.elem_type());
    }
    for (_, payload) in channels {
        payload.write_to(&mut out);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Decoded {
    spec: GridSpec,
    channels: Vec<(u8, Payload)>,
}

fn decode(path: &Path, bytes: &[u8]) -> Result<Decoded, DataIoError> {
    let p = || path.display().to_string();
    let need = |expected: usize| -> Result<(), DataIoError> {
        if bytes.len() < expected {
            Err(DataIoError::TruncatedFile {
                path: p(),
                expected,
                got: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(20 + 4)?;
    if &bytes[0..4] != MAGIC {
        return Err(DataIoError::BadMagic { path: p() });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(DataIoError::VersionUnsupported { path: p(), version });
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let resolution = f32::from_le_bytes(bytes[14..18].try_into().unwrap()) as f64;
    let n_channels = u16::from_le_bytes(bytes[18..20].try_into().unwrap()) as usize;

    let header_end = 20 + 2 * n_channels;
    need(header_end + 4)?;
    let descriptors: Vec<(u8, u8)> = (0..n_channels)
        .map(|i| (bytes[20 + 2 * i], bytes[20 + 2 * i + 1]))
        .collect();

    let cells = rows
        .checked_mul(cols)
        .ok_or_else(|| DataIoError::Malformed {
            path: p(),
            message: "grid dimensions overflow".into(),
        })?;
    let payload_len: usize = descriptors
        .iter()
        .map(|&(_, elem)| match elem {
            ELEM_U8 => cells,
            ELEM_U16 => 2 * cells,
            _ => 4 * cells,
        })
        .sum();
    let total = header_end + payload_len + 4;
    if bytes.len() != total {
        return Err(DataIoError::TruncatedFile {
            path: p(),
            expected: total,
            got: bytes.len(),
        });
    }

    let stored = u32::from_le_bytes(bytes[total - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..total - 4]);
    if stored != computed {
        return Err(DataIoError::ChecksumMismatch {
            path: p(),
            stored,
            computed,
        });
    }

    for &(_, elem) in &descriptors {
        if elem > ELEM_F32 {
            return Err(DataIoError::Malformed {
                path: p(),
                message: format!("unknown element type {elem}"),
            });
        }
    }
    let spec = GridSpec::new(rows, cols, resolution).map_err(|e| DataIoError::Malformed {
        path: p(),
        message: e.to_string(),
    })?;

    let mut offset = header_end;
    let mut channels = Vec::with_capacity(n_channels);
    for (tag, elem) in descriptors {
        let payload = match elem {
            ELEM_U8 => {
                let v = bytes[offset..offset + cells].to_vec();
                offset += cells;
                Payload::U8(v)
            }
            ELEM_U16 => {
                let v = (0..cells)
                    .map(|i| {
                        u16::from_le_bytes(
                            bytes[offset + 2 * i..offset + 2 * i + 2].try_into().unwrap(),
                        )
                    })
                    .collect();
                offset += 2 * cells;
                Payload::U16(v)
            }
            _ => {
                let v = (0..cells)
                    .map(|i| {
                        f32::from_le_bytes(
                            bytes[offset + 4 * i..offset + 4 * i + 4].try_into().unwrap(),
                        )
                    })
                    .collect();
                offset += 4 * cells;
                Payload::F32(v)
            }
        };
        channels.push((tag, payload));
    }
    Ok(Decoded { spec, channels })
}

pub fn write_label_grid(path: &Path, grid: &LabelGrid) -> Result<(), DataIoError> {
    let channels = vec![
        (
            TAG_CLASS,
            Payload::U8(grid.classes().iter().map(|&c| c as u8).collect()),
        ),
        (TAG_LANE_ID, Payload::U16(grid.lane_ids().to_vec())),
        (
            TAG_OCCLUSION,
            Payload::U8(grid.occlusion().iter().map(|&b| b as u8).collect()),
        ),
    ];
    super::atomic_write(path, &encode(grid.spec(), &channels))
}

pub fn write_confidence_grid(path: &Path, grid: &ConfidenceGrid) -> Result<(), DataIoError> {
    let cells = grid.spec().n_cells();
    let mut channels: Vec<(u8, Payload)> = grid
        .channels()
        .iter()
        .enumerate()
        .map(|(i, &tag)| {
            let tag_byte = match tag {
                ChannelTag::Class(c) => TAG_CONF_BASE + c as u8,
                ChannelTag::Occupancy => TAG_OCCUPANCY,
            };
            let values: Vec<f32> = (0..cells)
                .map(|j| grid.values()[i * cells + j] as f32)
                .collect();
            (tag_byte, Payload::F32(values))
        })
        .collect();
    if let Some(ids) = grid.lane_ids() {
        channels.push((TAG_LANE_ID, Payload::U16(ids.to_vec())));
    }
    super::atomic_write(path, &encode(grid.spec(), &channels))
}

pub fn write_voxel_volume(path: &Path, vol: &VoxelVolume) -> Result<(), DataIoError> {
    let spec = vol.spec();
    let cells = spec.bev.n_cells();
    let mut channels = Vec::with_capacity(2 * spec.channels);
    for ch in 0..spec.channels {
        let counts: Vec<f32> = vol.counts()[ch * cells..(ch + 1) * cells]
            .iter()
            .map(|&c| c as f32)
            .collect();
        channels.push((TAG_COUNT_BASE + ch as u8, Payload::F32(counts)));
    }
    for ch in 0..spec.channels {
        let rem: Vec<f32> = vol.remissions()[ch * cells..(ch + 1) * cells]
            .iter()
            .map(|&r| r as f32)
            .collect();
        channels.push((TAG_REMISSION_BASE + ch as u8, Payload::F32(rem)));
    }
    super::atomic_write(path, &encode(&spec.bev, &channels))
}

/// Any grid kind the container can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum GridFile {
    Label(LabelGrid),
    Confidence(ConfidenceGrid),
    /// Voxel channels as raw (counts, remissions); finish with
    /// [`read_voxel_volume`] when the vertical range is known.
    Voxel {
        spec: GridSpec,
        channels: usize,
        counts: Vec<u32>,
        remissions: Vec<f64>,
    },
}

pub fn write_grid(path: &Path, grid: &GridFile) -> Result<(), DataIoError> {
    match grid {
        GridFile::Label(g) => write_label_grid(path, g),
        GridFile::Confidence(g) => write_confidence_grid(path, g),
        GridFile::Voxel { spec, channels, counts, remissions } => {
            let vspec = VoxelSpec {
                bev: *spec,
                channels: *channels,
                y_min: 0.0,
                y_max: *channels as f64,
            };
            let vol = VoxelVolume::from_layers(vspec, counts.clone(), remissions.clone())
                .map_err(|e| DataIoError::Malformed {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            write_voxel_volume(path, &vol)
        }
    }
}

pub fn read_grid(path: &Path) -> Result<GridFile, DataIoError> {
    let bytes = fs::read(path).map_err(|e| DataIoError::io(path, e))?;
    let decoded = decode(path, &bytes)?;
    let p = || path.display().to_string();
    let malformed = |message: String| DataIoError::Malformed { path: p(), message };

    let tags: Vec<u8> = decoded.channels.iter().map(|&(t, _)| t).collect();
    if tags == [TAG_CLASS, TAG_LANE_ID, TAG_OCCLUSION] {
        let (classes, lane_ids, occlusion) = match (
            &decoded.channels[0].1,
            &decoded.channels[1].1,
            &decoded.channels[2].1,
        ) {
            (Payload::U8(c), Payload::U16(l), Payload::U8(o)) => (c, l, o),
            _ => return Err(malformed("label grid element types".into())),
        };
        let classes = classes
            .iter()
            .map(|&v| SemanticClass::from_u8(v).ok_or_else(|| malformed(format!("class id {v}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let grid = LabelGrid::from_layers(
            decoded.spec,
            classes,
            lane_ids.clone(),
            occlusion.iter().map(|&b| b != 0).collect(),
        )
        .map_err(|e| malformed(e.to_string()))?;
        return Ok(GridFile::Label(grid));
    }

    if tags
        .iter()
        .all(|&t| (TAG_COUNT_BASE..TAG_COUNT_BASE + 0x20).contains(&t) || (t >= TAG_REMISSION_BASE))
        && !tags.is_empty()
    {
        let n = tags
            .iter()
            .filter(|&&t| (TAG_COUNT_BASE..TAG_COUNT_BASE + 0x20).contains(&t))
            .count();
        let n_rem = tags.len() - n;
        if n == 0 || n != n_rem {
            return Err(malformed("voxel container needs matching count and remission channels".into()));
        }
        let mut counts = Vec::with_capacity(n * decoded.spec.n_cells());
        let mut remissions = Vec::with_capacity(n * decoded.spec.n_cells());
        for (tag, payload) in &decoded.channels {
            let values = match payload {
                Payload::F32(v) => v,
                _ => return Err(malformed("voxel channels must be f32".into())),
            };
            if (TAG_COUNT_BASE..TAG_COUNT_BASE + 0x20).contains(tag) {
                counts.extend(values.iter().map(|&v| v as u32));
            } else {
                remissions.extend(values.iter().map(|&v| v as f64));
            }
        }
        return Ok(GridFile::Voxel {
            spec: decoded.spec,
            channels: n,
            counts,
            remissions,
        });
    }

    // Confidence grid: class/occupancy channels plus an optional lane-id
    // layer.
    let mut channel_tags = Vec::new();
    let mut values = Vec::new();
    let mut lane_ids = None;
    for (tag, payload) in &decoded.channels {
        match (*tag, payload) {
            (TAG_LANE_ID, Payload::U16(v)) => lane_ids = Some(v.clone()),
            (TAG_OCCUPANCY, Payload::F32(v)) => {
                channel_tags.push(ChannelTag::Occupancy);
                values.extend(v.iter().map(|&x| x as f64));
            }
            (t, Payload::F32(v)) if (TAG_CONF_BASE..TAG_CONF_BASE + 7).contains(&t) => {
                let class = SemanticClass::from_u8(t - TAG_CONF_BASE)
                    .ok_or_else(|| malformed(format!("confidence tag {t:#x}")))?;
                channel_tags.push(ChannelTag::Class(class));
                values.extend(v.iter().map(|&x| x as f64));
            }
            (t, _) => return Err(malformed(format!("unexpected channel tag {t:#x}"))),
        }
    }
    let mut grid = ConfidenceGrid::from_values(decoded.spec, channel_tags, values)
        .map_err(|e| malformed(e.to_string()))?;
    if let Some(ids) = lane_ids {
        grid.set_lane_ids(ids).map_err(|e| malformed(e.to_string()))?;
    }
    Ok(GridFile::Confidence(grid))
}

pub fn read_label_grid(path: &Path) -> Result<LabelGrid, DataIoError> {
    match read_grid(path)? {
        GridFile::Label(g) => Ok(g),
        _ => Err(DataIoError::Malformed {
            path: path.display().to_string(),
            message: "expected a label grid".into(),
        }),
    }
}

pub fn read_confidence_grid(path: &Path) -> Result<ConfidenceGrid, DataIoError> {
    match read_grid(path)? {
        GridFile::Confidence(g) => Ok(g),
        _ => Err(DataIoError::Malformed {
            path: path.display().to_string(),
            message: "expected a confidence grid".into(),
        }),
    }
}

/// Read a voxel volume; the vertical range is not stored in the container
/// and comes from configuration.
pub fn read_voxel_volume(path: &Path, y_min: f64, y_max: f64) -> Result<VoxelVolume, DataIoError> {
    match read_grid(path)? {
        GridFile::Voxel {
            spec,
            channels,
            counts,
            remissions,
        } => {
            let vspec = VoxelSpec {
                bev: spec,
                channels,
                y_min,
                y_max,
            };
            VoxelVolume::from_layers(vspec, counts, remissions).map_err(|e| {
                DataIoError::Malformed {
                    path: path.display().to_string(),
                    message: e.to_string(),
                }
            })
        }
        _ => Err(DataIoError::Malformed {
            path: path.display().to_string(),
            message: "expected a voxel volume".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bevbench_core::geom::{Frame, PointCloud};
    use bevbench_core::pseudolidar::voxelize;
    use nalgebra::Vector3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("bevg-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    pub(crate) fn random_label_grid(seed: u64) -> LabelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = GridSpec::new(rng.gen_range(4..40), rng.gen_range(4..40), 0.25).unwrap();
        let mut grid = LabelGrid::new(spec);
        let lanes = rng.gen_range(0..3u16);
        for row in 0..spec.rows {
            for col in 0..spec.cols {
                let class = SemanticClass::from_u8(rng.gen_range(0..7)).unwrap();
                if class == SemanticClass::Lane {
                    let id = if lanes == 0 { 1 } else { rng.gen_range(1..=lanes) };
                    grid.set_cell(row, col, class, id).unwrap();
                } else {
                    grid.set_cell(row, col, class, 0).unwrap();
                }
                grid.set_occluded(row, col, rng.gen_bool(0.2));
            }
        }
        // Make lane ids contiguous by renumbering.
        let mut used: Vec<u16> = grid.lane_ids().iter().copied().filter(|&i| i > 0).collect();
        used.sort();
        used.dedup();
        let mut fixed = LabelGrid::new(spec);
        for row in 0..spec.rows {
            for col in 0..spec.cols {
                let id = grid.lane_id_at(row, col);
                let new_id = if id > 0 {
                    used.iter().position(|&u| u == id).unwrap() as u16 + 1
                } else {
                    0
                };
                fixed
                    .set_cell(row, col, grid.class_at(row, col), new_id)
                    .unwrap();
                fixed.set_occluded(row, col, grid.occluded_at(row, col));
            }
        }
        fixed
    }

    #[test]
    fn label_grid_round_trip_bit_identical() {
        for seed in 0..5 {
            let grid = random_label_grid(seed);
            let path = tmp(&format!("label-{seed}.bevg"));
            write_label_grid(&path, &grid).unwrap();
            let back = read_label_grid(&path).unwrap();
            assert_eq!(back, grid);
            // Re-serialization is byte-identical.
            let bytes1 = std::fs::read(&path).unwrap();
            write_label_grid(&path, &back).unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), bytes1);
        }
    }

    #[test]
    fn confidence_grid_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = GridSpec::new(12, 9, 0.5).unwrap();
        let channels: Vec<ChannelTag> = SemanticClass::ALL
            .iter()
            .map(|&c| ChannelTag::Class(c))
            .collect();
        let mut grid = ConfidenceGrid::new(spec, channels);
        for ci in 0..7 {
            for r in 0..spec.rows {
                for c in 0..spec.cols {
                    // f32-exact values so the round trip is lossless.
                    grid.set(ci, r, c, (rng.gen_range(0..256) as f64) / 256.0);
                }
            }
        }
        grid.set_lane_ids(vec![1; spec.n_cells()]).unwrap();
        let path = tmp("conf.bevg");
        write_confidence_grid(&path, &grid).unwrap();
        let back = read_confidence_grid(&path).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn voxel_volume_round_trip() {
        let spec = VoxelSpec {
            bev: GridSpec::new(16, 16, 0.25).unwrap(),
            ..VoxelSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cloud = PointCloud::empty(Frame::Camera);
        for _ in 0..500 {
            cloud.push(
                Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-0.4..2.0), rng.gen_range(0.1..4.0)),
                // Remissions on a 1/256 lattice survive the f32 cast.
                (rng.gen_range(0..=256) as f64) / 256.0,
            );
        }
        let vol = voxelize(&cloud, &spec).unwrap();
        let path = tmp("voxel.bevg");
        write_voxel_volume(&path, &vol).unwrap();
        let back = read_voxel_volume(&path, spec.y_min, spec.y_max).unwrap();
        assert_eq!(back.spec(), vol.spec());
        assert_eq!(back.counts(), vol.counts());
        for (a, b) in back.remissions().iter().zip(vol.remissions().iter()) {
            assert!((a - *b as f32 as f64).abs() == 0.0);
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let path = tmp("bad-magic.bevg");
        std::fs::write(&path, b"XXXXrest-of-file-long-enough-to-read").unwrap();
        assert!(matches!(read_grid(&path), Err(DataIoError::BadMagic { .. })));
    }

    #[test]
    fn flipped_payload_byte_is_checksum_mismatch() {
        let grid = random_label_grid(99);
        let path = tmp("flip.bevg");
        write_label_grid(&path, &grid).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let i = bytes.len() / 2;
        bytes[i] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_grid(&path),
            Err(DataIoError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let grid = random_label_grid(7);
        let path = tmp("trunc.bevg");
        write_label_grid(&path, &grid).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            read_grid(&path),
            Err(DataIoError::TruncatedFile { .. })
        ));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let grid = random_label_grid(3);
        let path = tmp("version.bevg");
        write_label_grid(&path, &grid).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        // Fix the checksum so the version check is what fires.
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_grid(&path),
            Err(DataIoError::VersionUnsupported { version: 9, .. })
        ));
    }
}
