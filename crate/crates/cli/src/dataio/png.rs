//! PNG import/export: colorized label renders, grayscale confidence
//! renders, class-id segmentation images, and 16-bit depth maps
//! (depth = value / scale meters, 0 = invalid).

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use bevbench_core::geom::DepthMap;
use bevbench_core::grid::{ConfidenceGrid, LabelGrid, SemanticClass};
use bevbench_core::weaksup::{PointClass, SegImage};
use image::{GrayImage, ImageBuffer, ImageFormat, Luma, Rgb, RgbImage};

use super::DataIoError;

/// Per-lane-id render colors; id 1 (ego) is blue, the rest rotate.
pub const LANE_COLORS: [[u8; 3]; 8] = [
    [66, 133, 244],
    [255, 167, 38],
    [102, 187, 106],
    [236, 64, 122],
    [171, 71, 188],
    [255, 238, 88],
    [38, 198, 218],
    [141, 110, 99],
];

fn encode_png<P, C>(path: &Path, img: &ImageBuffer<P, C>) -> Result<(), DataIoError>
where
    P: image::Pixel + image::PixelWithColorType,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| DataIoError::Malformed {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    super::atomic_write(path, &bytes)
}

/// Render a label grid to an 8-bit color image; lane cells are colored per
/// lane id, other classes from the palette.
pub fn export_label_png(
    path: &Path,
    grid: &LabelGrid,
    palette: &BTreeMap<String, [u8; 3]>,
) -> Result<(), DataIoError> {
    let spec = grid.spec();
    let color_of = |class: SemanticClass| -> [u8; 3] {
        palette
            .get(class.name())
            .copied()
            .unwrap_or([255, 0, 255])
    };
    let mut img = RgbImage::new(spec.cols as u32, spec.rows as u32);
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            let color = match grid.class_at(row, col) {
                SemanticClass::Lane => {
                    let id = grid.lane_id_at(row, col) as usize;
                    LANE_COLORS[(id - 1) % LANE_COLORS.len()]
                }
                class => color_of(class),
            };
            img.put_pixel(col as u32, row as u32, Rgb(color));
        }
    }
    encode_png(path, &img)
}

/// Render one confidence channel as grayscale.
pub fn export_confidence_png(
    path: &Path,
    grid: &ConfidenceGrid,
    channel: usize,
) -> Result<(), DataIoError> {
    if channel >= grid.channels().len() {
        return Err(DataIoError::Malformed {
            path: path.display().to_string(),
            message: format!("channel {channel} out of range"),
        });
    }
    let spec = grid.spec();
    let mut img = GrayImage::new(spec.cols as u32, spec.rows as u32);
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            let v = (grid.get(channel, row, col).clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(col as u32, row as u32, Luma([v]));
        }
    }
    encode_png(path, &img)
}

/// Segmentation images are 8-bit grayscale with the point-class id as the
/// pixel value.
pub fn write_seg_png(path: &Path, seg: &SegImage) -> Result<(), DataIoError> {
    let mut img = GrayImage::new(seg.width as u32, seg.height as u32);
    for v in 0..seg.height {
        for u in 0..seg.width {
            img.put_pixel(u as u32, v as u32, Luma([seg.at(u, v) as u8]));
        }
    }
    encode_png(path, &img)
}

pub fn read_seg_png(path: &Path) -> Result<SegImage, DataIoError> {
    let img = image::open(path)
        .map_err(|e| DataIoError::Malformed {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .to_luma8();
    let (width, height) = (img.width() as usize, img.height() as usize);
    let mut classes = Vec::with_capacity(width * height);
    for pixel in img.pixels() {
        let class = PointClass::from_u8(pixel[0]).ok_or_else(|| DataIoError::Malformed {
            path: path.display().to_string(),
            message: format!("pixel value {} is not a point class", pixel[0]),
        })?;
        classes.push(class);
    }
    Ok(SegImage {
        width,
        height,
        classes,
    })
}

/// Depth maps are 16-bit grayscale PNGs, meters = value / scale, 0 invalid.
pub fn write_depth_png(path: &Path, depth: &DepthMap, scale: f64) -> Result<(), DataIoError> {
    let mut img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::new(depth.width as u32, depth.height as u32);
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.at(u, v);
            let value = if d > 0.0 {
                (d * scale).round().clamp(1.0, u16::MAX as f64) as u16
            } else {
                0
            };
            img.put_pixel(u as u32, v as u32, Luma([value]));
        }
    }
    encode_png(path, &img)
}

pub fn read_depth_png(path: &Path, scale: f64) -> Result<DepthMap, DataIoError> {
    let img = image::open(path)
        .map_err(|e| DataIoError::Malformed {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .to_luma16();
    let (width, height) = (img.width() as usize, img.height() as usize);
    let depths = img
        .pixels()
        .map(|p| {
            if p[0] == 0 {
                0.0
            } else {
                p[0] as f64 / scale
            }
        })
        .collect();
    DepthMap::new(width, height, depths).map_err(|e| DataIoError::Malformed {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use bevbench_core::grid::GridSpec;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("png-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn label_png_has_grid_dimensions_and_background_color() {
        let grid = LabelGrid::new(GridSpec::new(32, 48, 0.5).unwrap());
        let path = tmp("free.png");
        export_label_png(&path, &grid, &super::super::default_palette()).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!((img.width(), img.height()), (48, 32));
        let bg = super::super::default_palette()["free"];
        assert!(img.pixels().all(|p| p.0 == bg));
    }

    #[test]
    fn lane_cells_use_per_id_colors() {
        let mut grid = LabelGrid::new(GridSpec::new(4, 4, 1.0).unwrap());
        grid.set_cell(0, 0, SemanticClass::Lane, 1).unwrap();
        grid.set_cell(0, 1, SemanticClass::Lane, 2).unwrap();
        let path = tmp("lanes.png");
        export_label_png(&path, &grid, &super::super::default_palette()).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(0, 0).0, LANE_COLORS[0]);
        assert_eq!(img.get_pixel(1, 0).0, LANE_COLORS[1]);
    }

    #[test]
    fn seg_round_trip() {
        let mut seg = SegImage::filled(17, 9, PointClass::Unlabeled);
        seg.set(3, 4, PointClass::LaneMarker);
        seg.set(16, 8, PointClass::Vehicle);
        let path = tmp("seg.png");
        write_seg_png(&path, &seg).unwrap();
        assert_eq!(read_seg_png(&path).unwrap(), seg);
    }

    #[test]
    fn depth_round_trip_quantized() {
        let mut depths = vec![0.0; 12];
        depths[5] = 4.0;
        depths[7] = 80.25;
        let depth = DepthMap::new(4, 3, depths).unwrap();
        let path = tmp("depth.png");
        write_depth_png(&path, &depth, 256.0).unwrap();
        let back = read_depth_png(&path, 256.0).unwrap();
        assert_eq!(back.at(1, 1), 4.0);
        assert_eq!(back.at(3, 1), 80.25);
        assert_eq!(back.at(0, 0), 0.0);
    }

    #[test]
    fn render_is_byte_stable() {
        let mut grid = LabelGrid::new(GridSpec::new(8, 8, 1.0).unwrap());
        grid.set_cell(2, 2, SemanticClass::Road, 0).unwrap();
        let (p1, p2) = (tmp("stable1.png"), tmp("stable2.png"));
        export_label_png(&p1, &grid, &super::super::default_palette()).unwrap();
        export_label_png(&p2, &grid, &super::super::default_palette()).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }
}
