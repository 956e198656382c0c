//! Conversions between pixel heatmaps, coarse cell grids and binary masks.
//!
//! Pixels map to grid cells through `floor(p * n / dim)`; max-pooling,
//! nearest-neighbor upscaling and the toy model's patch features all share
//! this bucket map, so pooling followed by upscaling is exact on
//! grid-constant images. Binarization is strict (`value > threshold`);
//! a value exactly at the threshold stays off.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze_heatmap::Heatmap;
use crate::ingest::EllipseAnnotation;

/// Default side of the cell grid supervised by the localization losses.
pub const DEFAULT_GRID_SIDE: usize = 32;
/// Default binarization threshold for gaze heatmap annotations.
pub const DEFAULT_HEATMAP_THRESHOLD: f64 = 0.15;

/// An `n x n` boolean grid marking cells that contain evidence of a label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridAnnotation {
    n: usize,
    cells: Vec<bool>,
}

impl GridAnnotation {
    pub fn empty(n: usize) -> Self {
        GridAnnotation {
            n,
            cells: vec![false; n * n],
        }
    }

    pub fn from_cells(n: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: (n, n),
                got: (cells.len(), 1),
            });
        }
        Ok(GridAnnotation { n, cells })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.n + col]
    }

    pub fn count_true(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// 0/1 heatmap view, for upscaling back to pixel space.
    pub fn to_heatmap(&self) -> Heatmap {
        let values = self.cells.iter().map(|&c| f64::from(u8::from(c))).collect();
        Heatmap::from_values(self.n, self.n, values).expect("square grid")
    }

    /// CSV of 0/1 values, `n` rows of `n` columns.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.n * (2 * self.n + 1));
        for row in self.cells.chunks(self.n) {
            let mut first = true;
            for &cell in row {
                if !first {
                    out.push(',');
                }
                out.push(if cell { '1' } else { '0' });
                first = false;
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cells = Vec::new();
        let mut n = 0usize;
        for (idx, line) in content.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Vec<bool> = line
                .split(',')
                .map(|f| match f.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::MalformedRow {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        column: 1,
                        message: format!("expected 0 or 1, got {other:?}"),
                    }),
                })
                .collect::<Result<_>>()?;
            if n == 0 {
                n = row.len();
            }
            cells.extend(row);
        }
        GridAnnotation::from_cells(n, cells)
    }
}

/// A full-resolution boolean mask over image pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// In-place OR with another mask of the same shape.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                got: (other.width, other.height),
            });
        }
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        Ok(())
    }
}

/// Max-pools a heatmap onto an `n x n` grid.
///
/// Every pixel belongs to exactly one bucket via `floor(p * n / dim)`;
/// non-divisible dimensions simply produce uneven buckets.
pub fn maxpool_to_grid(h: &Heatmap, n: usize) -> Result<Heatmap> {
    if n == 0 {
        return Err(Error::InvalidConfig("grid side must be >= 1".into()));
    }
    if h.width() < n || h.height() < n {
        return Err(Error::GridLargerThanImage {
            n,
            width: h.width(),
            height: h.height(),
        });
    }
    let mut pooled = vec![f64::NEG_INFINITY; n * n];
    for y in 0..h.height() {
        let row = y * n / h.height();
        for x in 0..h.width() {
            let col = x * n / h.width();
            let cell = &mut pooled[row * n + col];
            *cell = cell.max(h.get(x, y));
        }
    }
    Heatmap::from_values(n, n, pooled)
}

/// Strict threshold over a square map, producing a grid annotation.
pub fn binarize_grid(h: &Heatmap, threshold: f64) -> Result<GridAnnotation> {
    if h.width() != h.height() {
        return Err(Error::DimensionMismatch {
            expected: (h.width(), h.width()),
            got: (h.width(), h.height()),
        });
    }
    let cells = h.values().iter().map(|&v| v > threshold).collect();
    GridAnnotation::from_cells(h.width(), cells)
}

/// Strict threshold at pixel level.
pub fn binarize_mask(h: &Heatmap, threshold: f64) -> BinaryMask {
    BinaryMask {
        width: h.width(),
        height: h.height(),
        bits: h.values().iter().map(|&v| v > threshold).collect(),
    }
}

/// Pool to `n x n` then binarize; the usual path from a gaze heatmap to the
/// annotation grid.
pub fn heatmap_to_annotation(h: &Heatmap, n: usize, threshold: f64) -> Result<GridAnnotation> {
    binarize_grid(&maxpool_to_grid(h, n)?, threshold)
}

/// Nearest-neighbor upscaling of a grid-resolution map to pixel
/// resolution. Pixel (x, y) takes the value of cell
/// (floor(y*n/height), floor(x*n/width)), the exact inverse of the
/// pooling bucket map.
pub fn upscale_nearest(grid: &Heatmap, width: usize, height: usize) -> Result<Heatmap> {
    if width < grid.width() || height < grid.height() {
        return Err(Error::GridLargerThanImage {
            n: grid.width().max(grid.height()),
            width,
            height,
        });
    }
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = y * grid.height() / height;
        for x in 0..width {
            let col = x * grid.width() / width;
            values.push(grid.get(col, row));
        }
    }
    Heatmap::from_values(width, height, values)
}

/// Rasterizes an ellipse with the pixel-center inclusion test
/// `((x+0.5-cx)/rx)^2 + ((y+0.5-cy)/ry)^2 <= 1`.
pub fn rasterize_ellipse(e: &EllipseAnnotation, width: usize, height: usize) -> Result<BinaryMask> {
    let mut mask = BinaryMask::new(width, height);
    let x_lo = ((e.cx - e.rx - 1.0).floor().max(0.0)) as usize;
    let x_hi = (((e.cx + e.rx + 1.0).ceil()) as usize).min(width);
    let y_lo = ((e.cy - e.ry - 1.0).floor().max(0.0)) as usize;
    let y_hi = (((e.cy + e.ry + 1.0).ceil()) as usize).min(height);
    let mut any = false;
    for y in y_lo..y_hi {
        let dy = (y as f64 + 0.5 - e.cy) / e.ry;
        for x in x_lo..x_hi {
            let dx = (x as f64 + 0.5 - e.cx) / e.rx;
            if dx * dx + dy * dy <= 1.0 {
                mask.set(x, y, true);
                any = true;
            }
        }
    }
    if !any {
        return Err(Error::EmptyRaster { width, height });
    }
    Ok(mask)
}

/// OR-combination of all ellipse masks in a list (one label's regions).
pub fn rasterize_label_ellipses(
    ellipses: &[EllipseAnnotation],
    width: usize,
    height: usize,
) -> Result<BinaryMask> {
    let mut combined = BinaryMask::new(width, height);
    for e in ellipses {
        combined.union_with(&rasterize_ellipse(e, width, height)?)?;
    }
    Ok(combined)
}
