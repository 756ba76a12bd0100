//! Multiband raster grids and their flat-binary on-disk container.
//!
//! A dataset is a directory holding `header.json` and `bands.bin`. The payload
//! is `rows * cols * bands` little-endian `f32` values, band-sequential: all of
//! band 0 in row-major order, then band 1, and so on. Values are widened to
//! `f64` in memory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER_FILE: &str = "header.json";
pub const BANDS_FILE: &str = "bands.bin";
pub const RASTER_DTYPE: &str = "f32le";

/// Affine georeference, stored on disk as a 6-element array in the order
/// `[origin_x, origin_y, pixel_width, pixel_height, rotation_x, rotation_y]`.
///
/// Map coordinates of pixel corner `(row, col)` are
/// `x = origin_x + col * pixel_width + row * rotation_x` and
/// `y = origin_y + col * rotation_y + row * pixel_height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_width: f64,
    pub pixel_height: f64,
    pub rotation_x: f64,
    pub rotation_y: f64,
}

impl From<[f64; 6]> for GeoTransform {
    fn from(v: [f64; 6]) -> Self {
        GeoTransform {
            origin_x: v[0],
            origin_y: v[1],
            pixel_width: v[2],
            pixel_height: v[3],
            rotation_x: v[4],
            rotation_y: v[5],
        }
    }
}

impl From<GeoTransform> for [f64; 6] {
    fn from(g: GeoTransform) -> Self {
        [
            g.origin_x,
            g.origin_y,
            g.pixel_width,
            g.pixel_height,
            g.rotation_x,
            g.rotation_y,
        ]
    }
}

impl GeoTransform {
    /// Transform of the sub-window whose top-left pixel is `(row0, col0)`.
    pub fn shifted(&self, row0: usize, col0: usize) -> GeoTransform {
        let (r, c) = (row0 as f64, col0 as f64);
        GeoTransform {
            origin_x: self.origin_x + c * self.pixel_width + r * self.rotation_x,
            origin_y: self.origin_y + c * self.rotation_y + r * self.pixel_height,
            ..*self
        }
    }

    /// Transform after resampling by `row_factor = rows / target_rows` and
    /// `col_factor = cols / target_cols`.
    pub fn rescaled(&self, row_factor: f64, col_factor: f64) -> GeoTransform {
        GeoTransform {
            pixel_width: self.pixel_width * col_factor,
            pixel_height: self.pixel_height * row_factor,
            rotation_x: self.rotation_x * row_factor,
            rotation_y: self.rotation_y * col_factor,
            ..*self
        }
    }

    fn same_origin(&self, other: &GeoTransform) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        close(self.origin_x, other.origin_x) && close(self.origin_y, other.origin_y)
    }
}

/// Contents of `header.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodata_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geotransform: Option<GeoTransform>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    rows: usize,
    cols: usize,
    bands: usize,
    values: Vec<f64>,
    pub nodata_value: Option<f64>,
    pub geotransform: Option<GeoTransform>,
    pub band_names: Option<Vec<String>>,
}

impl RasterGrid {
    /// Build a grid from band-sequential values.
    pub fn new(rows: usize, cols: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::InvalidInput(format!(
                "raster dimensions must be at least 1, got {rows}x{cols}x{bands}"
            )));
        }
        if values.len() != rows * cols * bands {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols}x{bands} raster",
                values.len()
            )));
        }
        let grid = RasterGrid {
            rows,
            cols,
            bands,
            values,
            nodata_value: None,
            geotransform: None,
            band_names: None,
        };
        grid.check_finite()?;
        Ok(grid)
    }

    pub fn with_nodata(mut self, nodata: f64) -> Result<Self> {
        if !nodata.is_finite() {
            return Err(Error::InvalidInput("nodata value must be finite".into()));
        }
        self.nodata_value = Some(nodata);
        Ok(self)
    }

    pub fn with_geotransform(mut self, gt: GeoTransform) -> Self {
        self.geotransform = Some(gt);
        self
    }

    pub fn with_band_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.bands {
            return Err(Error::Dimension(format!(
                "{} band names for {} bands",
                names.len(),
                self.bands
            )));
        }
        self.band_names = Some(names);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, row: usize, col: usize, band: usize) -> f64 {
        self.values[self.offset(row, col, band)]
    }

    /// Row-major slice of one band.
    pub fn band(&self, band: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.values[band * n..(band + 1) * n]
    }

    #[inline]
    fn offset(&self, row: usize, col: usize, band: usize) -> usize {
        (band * self.rows + row) * self.cols + col
    }

    pub fn is_nodata_value(&self, v: f64) -> bool {
        self.nodata_value.is_some_and(|nd| v == nd)
    }

    /// Per-pixel validity in row-major order. A pixel is invalid when any of
    /// its bands holds the nodata value.
    pub fn valid_mask(&self) -> Vec<bool> {
        let n = self.rows * self.cols;
        let mut mask = vec![true; n];
        if let Some(nd) = self.nodata_value {
            for b in 0..self.bands {
                for (m, &v) in mask.iter_mut().zip(self.band(b)) {
                    if v == nd {
                        *m = false;
                    }
                }
            }
        }
        mask
    }

    fn check_finite(&self) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if !v.is_finite() && !self.is_nodata_value(v) {
                let n = self.rows * self.cols;
                let (b, p) = (i / n, i % n);
                return Err(Error::NonFinite(format!(
                    "band {b} row {} col {} holds {v}",
                    p / self.cols,
                    p % self.cols
                )));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> RasterHeader {
        RasterHeader {
            rows: self.rows,
            cols: self.cols,
            bands: self.bands,
            dtype: RASTER_DTYPE.to_string(),
            band_names: self.band_names.clone(),
            nodata_value: self.nodata_value,
            geotransform: self.geotransform,
        }
    }
}

pub fn read_header(dir: &Path) -> Result<RasterHeader> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let header: RasterHeader =
        serde_json::from_str(&text).map_err(|e| Error::header(&path, e.to_string()))?;
    if header.dtype != RASTER_DTYPE {
        return Err(Error::header(
            &path,
            format!(
                "dtype must be \"{RASTER_DTYPE}\", found \"{}\"",
                header.dtype
            ),
        ));
    }
    if header.rows == 0 || header.cols == 0 || header.bands == 0 {
        return Err(Error::header(&path, "rows, cols and bands must be >= 1"));
    }
    if let Some(names) = &header.band_names {
        if names.len() != header.bands {
            return Err(Error::header(
                &path,
                format!("{} band names for {} bands", names.len(), header.bands),
            ));
        }
    }
    if header.nodata_value.is_some_and(|v| !v.is_finite()) {
        return Err(Error::header(&path, "nodata_value must be finite"));
    }
    Ok(header)
}

pub fn read_raster(dir: &Path) -> Result<RasterGrid> {
    let header = read_header(dir)?;
    let path = dir.join(BANDS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = header.rows * header.cols * header.bands * 4;
    if bytes.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: bytes.len(),
        });
    }
    // Snap stored sentinels back to the exact header value.
    let nodata32 = header.nodata_value.map(|v| v as f32);
    let values = bytes
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            match (nodata32, header.nodata_value) {
                (Some(nd32), Some(nd)) if v == nd32 => nd,
                _ => f64::from(v),
            }
        })
        .collect();
    let grid = RasterGrid {
        rows: header.rows,
        cols: header.cols,
        bands: header.bands,
        values,
        nodata_value: header.nodata_value,
        geotransform: header.geotransform,
        band_names: header.band_names,
    };
    grid.check_finite()?;
    Ok(grid)
}

pub fn write_raster(grid: &RasterGrid, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header_path = dir.join(HEADER_FILE);
    let text = serde_json::to_string_pretty(&grid.header())
        .map_err(|e| Error::header(&header_path, e.to_string()))?;
    fs::write(&header_path, text).map_err(|e| Error::io(&header_path, e))?;

    let mut payload = Vec::with_capacity(grid.values.len() * 4);
    for &v in &grid.values {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let bands_path = dir.join(BANDS_FILE);
    fs::write(&bands_path, payload).map_err(|e| Error::io(&bands_path, e))
}

/// Nearest-neighbour resampling with the pixel-centre index rule
/// `src = floor((dst + 0.5) * src_len / dst_len)`.
pub fn resample_nearest(
    grid: &RasterGrid,
    target_rows: usize,
    target_cols: usize,
) -> Result<RasterGrid> {
    if target_rows == 0 || target_cols == 0 {
        return Err(Error::InvalidInput(
            "resample target dimensions must be at least 1".into(),
        ));
    }
    if target_rows == grid.rows && target_cols == grid.cols {
        return Ok(grid.clone());
    }
    let row_index = nearest_indices(grid.rows, target_rows);
    let col_index = nearest_indices(grid.cols, target_cols);

    let mut values = Vec::with_capacity(target_rows * target_cols * grid.bands);
    for b in 0..grid.bands {
        let band = grid.band(b);
        for &sr in &row_index {
            let src_row = &band[sr * grid.cols..(sr + 1) * grid.cols];
            values.extend(col_index.iter().map(|&sc| src_row[sc]));
        }
    }
    Ok(RasterGrid {
        rows: target_rows,
        cols: target_cols,
        bands: grid.bands,
        values,
        nodata_value: grid.nodata_value,
        geotransform: grid.geotransform.map(|gt| {
            gt.rescaled(
                grid.rows as f64 / target_rows as f64,
                grid.cols as f64 / target_cols as f64,
            )
        }),
        band_names: grid.band_names.clone(),
    })
}

fn nearest_indices(src_len: usize, dst_len: usize) -> Vec<usize> {
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * src_len as f64 / dst_len as f64).floor() as usize;
            s.min(src_len - 1)
        })
        .collect()
}

/// Resample every grid to the finest grid present and concatenate bands in
/// list order. A pixel is nodata in the result if any source marks it so.
pub fn stack_bands(grids: &[RasterGrid]) -> Result<RasterGrid> {
    let first = grids
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot stack an empty list of rasters".into()))?;

    let mut reference: Option<&GeoTransform> = None;
    for g in grids {
        if let Some(gt) = &g.geotransform {
            match reference {
                None => reference = Some(gt),
                Some(r) if !r.same_origin(gt) => {
                    return Err(Error::InvalidInput(format!(
                        "incompatible geotransform origins ({}, {}) and ({}, {})",
                        r.origin_x, r.origin_y, gt.origin_x, gt.origin_y
                    )));
                }
                Some(_) => {}
            }
        }
    }

    let rows = grids.iter().map(|g| g.rows).max().unwrap_or(first.rows);
    let cols = grids.iter().map(|g| g.cols).max().unwrap_or(first.cols);
    let resampled = grids
        .iter()
        .map(|g| resample_nearest(g, rows, cols))
        .collect::<Result<Vec<_>>>()?;

    let nodata = grids.iter().find_map(|g| g.nodata_value);
    let n = rows * cols;
    let mut valid = vec![true; n];
    for g in &resampled {
        for (v, ok) in valid.iter_mut().zip(g.valid_mask()) {
            *v &= ok;
        }
    }

    let bands: usize = resampled.iter().map(|g| g.bands).sum();
    let mut values = Vec::with_capacity(n * bands);
    for g in &resampled {
        values.extend_from_slice(&g.values);
    }
    if let Some(nd) = nodata {
        for b in 0..bands {
            for (p, ok) in valid.iter().enumerate() {
                if !ok {
                    values[b * n + p] = nd;
                }
            }
        }
    }

    let geotransform = grids
        .iter()
        .find(|g| g.rows == rows && g.cols == cols && g.geotransform.is_some())
        .and_then(|g| g.geotransform)
        .or_else(|| resampled.iter().find_map(|g| g.geotransform));

    let band_names = if grids.iter().all(|g| g.band_names.is_some()) {
        Some(
            grids
                .iter()
                .flat_map(|g| g.band_names.clone().unwrap_or_default())
                .collect(),
        )
    } else {
        None
    };

    Ok(RasterGrid {
        rows,
        cols,
        bands,
        values,
        nodata_value: nodata,
        geotransform,
        band_names,
    })
}

/// Exact sub-window of every band.
pub fn crop(
    grid: &RasterGrid,
    row0: usize,
    col0: usize,
    rows: usize,
    cols: usize,
) -> Result<RasterGrid> {
    if rows == 0 || cols == 0 || row0 + rows > grid.rows || col0 + cols > grid.cols {
        return Err(Error::InvalidInput(format!(
            "crop window rows {row0}..{} cols {col0}..{} outside a {}x{} raster",
            row0 + rows,
            col0 + cols,
            grid.rows,
            grid.cols
        )));
    }
    let mut values = Vec::with_capacity(rows * cols * grid.bands);
    for b in 0..grid.bands {
        for r in row0..row0 + rows {
            let start = grid.offset(r, col0, b);
            values.extend_from_slice(&grid.values[start..start + cols]);
        }
    }
    Ok(RasterGrid {
        rows,
        cols,
        bands: grid.bands,
        values,
        nodata_value: grid.nodata_value,
        geotransform: grid.geotransform.map(|gt| gt.shifted(row0, col0)),
        band_names: grid.band_names.clone(),
    })
}
