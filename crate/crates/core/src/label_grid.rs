//! Integer cluster/class maps and their on-disk container (`header.json` plus
//! `labels.bin`, row-major little-endian `u16`, 65535 marking nodata).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{GeoTransform, HEADER_FILE};

pub const NODATA_LABEL: u16 = u16::MAX;
pub const LABELS_FILE: &str = "labels.bin";
pub const LABEL_DTYPE: &str = "u16le";

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHeader {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<Vec<Rgb>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geotransform: Option<GeoTransform>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    rows: usize,
    cols: usize,
    labels: Vec<u16>,
    pub palette: Option<Vec<Rgb>>,
    pub geotransform: Option<GeoTransform>,
}

impl LabelGrid {
    pub fn new(rows: usize, cols: usize, labels: Vec<u16>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "label grid dimensions must be at least 1, got {rows}x{cols}"
            )));
        }
        if labels.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} labels for a {rows}x{cols} grid",
                labels.len()
            )));
        }
        Ok(LabelGrid {
            rows,
            cols,
            labels,
            palette: None,
            geotransform: None,
        })
    }

    pub fn filled(rows: usize, cols: usize, label: u16) -> Result<Self> {
        Self::new(rows, cols, vec![label; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: u16) {
        self.labels[row * self.cols + col] = label;
    }

    /// Largest non-sentinel label plus one, or 0 for an all-nodata grid.
    pub fn label_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l != NODATA_LABEL)
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Number of cells whose labels differ between two same-shaped grids.
    pub fn disagreement(&self, other: &LabelGrid) -> usize {
        self.labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn header(&self) -> LabelHeader {
        LabelHeader {
            rows: self.rows,
            cols: self.cols,
            dtype: LABEL_DTYPE.to_string(),
            palette: self.palette.clone(),
            geotransform: self.geotransform,
        }
    }
}

pub fn read_label_grid(dir: &Path) -> Result<LabelGrid> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let header: LabelHeader =
        serde_json::from_str(&text).map_err(|e| Error::header(&path, e.to_string()))?;
    if header.dtype != LABEL_DTYPE {
        return Err(Error::header(
            &path,
            format!(
                "dtype must be \"{LABEL_DTYPE}\", found \"{}\"",
                header.dtype
            ),
        ));
    }
    if header.rows == 0 || header.cols == 0 {
        return Err(Error::header(&path, "rows and cols must be >= 1"));
    }
    let bin = dir.join(LABELS_FILE);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected = header.rows * header.cols * 2;
    if bytes.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: bytes.len(),
        });
    }
    let labels = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(LabelGrid {
        rows: header.rows,
        cols: header.cols,
        labels,
        palette: header.palette,
        geotransform: header.geotransform,
    })
}

pub fn write_label_grid(grid: &LabelGrid, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header_path = dir.join(HEADER_FILE);
    let text = serde_json::to_string_pretty(&grid.header())
        .map_err(|e| Error::header(&header_path, e.to_string()))?;
    fs::write(&header_path, text).map_err(|e| Error::io(&header_path, e))?;
    let payload: Vec<u8> = grid.labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    let bin = dir.join(LABELS_FILE);
    fs::write(&bin, payload).map_err(|e| Error::io(&bin, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_palette() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = LabelGrid::new(2, 3, vec![0, 1, 2, NODATA_LABEL, 1, 0]).unwrap();
        g.palette = Some(vec![[255, 0, 0], [0, 255, 0], [0, 0, 255]]);
        write_label_grid(&g, dir.path()).unwrap();
        let bytes = fs::read(dir.path().join(LABELS_FILE)).unwrap();
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[6..8], &[0xff, 0xff]);
        assert_eq!(read_label_grid(dir.path()).unwrap(), g);
        assert_eq!(g.label_count(), 3);
    }

    #[test]
    fn rejects_bad_payload() {
        let dir = tempfile::tempdir().unwrap();
        let g = LabelGrid::filled(2, 2, 0).unwrap();
        write_label_grid(&g, dir.path()).unwrap();
        fs::write(dir.path().join(LABELS_FILE), [0u8; 6]).unwrap();
        assert!(matches!(
            read_label_grid(dir.path()),
            Err(Error::PayloadSize {
                expected: 8,
                found: 6
            })
        ));
    }
}
