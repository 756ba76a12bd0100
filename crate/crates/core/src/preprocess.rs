//! Raster ⇄ pixel-table conversion and per-band min-max scaling.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_grid::{LabelGrid, NODATA_LABEL};
use crate::raster::RasterGrid;

/// Valid pixels of a raster as rows of a `n_pixels x n_bands` table.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMatrix {
    pub values: Array2<f64>,
    /// Source `(row, col)` of each table row.
    pub index_map: Vec<(usize, usize)>,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl PixelMatrix {
    pub fn new(
        values: Array2<f64>,
        index_map: Vec<(usize, usize)>,
        grid_rows: usize,
        grid_cols: usize,
    ) -> Result<Self> {
        if values.nrows() != index_map.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} index entries",
                values.nrows(),
                index_map.len()
            )));
        }
        if let Some(&(r, c)) = index_map
            .iter()
            .find(|&&(r, c)| r >= grid_rows || c >= grid_cols)
        {
            return Err(Error::InvalidInput(format!(
                "index ({r}, {c}) outside a {grid_rows}x{grid_cols} grid"
            )));
        }
        Ok(PixelMatrix {
            values,
            index_map,
            grid_rows,
            grid_cols,
        })
    }

    /// Wrap a bare table whose rows are laid out along a single grid row.
    pub fn from_table(values: Array2<f64>) -> Self {
        let n = values.nrows();
        PixelMatrix {
            values,
            index_map: (0..n).map(|i| (0, i)).collect(),
            grid_rows: 1,
            grid_cols: n.max(1),
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bands(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// Same pixels, new feature values (e.g. latent features).
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        PixelMatrix::new(
            values,
            self.index_map.clone(),
            self.grid_rows,
            self.grid_cols,
        )
    }

    /// Scatter the table back onto the source grid as a raster with `bands =
    /// n_bands`, filling pixels absent from the index map with `nodata`.
    pub fn to_raster(&self, nodata: f64) -> Result<RasterGrid> {
        let n = self.grid_rows * self.grid_cols;
        let bands = self.n_bands();
        let mut values = vec![nodata; n * bands];
        for (i, &(r, c)) in self.index_map.iter().enumerate() {
            for b in 0..bands {
                values[b * n + r * self.grid_cols + c] = self.values[[i, b]];
            }
        }
        let grid = RasterGrid::new(self.grid_rows, self.grid_cols, bands, values)?;
        if self.index_map.len() < n {
            grid.with_nodata(nodata)
        } else {
            Ok(grid)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingParams {
    pub fn fit(values: ArrayView2<'_, f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::InvalidInput(
                "cannot fit scaling on an empty matrix".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("scaling input holds {v}")));
        }
        let (min, max) = values
            .axis_iter(Axis(1))
            .map(|col| {
                col.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .unzip();
        Ok(ScalingParams { min, max })
    }

    /// Map each band onto [0, 1]; constant bands become 0.
    pub fn apply(&self, values: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if values.ncols() != self.min.len() {
            return Err(Error::Dimension(format!(
                "scaling fit on {} bands, applied to {}",
                self.min.len(),
                values.ncols()
            )));
        }
        let mut out = values.to_owned();
        out.axis_iter_mut(Axis(1))
            .into_par_iter()
            .enumerate()
            .for_each(|(b, mut col)| {
                let (lo, hi) = (self.min[b], self.max[b]);
                let span = hi - lo;
                col.mapv_inplace(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
            });
        Ok(out)
    }

    pub fn invert(&self, scaled: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if scaled.ncols() != self.min.len() {
            return Err(Error::Dimension(format!(
                "scaling fit on {} bands, inverted on {}",
                self.min.len(),
                scaled.ncols()
            )));
        }
        let mut out = scaled.to_owned();
        for (b, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, hi) = (self.min[b], self.max[b]);
            col.mapv_inplace(|v| lo + v * (hi - lo));
        }
        Ok(out)
    }
}

/// Valid pixels in row-major scan order.
pub fn build_pixel_matrix(grid: &RasterGrid) -> Result<PixelMatrix> {
    let mask = grid.valid_mask();
    let index_map: Vec<(usize, usize)> = mask
        .iter()
        .enumerate()
        .filter(|(_, &ok)| ok)
        .map(|(p, _)| (p / grid.cols(), p % grid.cols()))
        .collect();
    if index_map.is_empty() {
        return Err(Error::InvalidInput("raster has no valid pixels".into()));
    }
    let bands = grid.bands();
    let mut values = Array2::zeros((index_map.len(), bands));
    for b in 0..bands {
        let band = grid.band(b);
        for (i, &(r, c)) in index_map.iter().enumerate() {
            values[[i, b]] = band[r * grid.cols() + c];
        }
    }
    PixelMatrix::new(values, index_map, grid.rows(), grid.cols())
}

pub fn minmax_scale(matrix: &PixelMatrix) -> Result<(PixelMatrix, ScalingParams)> {
    let params = ScalingParams::fit(matrix.view())?;
    let scaled = params.apply(matrix.view())?;
    Ok((matrix.with_values(scaled)?, params))
}

pub fn labels_to_grid(
    labels: &[u16],
    index_map: &[(usize, usize)],
    rows: usize,
    cols: usize,
) -> Result<LabelGrid> {
    if labels.len() != index_map.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} index entries",
            labels.len(),
            index_map.len()
        )));
    }
    let mut grid = LabelGrid::filled(rows, cols, NODATA_LABEL)?;
    for (&label, &(r, c)) in labels.iter().zip(index_map) {
        if r >= rows || c >= cols {
            return Err(Error::InvalidInput(format!(
                "index ({r}, {c}) outside a {rows}x{cols} grid"
            )));
        }
        grid.set(r, c, label);
    }
    Ok(grid)
}
