//! Majority (modal) filtering of label maps and indexed-colour PNG rendering.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::label_grid::{LabelGrid, Rgb, NODATA_LABEL};

pub const DEFAULT_KERNEL: usize = 7;

/// Twelve well-separated colours; the sentinel is drawn black.
pub const DEFAULT_PALETTE: [Rgb; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];

const NODATA_COLOUR: Rgb = [0, 0, 0];

/// [`DEFAULT_PALETTE`] when it has room for `n` labels, otherwise `n` colours
/// spaced around the hue circle.
pub fn palette_for(n: usize) -> Vec<Rgb> {
    if n <= DEFAULT_PALETTE.len() {
        return DEFAULT_PALETTE.to_vec();
    }
    (0..n)
        .map(|i| {
            let h = i as f64 * 6.0 / n as f64;
            let x = 1.0 - (h % 2.0 - 1.0).abs();
            let (r, g, b) = match h as usize {
                0 => (1.0, x, 0.0),
                1 => (x, 1.0, 0.0),
                2 => (0.0, 1.0, x),
                3 => (0.0, x, 1.0),
                4 => (x, 0.0, 1.0),
                _ => (1.0, 0.0, x),
            };
            let v = if i % 2 == 0 { 235.0 } else { 160.0 };
            [(r * v) as u8, (g * v) as u8, (b * v) as u8]
        })
        .collect()
}

/// Replace every labelled pixel by the modal label of the in-bounds,
/// labelled pixels of the `kernel x kernel` window around it. Ties keep the
/// centre label when it is among the modes, otherwise the lowest mode wins.
/// Sentinel pixels pass through.
pub fn majority_filter(grid: &LabelGrid, kernel: usize) -> Result<LabelGrid> {
    if kernel < 3 || kernel.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "majority filter kernel must be odd and >= 3, got {kernel}"
        )));
    }
    let (rows, cols) = (grid.rows(), grid.cols());
    let radius = kernel / 2;
    let n_labels = grid.label_count();
    let src = grid.labels();

    let out: Vec<u16> = (0..rows)
        .into_par_iter()
        .flat_map_iter(|r| {
            let mut counts = vec![0u32; n_labels];
            let mut touched = Vec::with_capacity(kernel * kernel);
            let r0 = r.saturating_sub(radius);
            let r1 = (r + radius).min(rows - 1);
            (0..cols)
                .map(|c| {
                    let centre = src[r * cols + c];
                    if centre == NODATA_LABEL {
                        return centre;
                    }
                    let c0 = c.saturating_sub(radius);
                    let c1 = (c + radius).min(cols - 1);
                    for rr in r0..=r1 {
                        for &l in &src[rr * cols + c0..=rr * cols + c1] {
                            if l != NODATA_LABEL {
                                if counts[l as usize] == 0 {
                                    touched.push(l);
                                }
                                counts[l as usize] += 1;
                            }
                        }
                    }
                    let top = touched
                        .iter()
                        .map(|&l| counts[l as usize])
                        .max()
                        .unwrap_or(0);
                    let winner = if counts[centre as usize] == top {
                        centre
                    } else {
                        touched
                            .iter()
                            .copied()
                            .filter(|&l| counts[l as usize] == top)
                            .min()
                            .unwrap_or(centre)
                    };
                    for &l in &touched {
                        counts[l as usize] = 0;
                    }
                    touched.clear();
                    winner
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut filtered = LabelGrid::new(rows, cols, out)?;
    filtered.palette = grid.palette.clone();
    filtered.geotransform = grid.geotransform;
    Ok(filtered)
}

/// Encode the grid as an 8-bit indexed PNG, one pixel per cell. Labels index
/// `palette` (or [`DEFAULT_PALETTE`]); the sentinel renders black.
pub fn render_map(grid: &LabelGrid, palette: Option<&[Rgb]>) -> Result<Vec<u8>> {
    let palette = palette
        .or(grid.palette.as_deref())
        .unwrap_or(&DEFAULT_PALETTE);
    if palette.is_empty() || palette.len() > 255 {
        return Err(Error::InvalidInput(format!(
            "palette must hold 1..=255 colours, got {}",
            palette.len()
        )));
    }
    let nodata_index = palette.len() as u8;
    let mut indices = Vec::with_capacity(grid.labels().len());
    for &l in grid.labels() {
        if l == NODATA_LABEL {
            indices.push(nodata_index);
        } else if (l as usize) < palette.len() {
            indices.push(l as u8);
        } else {
            return Err(Error::InvalidInput(format!(
                "label {l} exceeds a palette of {} colours",
                palette.len()
            )));
        }
    }
    let mut plte: Vec<u8> = palette.iter().flatten().copied().collect();
    plte.extend_from_slice(&NODATA_COLOUR);

    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, grid.cols() as u32, grid.rows() as u32);
        encoder.set_color(png::ColorType::Indexed);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_palette(plte);
        encoder.set_compression(png::Compression::Balanced);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::InvalidInput(format!("png encoding: {e}")))?;
        writer
            .write_image_data(&indices)
            .map_err(|e| Error::InvalidInput(format!("png encoding: {e}")))?;
    }
    Ok(bytes)
}

pub fn write_map(grid: &LabelGrid, palette: Option<&[Rgb]>, path: &Path) -> Result<()> {
    let bytes = render_map(grid, palette)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
