//! Heatmaps of patch-level values and mask overlays.

use ndarray::Array3;

use crate::error::{Error, Result};

/// Colormap stops at t = 0, 0.25, 0.5, 0.75, 1 (sampled from viridis),
/// linearly interpolated in RGB.
pub const COLORMAP: [[f64; 3]; 5] = [
    [0.267, 0.005, 0.329],
    [0.230, 0.322, 0.546],
    [0.128, 0.567, 0.551],
    [0.369, 0.789, 0.383],
    [0.993, 0.906, 0.144],
];

/// Overlay color used by the CLI for segmentation masks.
pub const MASK_COLOR: [f64; 3] = [1.0, 0.0, 0.0];

pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0) * (COLORMAP.len() - 1) as f64;
    let i = (t.floor() as usize).min(COLORMAP.len() - 2);
    let f = t - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    [0, 1, 2].map(|c| a[c] + f * (b[c] - a[c]))
}

/// Min-max normalizes `values` (row-major over `grid`) and maps them through
/// [`COLORMAP`], each cell drawn as a `cell`×`cell` block. A constant input
/// renders uniformly in the middle color.
pub fn render_heatmap(values: &[f64], grid: (usize, usize), cell: usize) -> Result<Array3<f64>> {
    let (rows, cols) = grid;
    if values.len() != rows * cols || cell == 0 {
        return Err(Error::shape(format!("{} values for a {rows}×{cols} grid (cell {cell})", values.len())));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("heatmap value {i} is not finite")));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let colors: Vec<[f64; 3]> = values
        .iter()
        .map(|&v| colormap(if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }))
        .collect();
    Ok(Array3::from_shape_fn((3, rows * cell, cols * cell), |(c, y, x)| colors[(y / cell) * cols + x / cell][c]))
}

/// Alpha-blends `color` over `image` wherever the patch-level `mask` is set.
/// The mask is upsampled nearest-neighbor; gray images are expanded to RGB.
pub fn overlay_mask(image: &Array3<f64>, mask: &[bool], grid: (usize, usize), color: [f64; 3], alpha: f64) -> Result<Array3<f64>> {
    let (c, h, w) = image.dim();
    let (rows, cols) = grid;
    if mask.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::shape(format!("mask of {} entries for a {rows}×{cols} grid", mask.len())));
    }
    if c != 1 && c != 3 {
        return Err(Error::shape(format!("overlay needs 1 or 3 channels, got {c}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(Array3::from_shape_fn((3, h, w), |(ch, y, x)| {
        let base = image[[if c == 1 { 0 } else { ch }, y, x]];
        if mask[(y * rows / h) * cols + x * cols / w] {
            (1.0 - alpha) * base + alpha * color[ch]
        } else {
            base
        }
    }))
}
