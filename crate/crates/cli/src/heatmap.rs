//! Binary graymap (P5) rendering of matrices, one pixel per cell.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::CliResult;
use crate::io::{write_atomic, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatmapScale {
    /// Values at `-scale` map to 0, zero to 128 and `+scale` to 255.
    pub scale: f64,
    pub rows: usize,
    pub cols: usize,
}

/// Gray level of `v`; values beyond `±scale` are clamped.
pub fn gray_level(v: f64, scale: f64) -> u8 {
    let ratio = if scale > 0.0 && v.is_finite() { v / scale } else { 0.0 };
    (128.0 + 127.5 * ratio).floor().clamp(0.0, 255.0) as u8
}

pub fn render_pgm(m: &DMatrix<f64>, scale: f64) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.reserve(rows * cols);
    for i in 0..rows {
        out.extend((0..cols).map(|j| gray_level(m[(i, j)], scale)));
    }
    out
}

/// Largest absolute entry over several matrices, for a shared scale.
pub fn shared_scale<'a>(ms: impl IntoIterator<Item = &'a DMatrix<f64>>) -> f64 {
    ms.into_iter().flat_map(|m| m.iter()).filter(|v| v.is_finite()).fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Writes `path` (the image) and the same path with a `.json` extension
/// (the scale).
pub fn emit_heatmap(m: &DMatrix<f64>, path: &Path, scale: f64) -> CliResult<()> {
    write_atomic(path, &render_pgm(m, scale))?;
    let info = HeatmapScale { scale, rows: m.nrows(), cols: m.ncols() };
    write_json(&path.with_extension("json"), &info)
}
