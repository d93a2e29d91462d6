//! Portable anymap writers for kernels, heatmaps and masks. Rows are written
//! top-down, i.e. the grid's highest `j` first, so images appear north-up.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RasterGrid;
use crate::heatmap::BinaryGrid;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Binary 16-bit graymap (`P5`, maxval 65535, big-endian samples).
pub fn encode_pgm16(width: usize, height: usize, samples: &[u16]) -> Vec<u8> {
    assert_eq!(samples.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for j in (0..height).rev() {
        for &s in &samples[j * width..(j + 1) * width] {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }
    out
}

/// Binary bitmap (`P4`); 1 is black.
pub fn encode_pbm(mask: &BinaryGrid) -> Vec<u8> {
    let (w, h) = (mask.spec.width, mask.spec.height);
    let mut out = format!("P4\n{w} {h}\n").into_bytes();
    for j in (0..h).rev() {
        let mut row = vec![0u8; w.div_ceil(8)];
        for i in 0..w {
            if mask.get(i, j) {
                row[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out.write_all(&row).expect("vec write");
    }
    out
}

/// Kernel quantization: `v ↦ round((v + alpha) / (1 + alpha) · 65535)`.
pub fn quantize_kernel_value(v: f64, alpha: f64) -> u16 {
    (((v + alpha) / (1.0 + alpha)) * 65535.0).round().clamp(0.0, 65535.0) as u16
}

pub fn write_kernel_pgm(path: &Path, grid: &RasterGrid, alpha: f64) -> Result<()> {
    let samples: Vec<u16> = grid.values.iter().map(|v| quantize_kernel_value(*v, alpha)).collect();
    write_file(path, &encode_pgm16(grid.width(), grid.height(), &samples))
}

/// Min-max quantized graymap; a flat grid maps to zero.
pub fn write_minmax_pgm(path: &Path, grid: &RasterGrid) -> Result<()> {
    let (lo, hi) = (grid.min(), grid.max());
    let span = hi - lo;
    let samples: Vec<u16> = grid
        .values
        .iter()
        .map(|v| if span > 0.0 { (((v - lo) / span) * 65535.0).round() as u16 } else { 0 })
        .collect();
    write_file(path, &encode_pgm16(grid.width(), grid.height(), &samples))
}

pub fn write_pbm(path: &Path, mask: &BinaryGrid) -> Result<()> {
    write_file(path, &encode_pbm(mask))
}
