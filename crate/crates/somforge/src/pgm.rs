//! Binary PGM (P5, maxval 255) rasters for sample grids and templates.

use std::path::Path;

use crate::somt::atomic_write;
use crate::{Error, Result};

/// Serialize a P5 PGM. Header is exactly `P5\n{w} {h}\n255\n`.
pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::Shape(format!(
            "pgm: {} pixels for {width}x{height}",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Min-max scaling used when quantizing to 8 bits; recorded in the sidecar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridScale {
    pub min: f64,
    pub max: f64,
}

/// Pack `count` n-by-n images into a near-square grid, linearly scaled to
/// 0..=255 over the global min/max. Returns (width, height, pixels, scale).
pub fn grid_quantize(
    images: &[f32],
    n: usize,
    count: usize,
) -> Result<(usize, usize, Vec<u8>, GridScale)> {
    if images.len() != count * n * n || count == 0 {
        return Err(Error::Shape(format!(
            "grid: {} values for {count} images of {n}x{n}",
            images.len()
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in images {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };

    let cols = (count as f64).sqrt().ceil() as usize;
    let rows = count.div_ceil(cols);
    let (w, h) = (cols * n, rows * n);
    let mut pixels = vec![0u8; w * h];
    for i in 0..count {
        let (gr, gc) = (i / cols, i % cols);
        for r in 0..n {
            for c in 0..n {
                let v = images[i * n * n + r * n + c] as f64;
                let q = ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8;
                pixels[(gr * n + r) * w + gc * n + c] = q;
            }
        }
    }
    Ok((w, h, pixels, GridScale { min: lo, max: hi }))
}

/// Write a sample grid plus its `.scale.txt` sidecar describing the
/// quantization and any caller-provided provenance lines.
pub fn write_grid(
    path: &Path,
    images: &[f32],
    n: usize,
    count: usize,
    provenance: &str,
) -> Result<GridScale> {
    let (w, h, pixels, scale) = grid_quantize(images, n, count)?;
    atomic_write(path, &pgm_bytes(w, h, &pixels)?)?;
    let sidecar = path.with_extension("scale.txt");
    let mut text = format!(
        "min={:?}\nmax={:?}\ngrid_width={w}\ngrid_height={h}\ntile={n}\ncount={count}\n",
        scale.min, scale.max
    );
    if !provenance.is_empty() {
        text.push_str(provenance);
        if !provenance.ends_with('\n') {
            text.push('\n');
        }
    }
    atomic_write(&sidecar, text.as_bytes())?;
    Ok(scale)
}
