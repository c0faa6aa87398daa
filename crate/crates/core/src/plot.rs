//! Minimal PNG plots: polyline charts and grayscale tile grids.
//!
//! No text rendering — axes and legends are implied, captions belong next
//! to the file. Output is deterministic byte for byte, so plots can be
//! compared across runs like any other artifact.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{validation, IkError, Result};

/// Series colors, applied in order and cycled.
const PALETTE: [[u8; 3]; 4] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14]];

const BACKGROUND: [u8; 3] = [255, 255, 255];
const FRAME: [u8; 3] = [96, 96, 96];
const GRID: [u8; 3] = [224, 224, 224];
const MARGIN: u32 = 12;

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| IkError::io(parent, e))?;
        }
    }
    img.save(path).map_err(IkError::from)
}

/// Draw one or more value series as polylines over a light grid.
///
/// Each series is scaled to the full plot width on its own index axis;
/// the vertical axis is shared and spans the joint value range.
pub fn line_plot(path: &Path, series: &[Vec<f64>], width: u32, height: u32) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.is_empty()) {
        return Err(validation("nothing to plot"));
    }
    if width < 64 || height < 64 {
        return Err(validation(format!("plot size {width}x{height} is too small")));
    }
    let values = series.iter().flatten().copied();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if !v.is_finite() {
            return Err(validation("plot values must be finite"));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    let (lo, hi) = (lo - pad, hi + pad);

    let mut img = RgbImage::from_pixel(width, height, Rgb(BACKGROUND));
    let (x0, y0) = (MARGIN, MARGIN);
    let (x1, y1) = (width - 1 - MARGIN, height - 1 - MARGIN);

    for k in 1..4 {
        let y = y0 + (y1 - y0) * k / 4;
        for x in x0..=x1 {
            img.put_pixel(x, y, Rgb(GRID));
        }
        let x = x0 + (x1 - x0) * k / 4;
        for y in y0..=y1 {
            img.put_pixel(x, y, Rgb(GRID));
        }
    }
    for x in x0..=x1 {
        img.put_pixel(x, y0, Rgb(FRAME));
        img.put_pixel(x, y1, Rgb(FRAME));
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, Rgb(FRAME));
        img.put_pixel(x1, y, Rgb(FRAME));
    }

    let plot_w = (x1 - x0) as f64;
    let plot_h = (y1 - y0) as f64;
    let project = |i: usize, len: usize, v: f64| -> (f64, f64) {
        let fx = if len > 1 { i as f64 / (len - 1) as f64 } else { 0.5 };
        let fy = (v - lo) / (hi - lo);
        (x0 as f64 + fx * plot_w, y1 as f64 - fy * plot_h)
    };
    for (idx, values) in series.iter().enumerate() {
        if values.is_empty() {
            continue;
        }
        let color = Rgb(PALETTE[idx % PALETTE.len()]);
        let mut prev = project(0, values.len(), values[0]);
        for (i, v) in values.iter().enumerate() {
            let next = project(i, values.len(), *v);
            let steps = (next.0 - prev.0).abs().max((next.1 - prev.1).abs()).ceil() as usize + 1;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let x = (prev.0 + t * (next.0 - prev.0)).round() as u32;
                let y = (prev.1 + t * (next.1 - prev.1)).round() as u32;
                img.put_pixel(x.min(width - 1), y.min(height - 1), color);
                // A second pixel below makes the line readable at 1x zoom.
                img.put_pixel(x.min(width - 1), (y + 1).min(height - 1), color);
            }
            prev = next;
        }
    }
    save_png(&img, path)
}

/// Tile grayscale images into one PNG, each tile normalized to its own
/// value range and scaled up `upscale` times with nearest neighbor.
pub fn gray_grid(path: &Path, tiles: &[Array2<f32>], upscale: u32) -> Result<()> {
    if tiles.is_empty() {
        return Err(validation("nothing to draw"));
    }
    if upscale == 0 {
        return Err(validation("upscale must be positive"));
    }
    let (th, tw) = tiles[0].dim();
    if tiles.iter().any(|t| t.dim() != (th, tw)) {
        return Err(validation("tiles must share one size"));
    }
    let cols = (tiles.len() as f64).sqrt().ceil() as u32;
    let rows = (tiles.len() as u32).div_ceil(cols);
    let (cell_h, cell_w) = (th as u32 * upscale, tw as u32 * upscale);
    let gap = 2u32;
    let width = cols * cell_w + (cols + 1) * gap;
    let height = rows * cell_h + (rows + 1) * gap;
    let mut img = RgbImage::from_pixel(width, height, Rgb(BACKGROUND));

    for (idx, tile) in tiles.iter().enumerate() {
        let lo = tile.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = tile.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let ox = gap + (idx as u32 % cols) * (cell_w + gap);
        let oy = gap + (idx as u32 / cols) * (cell_h + gap);
        for y in 0..cell_h {
            for x in 0..cell_w {
                let v = tile[((y / upscale) as usize, (x / upscale) as usize)];
                let g = (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8;
                img.put_pixel(ox + x, oy + y, Rgb([g, g, g]));
            }
        }
    }
    save_png(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plots_are_deterministic() -> Result<()> {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        let series = vec![
            (0..200).map(|i| (i as f64 * 0.1).sin()).collect::<Vec<_>>(),
            (0..50).map(|i| i as f64 / 50.0).collect::<Vec<_>>(),
        ];
        line_plot(&a, &series, 320, 200)?;
        line_plot(&b, &series, 320, 200)?;
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let img = image::open(&a)?;
        assert_eq!((img.width(), img.height()), (320, 200));
        Ok(())
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        assert!(line_plot(&p, &[], 320, 200).is_err());
        assert!(line_plot(&p, &[vec![1.0, f64::NAN]], 320, 200).is_err());
        assert!(line_plot(&p, &[vec![1.0]], 16, 16).is_err());
        assert!(gray_grid(&p, &[], 4).is_err());
    }

    #[test]
    fn flat_series_and_single_points_still_draw() -> Result<()> {
        let dir = tempfile::tempdir().unwrap();
        line_plot(&dir.path().join("flat.png"), &[vec![2.0; 10], vec![2.0]], 64, 64)
    }

    #[test]
    fn grids_lay_tiles_out_square() -> Result<()> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.png");
        let tiles: Vec<Array2<f32>> = (0..5)
            .map(|i| Array2::from_shape_fn((7, 7), |(y, x)| (y * x * (i + 1)) as f32))
            .collect();
        gray_grid(&p, &tiles, 4)?;
        let img = image::open(&p)?;
        // 3 columns, 2 rows of 28px cells with 2px gaps.
        assert_eq!((img.width(), img.height()), (3 * 28 + 4 * 2, 2 * 28 + 3 * 2));
        Ok(())
    }
}
