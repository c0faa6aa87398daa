//! Image-sequence I/O and tensor conversions.
//!
//! Clips are directories of equally sized 8-bit RGB PNG frames, ordered by
//! file name. In-memory frames are `(3, H, W)` arrays of `f32` in `[0, 1]`.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use image::RgbImage;
use ndarray::Array3;

use crate::error::{validation, IkError, Result};

/// Load all frames in `dir`, sorted by file name.
pub fn load_sequence(dir: &Path) -> Result<Vec<Array3<f32>>> {
    let entries = std::fs::read_dir(dir).map_err(|e| IkError::io(dir, e))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| IkError::io(dir, e))?;
        let path = entry.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .map(|n| n.starts_with('.'))
            .unwrap_or(true);
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(IkError::Data(format!(
            "no frames found in {}",
            dir.display()
        )));
    }
    files.sort();
    let mut frames = Vec::with_capacity(files.len());
    let mut dims: Option<(usize, usize)> = None;
    for path in &files {
        let img = image::open(path)
            .map_err(|e| IkError::Data(format!("{}: not a decodable image: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(IkError::Data(format!(
                    "{}: frame is {h}x{w}, previous frames are {}x{}",
                    path.display(),
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        let mut frame = Array3::zeros((3, h, w));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                frame[(c, y as usize, x as usize)] = px.0[c] as f32 / 255.0;
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Write frames as `00000.png`, `00001.png`, ... under `dir` (created if
/// missing). Values are clamped to `[0, 1]` and quantized to 8 bits.
pub fn save_sequence(dir: &Path, frames: &[Array3<f32>]) -> Result<()> {
    if frames.is_empty() {
        return Err(validation("refusing to write an empty sequence"));
    }
    std::fs::create_dir_all(dir).map_err(|e| IkError::io(dir, e))?;
    for (idx, frame) in frames.iter().enumerate() {
        let (c, h, w) = frame.dim();
        if c != 3 {
            return Err(validation(format!("frame {idx} has {c} channels, expected 3")));
        }
        let mut img = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = [0, 1, 2].map(|ch| {
                    (frame[(ch, y, x)].clamp(0.0, 1.0) * 255.0).round() as u8
                });
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        let path = dir.join(format!("{idx:05}.png"));
        img.save(&path)
            .map_err(|e| IkError::Data(format!("{}: failed to encode: {e}", path.display())))?;
    }
    Ok(())
}

/// Upload a `(C, H, W)` frame as a tensor.
pub fn frame_to_tensor(frame: &Array3<f32>, dtype: DType, device: &Device) -> Result<Tensor> {
    let (c, h, w) = frame.dim();
    let flat: Vec<f32> = frame.iter().copied().collect();
    Ok(Tensor::from_vec(flat, (c, h, w), device)?.to_dtype(dtype)?)
}

/// Download a `(C, H, W)` tensor into an array.
pub fn tensor_to_frame(t: &Tensor) -> Result<Array3<f32>> {
    let (c, h, w) = t
        .dims3()
        .map_err(|_| validation("expected a rank-3 (C, H, W) tensor"))?;
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Array3::from_shape_vec((c, h, w), flat)
        .map_err(|e| validation(format!("tensor layout: {e}")))
}
