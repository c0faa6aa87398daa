//! Bicubic resampling (Catmull-Rom, `a = -0.5`) with replicate borders.
//!
//! Two implementations of the same kernel live here on purpose:
//!
//! * [`bicubic_resize`] — scalar CPU resampler used by the degradation
//!   pipeline and metrics baselines. Downscaling stretches the kernel by
//!   the scale factor (antialiasing), matching the usual `imresize`
//!   semantics.
//! * [`BicubicUp4`] — the exact 4x upscale expressed as a frozen grouped
//!   convolution plus pixel shuffle, so the model's global residual path is
//!   differentiable end to end. Its weights are the 16 sub-pixel phases of
//!   the same kernel, and a test pins it to [`bicubic_resize`].

use candle_core::{DType, Device, Tensor};
use ndarray::Array3;

use crate::error::{validation, Result};
use crate::nn::{pixel_shuffle, replicate_pad};

/// Catmull-Rom cubic kernel.
pub fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x.powi(3) - (A + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        A * (x.powi(3) - 5.0 * x.powi(2) + 8.0 * x - 4.0)
    } else {
        0.0
    }
}

/// Tap plan for one axis: (first source index, normalized weights).
fn axis_plan(in_len: usize, out_len: usize) -> Vec<(isize, Vec<f64>)> {
    let scale = in_len as f64 / out_len as f64;
    let filter_scale = scale.max(1.0);
    let support = 2.0 * filter_scale;
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = (center - support + 1e-9).ceil() as isize;
            let hi = (center + support - 1e-9).floor() as isize;
            let mut weights: Vec<f64> = (lo..=hi)
                .map(|t| cubic((t as f64 - center) / filter_scale))
                .collect();
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }
            (lo, weights)
        })
        .collect()
}

/// Resize a `(C, H, W)` image to `(C, out_h, out_w)`.
pub fn bicubic_resize(img: &Array3<f32>, out_h: usize, out_w: usize) -> Result<Array3<f32>> {
    let (c, h, w) = img.dim();
    if c == 0 || h == 0 || w == 0 {
        return Err(validation("cannot resize an empty image"));
    }
    if out_h == 0 || out_w == 0 {
        return Err(validation("target size must be positive"));
    }
    // Horizontal pass.
    let wplan = axis_plan(w, out_w);
    let mut mid = Array3::<f32>::zeros((c, h, out_w));
    for ch in 0..c {
        for i in 0..h {
            for (j, (lo, weights)) in wplan.iter().enumerate() {
                let mut acc = 0.0f64;
                for (k, wt) in weights.iter().enumerate() {
                    let src = (lo + k as isize).clamp(0, w as isize - 1) as usize;
                    acc += wt * img[(ch, i, src)] as f64;
                }
                mid[(ch, i, j)] = acc as f32;
            }
        }
    }
    // Vertical pass.
    let hplan = axis_plan(h, out_h);
    let mut out = Array3::<f32>::zeros((c, out_h, out_w));
    for ch in 0..c {
        for (i, (lo, weights)) in hplan.iter().enumerate() {
            for j in 0..out_w {
                let mut acc = 0.0f64;
                for (k, wt) in weights.iter().enumerate() {
                    let src = (lo + k as isize).clamp(0, h as isize - 1) as usize;
                    acc += wt * mid[(ch, src, j)] as f64;
                }
                out[(ch, i, j)] = acc as f32;
            }
        }
    }
    Ok(out)
}

/// Per-phase 1-D weights of the 4x upscale: `phase_weights[p][o + 2]` is the
/// kernel value for sub-pixel phase `p` at integer tap offset `o`.
fn up4_phase_weights() -> [[f64; 5]; 4] {
    let mut out = [[0.0; 5]; 4];
    for (p, row) in out.iter_mut().enumerate() {
        let center = (p as f64 + 0.5) / 4.0 - 0.5;
        let mut sum = 0.0;
        for (idx, o) in (-2isize..=2).enumerate() {
            row[idx] = cubic(center - o as f64);
            sum += row[idx];
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Frozen 4x bicubic upscale as a grouped conv + pixel shuffle.
#[derive(Debug)]
pub struct BicubicUp4 {
    weight: Tensor,
    channels: usize,
}

impl BicubicUp4 {
    pub fn new(channels: usize, dtype: DType, device: &Device) -> Result<Self> {
        if channels == 0 {
            return Err(validation("upscale needs at least one channel"));
        }
        let phases = up4_phase_weights();
        let mut data = vec![0.0f64; channels * 16 * 5 * 5];
        for c in 0..channels {
            for py in 0..4 {
                for px in 0..4 {
                    let base = ((c * 16 + py * 4 + px) * 5) * 5;
                    for dy in 0..5 {
                        for dx in 0..5 {
                            data[base + dy * 5 + dx] = phases[py][dy] * phases[px][dx];
                        }
                    }
                }
            }
        }
        let weight = Tensor::from_vec(data, (channels * 16, 1, 5, 5), device)?.to_dtype(dtype)?;
        Ok(BicubicUp4 { weight, channels })
    }

    /// `(1, C, H, W)` -> `(1, C, 4H, 4W)`.
    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = xs
            .dims4()
            .map_err(|_| validation("upscale input must be (1, C, H, W)"))?;
        if b != 1 || c != self.channels {
            return Err(validation(format!(
                "upscale input {:?} does not match {} channels",
                xs.dims(),
                self.channels
            )));
        }
        let padded = replicate_pad(xs, 2)?;
        let phases = padded.conv2d(&self.weight, 0, 1, 1, self.channels)?;
        pixel_shuffle(&phases, 4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_img(c: usize, h: usize, w: usize, seed: u64) -> Array3<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, h, w), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn kernel_interpolates_and_partitions_unity() {
        assert_eq!(cubic(0.0), 1.0);
        assert!(cubic(1.0).abs() < 1e-12);
        assert!(cubic(2.0).abs() < 1e-12);
        assert_eq!(cubic(2.5), 0.0);
        for i in 0..50 {
            let x = i as f64 / 50.0;
            let sum: f64 = (-2..=2).map(|k| cubic(x - k as f64)).sum();
            assert!((sum - 1.0).abs() < 1e-12, "partition of unity at {x}: {sum}");
        }
    }

    #[test]
    fn constants_survive_resizing() -> Result<()> {
        let img = Array3::from_elem((2, 12, 16), 0.37f32);
        for (h, w) in [(3, 4), (24, 32), (5, 7)] {
            let out = bicubic_resize(&img, h, w)?;
            for v in out.iter() {
                assert!((v - 0.37).abs() < 1e-6);
            }
        }
        Ok(())
    }

    #[test]
    fn linear_ramps_are_reproduced_in_the_interior() -> Result<()> {
        let (h, w) = (8, 8);
        let img = Array3::from_shape_fn((1, h, w), |(_, _, j)| j as f32);
        let out = bicubic_resize(&img, h * 4, w * 4)?;
        for i in 8..h * 4 - 8 {
            for j in 8..w * 4 - 8 {
                let want = (j as f32 + 0.5) / 4.0 - 0.5;
                let got = out[(0, i, j)];
                assert!((got - want).abs() < 1e-4, "({i},{j}): {got} vs {want}");
            }
        }
        Ok(())
    }

    #[test]
    fn downscale_suppresses_nyquist_stripes() -> Result<()> {
        // Alternating +1/-1 columns: a point-sampled 4x downscale would keep
        // full contrast, the antialiased kernel must squash it.
        let img = Array3::from_shape_fn((1, 16, 16), |(_, _, j)| if j % 2 == 0 { 1.0 } else { -1.0 });
        let out = bicubic_resize(&img, 4, 4)?;
        for v in out.iter() {
            assert!(v.abs() < 0.3, "residual stripe amplitude {v}");
        }
        Ok(())
    }

    #[test]
    fn conv_path_matches_the_scalar_resampler() -> Result<()> {
        let img = rand_img(3, 9, 7, 1);
        let want = bicubic_resize(&img, 36, 28)?;
        let up = BicubicUp4::new(3, DType::F32, &Device::Cpu)?;
        let t = Tensor::from_vec(img.iter().copied().collect::<Vec<f32>>(), (1, 3, 9, 7), &Device::Cpu)?;
        let got = up.forward(&t)?.squeeze(0)?;
        let gv = got.flatten_all()?.to_vec1::<f32>()?;
        let mut max_diff = 0.0f32;
        for (g, w) in gv.iter().zip(want.iter()) {
            max_diff = max_diff.max((g - w).abs());
        }
        assert!(max_diff <= 1e-5, "conv vs scalar bicubic: {max_diff}");
        Ok(())
    }

    #[test]
    fn rejects_empty_targets() {
        let img = rand_img(1, 4, 4, 2);
        assert!(bicubic_resize(&img, 0, 4).is_err());
    }
}
