//! Backward warping of feature maps by dense optical flow.
//!
//! `warp` samples a `(C, H, W)` feature map at `(x + dx, y + dy)` with
//! bilinear interpolation and border clamping. Flow fields enter as plain
//! data (they come from a CPU-side estimator), so gradients propagate only
//! through the sampled feature values — exactly what alignment training
//! needs.

use candle_core::{DType, Tensor};

use crate::error::{validation, Result};

/// Bilinear backward warp. `flow` is `(2, H, W)` with channel 0 holding the
/// horizontal displacement `dx` and channel 1 the vertical `dy`, in pixels.
pub fn warp(feature: &Tensor, flow: &Tensor) -> Result<Tensor> {
    let (c, h, w) = feature
        .dims3()
        .map_err(|_| validation("warp feature must be rank-3 (C, H, W)"))?;
    match flow.dims3() {
        Ok((2, fh, fw)) if (fh, fw) == (h, w) => {}
        _ => {
            return Err(validation(format!(
                "flow shape {:?} does not match feature {h}x{w} (want (2, H, W))",
                flow.dims()
            )))
        }
    }
    let device = feature.device();
    let dtype = feature.dtype();
    let hw = h * w;

    // Absolute sampling positions, kept outside the autodiff graph.
    let flow = flow.detach().to_dtype(dtype)?;
    let base_x = Tensor::arange(0f64, w as f64, device)?
        .to_dtype(dtype)?
        .reshape((1, w))?
        .broadcast_as((h, w))?;
    let base_y = Tensor::arange(0f64, h as f64, device)?
        .to_dtype(dtype)?
        .reshape((h, 1))?
        .broadcast_as((h, w))?;
    let x = (base_x + flow.narrow(0, 0, 1)?.squeeze(0)?)?;
    let y = (base_y + flow.narrow(0, 1, 1)?.squeeze(0)?)?;

    let x0 = x.floor()?;
    let y0 = y.floor()?;
    let fx = (&x - &x0)?;
    let fy = (&y - &y0)?;

    let clamp_idx = |t: &Tensor, hi: usize| -> Result<Tensor> {
        Ok(t.clamp(0f64, (hi - 1) as f64)?.to_dtype(DType::U32)?)
    };
    let x0c = clamp_idx(&x0, w)?;
    let x1c = clamp_idx(&(&x0 + 1.0)?, w)?;
    let y0c = clamp_idx(&y0, h)?;
    let y1c = clamp_idx(&(&y0 + 1.0)?, h)?;

    let flat = feature.reshape((c, hw))?;
    // Flat indices are assembled in f64 (exact for any realistic H * W) and
    // converted to u32 for the gather.
    let corner = |yc: &Tensor, xc: &Tensor| -> Result<Tensor> {
        let ys = yc.to_dtype(DType::F64)?;
        let xs = xc.to_dtype(DType::F64)?;
        let idx = ((ys * w as f64)? + xs)?.to_dtype(DType::U32)?;
        let idx = idx.reshape((1, hw))?.broadcast_as((c, hw))?.contiguous()?;
        Ok(flat.gather(&idx, 1)?)
    };

    let one = Tensor::ones((h, w), dtype, device)?;
    let wx0 = (&one - &fx)?;
    let wy0 = (&one - &fy)?;
    let weight = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
        Ok((a * b)?.reshape((1, hw))?)
    };

    let g00 = corner(&y0c, &x0c)?.broadcast_mul(&weight(&wy0, &wx0)?)?;
    let g01 = corner(&y0c, &x1c)?.broadcast_mul(&weight(&wy0, &fx)?)?;
    let g10 = corner(&y1c, &x0c)?.broadcast_mul(&weight(&fy, &wx0)?)?;
    let g11 = corner(&y1c, &x1c)?.broadcast_mul(&weight(&fy, &fx)?)?;

    let out = (((g00 + g01)? + g10)? + g11)?;
    Ok(out.reshape((c, h, w))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use rand::{Rng, SeedableRng};

    fn dev() -> Device {
        Device::Cpu
    }

    fn rand_feature(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(data, (c, h, w), &dev()).unwrap()
    }

    fn constant_flow(dx: f32, dy: f32, h: usize, w: usize) -> Tensor {
        let mut data = vec![dx; h * w];
        data.extend(std::iter::repeat(dy).take(h * w));
        Tensor::from_vec(data, (2, h, w), &dev()).unwrap()
    }

    #[test]
    fn zero_flow_is_the_identity() -> Result<()> {
        let f = rand_feature(3, 7, 9, 1);
        let out = warp(&f, &constant_flow(0.0, 0.0, 7, 9))?;
        let diff = (out - &f)?.abs()?.max_all()?.to_scalar::<f32>()?;
        assert!(diff <= 1e-7, "zero-flow deviation {diff}");
        Ok(())
    }

    #[test]
    fn integer_shifts_reproduce_shifted_pixels() -> Result<()> {
        let (h, w) = (6, 8);
        let f = rand_feature(2, h, w, 2);
        let out = warp(&f, &constant_flow(1.0, 0.0, h, w))?;
        let fv = f.to_vec3::<f32>()?;
        let ov = out.to_vec3::<f32>()?;
        for c in 0..2 {
            for i in 0..h {
                for j in 0..w - 1 {
                    assert_eq!(ov[c][i][j], fv[c][i][j + 1], "at ({c},{i},{j})");
                }
            }
        }
        Ok(())
    }

    #[test]
    fn matches_a_scalar_bilinear_oracle_in_the_interior() -> Result<()> {
        let (h, w) = (8, 10);
        let f = rand_feature(1, h, w, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let dx: Vec<f32> = (0..h * w).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let dy: Vec<f32> = (0..h * w).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let mut flow = dx.clone();
        flow.extend(dy.iter());
        let out = warp(&f, &Tensor::from_vec(flow, (2, h, w), &dev())?)?;
        let fv = f.to_vec3::<f32>()?;
        let ov = out.to_vec3::<f32>()?;
        for i in 2..h - 2 {
            for j in 2..w - 2 {
                let x = j as f32 + dx[i * w + j];
                let y = i as f32 + dy[i * w + j];
                let (x0, y0) = (x.floor(), y.floor());
                let (tx, ty) = (x - x0, y - y0);
                let (x0, y0) = (x0 as usize, y0 as usize);
                let want = fv[0][y0][x0] * (1.0 - ty) * (1.0 - tx)
                    + fv[0][y0][x0 + 1] * (1.0 - ty) * tx
                    + fv[0][y0 + 1][x0] * ty * (1.0 - tx)
                    + fv[0][y0 + 1][x0 + 1] * ty * tx;
                let got = ov[0][i][j];
                assert!((got - want).abs() <= 1e-6, "({i},{j}): {got} vs {want}");
            }
        }
        Ok(())
    }

    #[test]
    fn out_of_range_samples_clamp_to_the_border() -> Result<()> {
        let (h, w) = (4, 4);
        let f = rand_feature(1, h, w, 5);
        let out = warp(&f, &constant_flow(-10.0, 0.0, h, w))?;
        let fv = f.to_vec3::<f32>()?;
        let ov = out.to_vec3::<f32>()?;
        for i in 0..h {
            for j in 0..w {
                assert_eq!(ov[0][i][j], fv[0][i][0], "row {i} col {j}");
            }
        }
        Ok(())
    }

    #[test]
    fn gradients_flow_to_the_feature() -> Result<()> {
        let mut store = crate::param::ParamStore::new(DType::F32, 6);
        let feat = store.uniform("f", &[1, 5, 5], -1.0, 1.0)?;
        let flow = constant_flow(0.4, -0.7, 5, 5);
        let loss = warp(&feat, &flow)?.sqr()?.sum_all()?;
        let grads = loss.backward()?;
        let (_, var) = store.iter().next().unwrap();
        let g = grads.get(var).expect("feature gradient missing");
        assert!(g.abs()?.sum_all()?.to_scalar::<f32>()? > 0.0);
        Ok(())
    }

    #[test]
    fn rejects_mismatched_flow_shapes() {
        let f = rand_feature(1, 4, 4, 7);
        let flow = constant_flow(0.0, 0.0, 5, 4);
        assert_eq!(warp(&f, &flow).unwrap_err().class(), "validation");
    }
}
