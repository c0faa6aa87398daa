//! Optical-flow estimation between grayscale frames.
//!
//! Alignment and the temporal-consistency metric only need a flow field;
//! they do not care where it comes from. [`FlowEstimator`] abstracts that
//! away: [`ZeroFlow`] returns all-zero fields (useful for tests and for
//! isolating alignment from motion), while [`HornSchunckFlow`] is a
//! classical coarse-to-fine variational estimator with no learned weights,
//! so inference never depends on external model files.

use candle_core::Tensor;
use ndarray::{Array2, Array3};

use crate::error::{validation, Result};

/// Dense flow field of shape `(2, H, W)`: channel 0 is the horizontal
/// displacement `dx`, channel 1 the vertical `dy`, both in pixels.
#[derive(Debug, Clone)]
pub struct FlowField(pub Array3<f32>);

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        FlowField(Array3::zeros((2, h, w)))
    }

    pub fn spatial(&self) -> (usize, usize) {
        let d = self.0.dim();
        (d.1, d.2)
    }

    /// Upload as a tensor for [`crate::warp::warp`].
    pub fn to_tensor(&self, device: &candle_core::Device) -> Result<Tensor> {
        let (c, h, w) = self.0.dim();
        let flat: Vec<f32> = self.0.iter().copied().collect();
        Ok(Tensor::from_vec(flat, (c, h, w), device)?)
    }

    /// Mean absolute displacement over both components.
    pub fn mean_abs(&self) -> f64 {
        let n = self.0.len().max(1);
        self.0.iter().map(|v| v.abs() as f64).sum::<f64>() / n as f64
    }
}

/// Estimates the flow that maps each pixel of `from` to its position in
/// `to`, i.e. `to(p + flow(p)) ~= from(p)`.
pub trait FlowEstimator: Send + Sync {
    fn estimate(&self, from: &Array2<f32>, to: &Array2<f32>) -> Result<FlowField>;
    fn name(&self) -> &'static str;
}

/// Returns all-zero flow fields.
pub struct ZeroFlow;

impl FlowEstimator for ZeroFlow {
    fn estimate(&self, from: &Array2<f32>, to: &Array2<f32>) -> Result<FlowField> {
        check_pair(from, to)?;
        let (h, w) = from.dim();
        Ok(FlowField::zeros(h, w))
    }

    fn name(&self) -> &'static str {
        "zero"
    }
}

fn check_pair(from: &Array2<f32>, to: &Array2<f32>) -> Result<()> {
    if from.dim() != to.dim() {
        return Err(validation(format!(
            "flow inputs differ in size: {:?} vs {:?}",
            from.dim(),
            to.dim()
        )));
    }
    if from.is_empty() {
        return Err(validation("flow inputs are empty"));
    }
    Ok(())
}

/// Coarse-to-fine Horn–Schunck variational flow.
pub struct HornSchunckFlow {
    /// Smoothness weight; larger values give smoother fields. Calibrated for
    /// intensities in `[0, 1]`: `alpha^2` must be comparable to the squared
    /// image gradients or the data term cannot move the field.
    pub alpha: f32,
    /// Jacobi iterations per pyramid level.
    pub iterations: usize,
    /// Maximum number of pyramid levels.
    pub max_levels: usize,
}

impl Default for HornSchunckFlow {
    fn default() -> Self {
        HornSchunckFlow { alpha: 0.1, iterations: 80, max_levels: 4 }
    }
}

/// 2x2 box downsample with edge handling for odd sizes.
fn downsample(img: &Array2<f32>) -> Array2<f32> {
    let (h, w) = img.dim();
    let (oh, ow) = ((h + 1) / 2, (w + 1) / 2);
    Array2::from_shape_fn((oh, ow), |(i, j)| {
        let mut acc = 0.0;
        let mut n = 0;
        for di in 0..2 {
            for dj in 0..2 {
                let (y, x) = (2 * i + di, 2 * j + dj);
                if y < h && x < w {
                    acc += img[(y, x)];
                    n += 1;
                }
            }
        }
        acc / n as f32
    })
}

/// Bilinear resize with border clamping.
fn resize_bilinear(img: &Array2<f32>, oh: usize, ow: usize) -> Array2<f32> {
    let (h, w) = img.dim();
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    Array2::from_shape_fn((oh, ow), |(i, j)| {
        let y = ((i as f32 + 0.5) * sy - 0.5).clamp(0.0, h as f32 - 1.0);
        let x = ((j as f32 + 0.5) * sx - 0.5).clamp(0.0, w as f32 - 1.0);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f32, x - x0 as f32);
        img[(y0, x0)] * (1.0 - fy) * (1.0 - fx)
            + img[(y0, x1)] * (1.0 - fy) * fx
            + img[(y1, x0)] * fy * (1.0 - fx)
            + img[(y1, x1)] * fy * fx
    })
}

/// Sample `img` at `(x, y)` with bilinear interpolation and clamping.
fn sample(img: &Array2<f32>, y: f32, x: f32) -> f32 {
    let (h, w) = img.dim();
    let y = y.clamp(0.0, h as f32 - 1.0);
    let x = x.clamp(0.0, w as f32 - 1.0);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f32, x - x0 as f32);
    img[(y0, x0)] * (1.0 - fy) * (1.0 - fx)
        + img[(y0, x1)] * (1.0 - fy) * fx
        + img[(y1, x0)] * fy * (1.0 - fx)
        + img[(y1, x1)] * fy * fx
}

/// Clamped 4-neighbour average used by the Jacobi smoothness update.
fn neighbor_avg(f: &Array2<f32>, i: usize, j: usize) -> f32 {
    let (h, w) = f.dim();
    let up = f[(i.saturating_sub(1), j)];
    let down = f[((i + 1).min(h - 1), j)];
    let left = f[(i, j.saturating_sub(1))];
    let right = f[(i, (j + 1).min(w - 1))];
    0.25 * (up + down + left + right)
}

impl HornSchunckFlow {
    /// One pyramid level: refine `flow` so `to(p + flow) ~= from(p)`.
    fn refine_level(&self, from: &Array2<f32>, to: &Array2<f32>, flow: &mut Array3<f32>) {
        let (h, w) = from.dim();
        // Warp `to` by the current flow and linearize around it.
        let warped = Array2::from_shape_fn((h, w), |(i, j)| {
            sample(to, i as f32 + flow[(1, i, j)], j as f32 + flow[(0, i, j)])
        });
        let grad_at = |img: &Array2<f32>, i: usize, j: usize| -> (f32, f32) {
            let xl = img[(i, j.saturating_sub(1))];
            let xr = img[(i, (j + 1).min(w - 1))];
            let yu = img[(i.saturating_sub(1), j)];
            let yd = img[((i + 1).min(h - 1), j)];
            (0.5 * (xr - xl), 0.5 * (yd - yu))
        };
        let mut ix = Array2::zeros((h, w));
        let mut iy = Array2::zeros((h, w));
        let mut it = Array2::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                let (fx, fy) = grad_at(from, i, j);
                let (wx, wy) = grad_at(&warped, i, j);
                ix[(i, j)] = 0.5 * (fx + wx);
                iy[(i, j)] = 0.5 * (fy + wy);
                it[(i, j)] = warped[(i, j)] - from[(i, j)];
            }
        }
        let alpha2 = self.alpha * self.alpha;
        let mut du: Array2<f32> = Array2::zeros((h, w));
        let mut dv: Array2<f32> = Array2::zeros((h, w));
        for _ in 0..self.iterations {
            let mut next_du = Array2::zeros((h, w));
            let mut next_dv = Array2::zeros((h, w));
            for i in 0..h {
                for j in 0..w {
                    let ubar = neighbor_avg(&du, i, j);
                    let vbar = neighbor_avg(&dv, i, j);
                    let gx = ix[(i, j)];
                    let gy = iy[(i, j)];
                    let t = (gx * ubar + gy * vbar + it[(i, j)]) / (alpha2 + gx * gx + gy * gy);
                    next_du[(i, j)] = ubar - gx * t;
                    next_dv[(i, j)] = vbar - gy * t;
                }
            }
            du = next_du;
            dv = next_dv;
        }
        for i in 0..h {
            for j in 0..w {
                flow[(0, i, j)] += du[(i, j)];
                flow[(1, i, j)] += dv[(i, j)];
            }
        }
    }
}

impl FlowEstimator for HornSchunckFlow {
    fn estimate(&self, from: &Array2<f32>, to: &Array2<f32>) -> Result<FlowField> {
        check_pair(from, to)?;
        // Build the pyramid, coarsest last.
        let mut levels = vec![(from.clone(), to.clone())];
        while levels.len() < self.max_levels {
            let (lf, lt) = levels.last().unwrap();
            let (h, w) = lf.dim();
            if h.min(w) < 16 {
                break;
            }
            levels.push((downsample(lf), downsample(lt)));
        }
        let coarsest = levels.last().unwrap().0.dim();
        let mut flow = Array3::zeros((2, coarsest.0, coarsest.1));
        for (lf, lt) in levels.iter().rev() {
            let (h, w) = lf.dim();
            if flow.dim() != (2, h, w) {
                let (_, ph, pw) = flow.dim();
                let fx = resize_bilinear(&flow.index_axis(ndarray::Axis(0), 0).to_owned(), h, w);
                let fy = resize_bilinear(&flow.index_axis(ndarray::Axis(0), 1).to_owned(), h, w);
                let sx = w as f32 / pw as f32;
                let sy = h as f32 / ph as f32;
                flow = Array3::zeros((2, h, w));
                for i in 0..h {
                    for j in 0..w {
                        flow[(0, i, j)] = fx[(i, j)] * sx;
                        flow[(1, i, j)] = fy[(i, j)] * sy;
                    }
                }
            }
            self.refine_level(lf, lt, &mut flow);
        }
        Ok(FlowField(flow))
    }

    fn name(&self) -> &'static str {
        "classical"
    }
}
