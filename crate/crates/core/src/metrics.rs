//! Evaluation metrics: PSNR and SSIM on the luma channel, and a temporal
//! consistency score based on optical-flow agreement.

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{validation, IkError, Result};
use crate::flow::FlowEstimator;

/// PSNR values are capped here; identical images would otherwise be
/// infinite and poison averages.
pub const PSNR_CAP_DB: f64 = 100.0;

/// SSIM window side length and Gaussian sigma.
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// BT.601 full-range luma from an RGB frame in `[0, 1]`.
pub fn luma_bt601(rgb: &Array3<f32>) -> Result<Array2<f32>> {
    let (c, h, w) = rgb.dim();
    if c != 3 {
        return Err(validation(format!("luma expects 3 channels, got {c}")));
    }
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        0.299 * rgb[(0, i, j)] + 0.587 * rgb[(1, i, j)] + 0.114 * rgb[(2, i, j)]
    }))
}

fn check_same_shape(a: &Array3<f32>, b: &Array3<f32>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(validation(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// PSNR between the luma channels, in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr_y(a: &Array3<f32>, b: &Array3<f32>) -> Result<f64> {
    check_same_shape(a, b)?;
    let ya = luma_bt601(a)?;
    let yb = luma_bt601(b)?;
    let mse = ya
        .iter()
        .zip(yb.iter())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / ya.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian window.
fn ssim_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|d| (-(d * d) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable valid-mode windowed mean.
fn windowed_mean(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = taps.len();
    let mut horiz = Array2::<f64>::zeros((h, w - k + 1));
    for i in 0..h {
        for j in 0..w - k + 1 {
            horiz[(i, j)] = taps.iter().enumerate().map(|(t, wt)| wt * img[(i, j + t)]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((h - k + 1, w - k + 1));
    for i in 0..h - k + 1 {
        for j in 0..w - k + 1 {
            out[(i, j)] = taps.iter().enumerate().map(|(t, wt)| wt * horiz[(i + t, j)]).sum();
        }
    }
    out
}

/// Mean SSIM between luma channels (Gaussian 11x11 window, valid region).
pub fn ssim_y(a: &Array3<f32>, b: &Array3<f32>) -> Result<f64> {
    check_same_shape(a, b)?;
    let (_, h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(validation(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let x = luma_bt601(a)?.mapv(|v| v as f64);
    let y = luma_bt601(b)?.mapv(|v| v as f64);
    let taps = ssim_window();
    let mu_x = windowed_mean(&x, &taps);
    let mu_y = windowed_mean(&y, &taps);
    let xx = windowed_mean(&(&x * &x), &taps);
    let yy = windowed_mean(&(&y * &y), &taps);
    let xy = windowed_mean(&(&x * &y), &taps);
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let mut acc = 0.0;
    for ((i, j), mx) in mu_x.indexed_iter() {
        let my = mu_y[(i, j)];
        let var_x = xx[(i, j)] - mx * mx;
        let var_y = yy[(i, j)] - my * my;
        let cov = xy[(i, j)] - mx * my;
        let s = ((2.0 * mx * my + C1) * (2.0 * cov + C2))
            / ((mx * mx + my * my + C1) * (var_x + var_y + C2));
        acc += s;
    }
    Ok(acc / mu_x.len() as f64)
}

/// Temporal consistency: mean absolute difference between the optical-flow
/// fields of the restored clip and of the ground-truth clip.
pub fn tof(
    restored: &[Array3<f32>],
    reference: &[Array3<f32>],
    estimator: &dyn FlowEstimator,
) -> Result<f64> {
    if restored.len() != reference.len() {
        return Err(validation(format!(
            "{} restored frames vs {} reference frames",
            restored.len(),
            reference.len()
        )));
    }
    if restored.len() < 2 {
        return Err(validation("temporal consistency needs at least two frames"));
    }
    let mut acc = 0.0;
    for t in 1..restored.len() {
        check_same_shape(&restored[t], &reference[t])?;
        let f_res = estimator.estimate(&luma_bt601(&restored[t - 1])?, &luma_bt601(&restored[t])?)?;
        let f_ref = estimator.estimate(&luma_bt601(&reference[t - 1])?, &luma_bt601(&reference[t])?)?;
        let diff: f64 = f_res
            .0
            .iter()
            .zip(f_ref.0.iter())
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum::<f64>()
            / f_res.0.len() as f64;
        acc += diff;
    }
    Ok(acc / (restored.len() - 1) as f64)
}

/// Per-clip metric values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub name: String,
    pub frames: usize,
    pub psnr_y: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tof: Option<f64>,
}

/// Dataset-level averages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsAggregate {
    pub psnr_y: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tof: Option<f64>,
}

/// Full evaluation report, serialized as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub checkpoint: String,
    pub config_fingerprint: String,
    pub flow: String,
    pub clips: Vec<ClipMetrics>,
    pub aggregate: MetricsAggregate,
}

impl MetricsReport {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn aggregate_of(clips: &[ClipMetrics]) -> Result<MetricsAggregate> {
        if clips.is_empty() {
            return Err(validation("cannot aggregate zero clips"));
        }
        let n = clips.len() as f64;
        let tofs: Vec<f64> = clips.iter().filter_map(|c| c.tof).collect();
        Ok(MetricsAggregate {
            psnr_y: clips.iter().map(|c| c.psnr_y).sum::<f64>() / n,
            ssim: clips.iter().map(|c| c.ssim).sum::<f64>() / n,
            tof: if tofs.is_empty() {
                None
            } else {
                Some(tofs.iter().sum::<f64>() / tofs.len() as f64)
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| IkError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IkError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
