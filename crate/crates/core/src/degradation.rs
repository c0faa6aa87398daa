//! Degradation protocol used to synthesize training and evaluation data.
//!
//! Low-resolution inputs come from ground truth via blur, bicubic 4x
//! downsampling, and optional additive Gaussian noise. Two blur scenarios
//! are supported: isotropic Gaussian kernels with a per-frame sigma, and
//! motion kernels rasterized from a random camera-shake trajectory. Each
//! frame of a clip draws its own kernel, so degradations vary over time.
//!
//! Besides the degraded (`lr`) stream, every clip also gets a blur-free
//! `dn` stream (plain bicubic downsample of ground truth). The correction
//! stage trains against `dn`: a corrected frame should look as if the blur
//! had never happened.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, IkError, Result};
use crate::resize::bicubic_resize;

/// Side length of every blur kernel in the protocol.
pub const BLUR_KERNEL_SIZE: usize = 13;

/// Threshold (on a normalized kernel) below which a cell does not count as
/// kernel support.
pub const SUPPORT_THRESHOLD: f32 = 1e-4;

/// A normalized, non-negative blur kernel.
#[derive(Debug, Clone)]
pub struct BlurKernel {
    grid: Array2<f32>,
}

impl BlurKernel {
    /// Validate non-negativity and renormalize the sum to exactly one.
    pub fn new(grid: Array2<f32>) -> Result<Self> {
        let (h, w) = grid.dim();
        if h != w || h % 2 == 0 || h == 0 {
            return Err(validation(format!("blur kernel must be odd and square, got {h}x{w}")));
        }
        if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(validation("blur kernel entries must be finite and non-negative"));
        }
        let sum: f64 = grid.iter().map(|v| *v as f64).sum();
        if sum <= 0.0 {
            return Err(validation("blur kernel mass is zero"));
        }
        let grid = grid.mapv(|v| (v as f64 / sum) as f32);
        Ok(BlurKernel { grid })
    }

    pub fn grid(&self) -> &Array2<f32> {
        &self.grid
    }

    pub fn size(&self) -> usize {
        self.grid.nrows()
    }

    pub fn sum(&self) -> f64 {
        self.grid.iter().map(|v| *v as f64).sum()
    }

    /// Number of cells above [`SUPPORT_THRESHOLD`].
    pub fn support_cells(&self) -> usize {
        self.grid.iter().filter(|v| **v > SUPPORT_THRESHOLD).count()
    }

    /// True convolution with replicate borders.
    pub fn apply(&self, img: &Array3<f32>) -> Array3<f32> {
        let (c, h, w) = img.dim();
        let size = self.size();
        let half = (size / 2) as isize;
        let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
        let mut out = Array3::zeros((c, h, w));
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0f64;
                    for u in 0..size {
                        for v in 0..size {
                            let k = self.grid[(u, v)] as f64;
                            if k == 0.0 {
                                continue;
                            }
                            let si = clamp(i as isize - (u as isize - half), h);
                            let sj = clamp(j as isize - (v as isize - half), w);
                            acc += k * img[(ch, si, sj)] as f64;
                        }
                    }
                    out[(ch, i, j)] = acc as f32;
                }
            }
        }
        out
    }
}

/// Isotropic Gaussian kernel with standard deviation `sigma`.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<BlurKernel> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(validation(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let half = (size as isize) / 2;
    let grid = Array2::from_shape_fn((size, size), |(u, v)| {
        let du = u as isize - half;
        let dv = v as isize - half;
        let d2 = (du * du + dv * dv) as f64;
        (-d2 / (2.0 * sigma * sigma)).exp() as f32
    });
    BlurKernel::new(grid)
}

fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

fn gaussian_sample(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    gaussian_pair(rng).0 * std
}

/// Motion-blur kernel rasterized from a random shake trajectory.
///
/// A point mass follows a velocity random walk (inertia plus small jitter
/// and occasional large impulses), the trajectory is centered and scaled to
/// fit the kernel, then splatted with sub-pixel bilinear weights and lightly
/// smoothed. Deterministic in `seed`.
pub fn motion_kernel(size: usize, seed: u64) -> Result<BlurKernel> {
    if size % 2 == 0 || size == 0 {
        return Err(validation(format!("blur kernel must be odd, got size {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = rng.gen_range(32..=64);
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = rng.gen_range(0.1..0.5);
    let mut vel = (speed * theta.cos(), speed * theta.sin());
    let mut pos = (0.0f64, 0.0f64);
    let mut path = vec![pos];
    for _ in 0..steps {
        if rng.gen::<f64>() < 0.1 {
            vel.0 += gaussian_sample(&mut rng, 0.5);
            vel.1 += gaussian_sample(&mut rng, 0.5);
        } else {
            vel.0 = 0.97 * vel.0 + gaussian_sample(&mut rng, 0.08);
            vel.1 = 0.97 * vel.1 + gaussian_sample(&mut rng, 0.08);
        }
        pos.0 += vel.0;
        pos.1 += vel.1;
        path.push(pos);
    }
    // Center on the centroid and scale to a random extent inside the grid.
    let n = path.len() as f64;
    let cx = path.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = path.iter().map(|p| p.1).sum::<f64>() / n;
    for p in &mut path {
        p.0 -= cx;
        p.1 -= cy;
    }
    let max_r = path
        .iter()
        .map(|p| (p.0 * p.0 + p.1 * p.1).sqrt())
        .fold(0.0f64, f64::max);
    let target = rng.gen_range(0.55..0.9) * ((size as f64 - 1.0) / 2.0 - 0.5);
    if max_r > 1e-9 {
        let s = target / max_r;
        for p in &mut path {
            p.0 *= s;
            p.1 *= s;
        }
    }
    // Splat the densified trajectory with bilinear weights.
    let center = (size / 2) as f64;
    let mut grid = Array2::<f32>::zeros((size, size));
    let mut splat = |x: f64, y: f64, mass: f64| {
        let gx = x + center;
        let gy = y + center;
        let x0 = gx.floor();
        let y0 = gy.floor();
        let fx = gx - x0;
        let fy = gy - y0;
        for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
                let xi = x0 as isize + dx;
                let yi = y0 as isize + dy;
                if xi >= 0 && yi >= 0 && (xi as usize) < size && (yi as usize) < size {
                    grid[(yi as usize, xi as usize)] += (mass * wy * wx) as f32;
                }
            }
        }
    };
    for pair in path.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let dist = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let sub = (dist / 0.25).ceil().max(1.0) as usize;
        for k in 0..sub {
            let t = k as f64 / sub as f64;
            splat(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), 1.0 / sub as f64);
        }
    }
    // Gentle 3x3 smoothing widens the streak like a real exposure does.
    let s1 = (-1.0f64 / (2.0 * 0.4 * 0.4)).exp();
    let s2 = (-2.0f64 / (2.0 * 0.4 * 0.4)).exp();
    let taps = [(0isize, 0isize, 1.0), (0, 1, s1), (0, -1, s1), (1, 0, s1), (-1, 0, s1),
                (1, 1, s2), (1, -1, s2), (-1, 1, s2), (-1, -1, s2)];
    let mut smoothed = Array2::<f32>::zeros((size, size));
    for i in 0..size {
        for j in 0..size {
            let mut acc = 0.0f64;
            for (di, dj, w) in taps {
                let y = i as isize + di;
                let x = j as isize + dj;
                if y >= 0 && x >= 0 && (y as usize) < size && (x as usize) < size {
                    acc += w * grid[(y as usize, x as usize)] as f64;
                }
            }
            smoothed[(i, j)] = acc as f32;
        }
    }
    BlurKernel::new(smoothed)
}

/// Degradation scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    Gaussian,
    Motion,
}

impl FromStr for Scenario {
    type Err = IkError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Scenario::Gaussian),
            "motion" => Ok(Scenario::Motion),
            other => Err(IkError::Config(format!(
                "unknown scenario {other:?}; expected \"gaussian\" or \"motion\""
            ))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Gaussian => write!(f, "gaussian"),
            Scenario::Motion => write!(f, "motion"),
        }
    }
}

/// Knobs of the degradation pipeline.
#[derive(Debug, Clone)]
pub struct DegradationConfig {
    pub scenario: Scenario,
    pub scale: usize,
    /// Noise standard deviation on the 0..255 intensity scale; 0 disables.
    pub noise_sigma: f64,
    pub kernel_size: usize,
    pub sigma_range: (f64, f64),
}

impl DegradationConfig {
    pub fn new(scenario: Scenario) -> Self {
        DegradationConfig {
            scenario,
            scale: 4,
            noise_sigma: 0.0,
            kernel_size: BLUR_KERNEL_SIZE,
            sigma_range: (0.4, 2.0),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(validation("scale must be positive"));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(validation(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        let (lo, hi) = self.sigma_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(validation(format!("invalid sigma range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Blur + bicubic downsample of a single frame.
pub fn degrade_frame(gt: &Array3<f32>, kernel: &BlurKernel, scale: usize) -> Result<Array3<f32>> {
    let (_, h, w) = gt.dim();
    if scale == 0 {
        return Err(validation("scale must be positive"));
    }
    if h % scale != 0 || w % scale != 0 {
        return Err(validation(format!(
            "frame size {h}x{w} is not divisible by scale {scale}"
        )));
    }
    bicubic_resize(&kernel.apply(gt), h / scale, w / scale)
}

/// How one frame was degraded (recorded in the manifest).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub blur: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_seed: Option<u64>,
    pub support_cells: usize,
}

/// Manifest written next to every degraded clip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipManifest {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub scale: usize,
    pub noise_sigma: f64,
    pub frames: Vec<FrameRecord>,
}

impl ClipManifest {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| IkError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IkError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Ground truth plus its degraded and blur-free downsampled streams.
pub struct ClipTriplet {
    pub gt: Vec<Array3<f32>>,
    pub lr: Vec<Array3<f32>>,
    pub dn: Vec<Array3<f32>>,
    pub kernels: Vec<BlurKernel>,
    pub manifest: ClipManifest,
}

/// Degrade a whole clip. One kernel per frame; `seed` fixes everything.
pub fn make_triplet(gt: &[Array3<f32>], cfg: &DegradationConfig, seed: u64) -> Result<ClipTriplet> {
    cfg.validate()?;
    if gt.is_empty() {
        return Err(validation("clip has no frames"));
    }
    let dims = gt[0].dim();
    for (i, frame) in gt.iter().enumerate() {
        if frame.dim() != dims {
            return Err(validation(format!(
                "frame {i} has size {:?}, expected {:?}",
                frame.dim(),
                dims
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lr = Vec::with_capacity(gt.len());
    let mut dn = Vec::with_capacity(gt.len());
    let mut kernels = Vec::with_capacity(gt.len());
    let mut frames = Vec::with_capacity(gt.len());
    for (index, frame) in gt.iter().enumerate() {
        let (kernel, record) = match cfg.scenario {
            Scenario::Gaussian => {
                let sigma = rng.gen_range(cfg.sigma_range.0..=cfg.sigma_range.1);
                let kernel = gaussian_kernel(sigma, cfg.kernel_size)?;
                let support = kernel.support_cells();
                (
                    kernel,
                    FrameRecord {
                        index,
                        blur: "gaussian".into(),
                        sigma: Some(sigma),
                        kernel_seed: None,
                        support_cells: support,
                    },
                )
            }
            Scenario::Motion => {
                let kernel_seed: u64 = rng.gen();
                let kernel = motion_kernel(cfg.kernel_size, kernel_seed)?;
                let support = kernel.support_cells();
                (
                    kernel,
                    FrameRecord {
                        index,
                        blur: "motion".into(),
                        sigma: None,
                        kernel_seed: Some(kernel_seed),
                        support_cells: support,
                    },
                )
            }
        };
        let mut low = degrade_frame(frame, &kernel, cfg.scale)?;
        if cfg.noise_sigma > 0.0 {
            let std = cfg.noise_sigma / 255.0;
            for v in low.iter_mut() {
                *v = (*v + gaussian_sample(&mut rng, std) as f32).clamp(0.0, 1.0);
            }
        }
        let (_, h, w) = frame.dim();
        dn.push(bicubic_resize(frame, h / cfg.scale, w / cfg.scale)?);
        lr.push(low);
        kernels.push(kernel);
        frames.push(record);
    }
    let manifest = ClipManifest {
        schema_version: ClipManifest::SCHEMA_VERSION,
        scenario: cfg.scenario.to_string(),
        seed,
        scale: cfg.scale,
        noise_sigma: cfg.noise_sigma,
        frames,
    };
    Ok(ClipTriplet { gt: gt.to_vec(), lr, dn, kernels, manifest })
}

/// Procedural ground-truth clip: textured background, sharp static grid,
/// and a handful of objects translating with sub-pixel velocities.
/// Deterministic in `seed`; values lie in `[0, 1]`.
pub fn synthetic_clip(n_frames: usize, h: usize, w: usize, seed: u64) -> Vec<Array3<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    struct Blob {
        x: f64,
        y: f64,
        vx: f64,
        vy: f64,
        radius: f64,
        color: [f32; 3],
        round: bool,
    }
    let blobs: Vec<Blob> = (0..6)
        .map(|_| Blob {
            x: rng.gen_range(0.0..w as f64),
            y: rng.gen_range(0.0..h as f64),
            vx: rng.gen_range(0.5..2.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 },
            vy: rng.gen_range(0.5..2.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 },
            radius: rng.gen_range(5.0..14.0),
            color: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
            round: rng.gen(),
        })
        .collect();
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (0..n_frames)
        .map(|t| {
            let mut frame = Array3::<f32>::zeros((3, h, w));
            for i in 0..h {
                for j in 0..w {
                    let x = j as f64;
                    let y = i as f64;
                    // Static textured background with two gratings.
                    let g1 = (0.45 * x + 0.2 * y + phase).sin();
                    let g2 = (0.17 * y - 0.31 * x).cos();
                    let base = 0.45 + 0.12 * g1 as f32 + 0.1 * g2 as f32;
                    let grid_line = (j % 16 == 0 || i % 16 == 0) as u8 as f32 * 0.35;
                    let mut px = [
                        (base + grid_line).clamp(0.0, 1.0),
                        (base * 0.9 + grid_line).clamp(0.0, 1.0),
                        (base * 1.1 + 0.04 * (0.05 * (x + y)).sin() as f32 + grid_line).clamp(0.0, 1.0),
                    ];
                    for b in &blobs {
                        // Wrapped position at time t with antialiased coverage.
                        let bx = (b.x + b.vx * t as f64).rem_euclid(w as f64);
                        let by = (b.y + b.vy * t as f64).rem_euclid(h as f64);
                        let mut dx = (x - bx).abs();
                        let mut dy = (y - by).abs();
                        dx = dx.min(w as f64 - dx);
                        dy = dy.min(h as f64 - dy);
                        let coverage = if b.round {
                            let d = (dx * dx + dy * dy).sqrt();
                            (b.radius + 0.5 - d).clamp(0.0, 1.0)
                        } else {
                            let cx = (b.radius + 0.5 - dx).clamp(0.0, 1.0);
                            let cy = (b.radius + 0.5 - dy).clamp(0.0, 1.0);
                            cx * cy
                        } as f32;
                        if coverage > 0.0 {
                            for (ch, p) in px.iter_mut().enumerate() {
                                *p = *p * (1.0 - coverage) + b.color[ch] * coverage;
                            }
                        }
                    }
                    for (ch, p) in px.iter().enumerate() {
                        frame[(ch, i, j)] = *p;
                    }
                }
            }
            frame
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_kernel_matches_the_closed_form() -> Result<()> {
        let sigma = 1.3;
        let k = gaussian_kernel(sigma, 13)?;
        assert!((k.sum() - 1.0).abs() < 1e-6);
        // Unnormalized closed form, checked via ratios to the center.
        let g = k.grid();
        let center = g[(6, 6)];
        for (u, v) in [(0usize, 0usize), (3, 8), (6, 1), (12, 12)] {
            let d2 = ((u as f64 - 6.0).powi(2) + (v as f64 - 6.0).powi(2)) as f64;
            let want = (-d2 / (2.0 * sigma * sigma)).exp();
            let got = g[(u, v)] as f64 / center as f64;
            assert!((got - want).abs() < 1e-5, "cell ({u},{v}): {got} vs {want}");
        }
        // Symmetric and peaked at the center.
        assert_eq!(g[(2, 5)], g[(10, 7)]);
        assert!(g.iter().all(|v| *v <= center));
        Ok(())
    }

    #[test]
    fn gaussian_kernel_rejects_bad_arguments() {
        assert!(gaussian_kernel(0.0, 13).is_err());
        assert!(gaussian_kernel(-1.0, 13).is_err());
        assert!(gaussian_kernel(1.0, 12).is_err());
    }

    #[test]
    fn motion_kernels_are_seeded_and_normalized() -> Result<()> {
        let a = motion_kernel(13, 99)?;
        let b = motion_kernel(13, 99)?;
        assert_eq!(a.grid(), b.grid());
        let c = motion_kernel(13, 100)?;
        assert_ne!(a.grid(), c.grid());
        for seed in 0..50 {
            let k = motion_kernel(13, seed)?;
            assert!((k.sum() - 1.0).abs() < 1e-5, "seed {seed} sum {}", k.sum());
            assert!(k.grid().iter().all(|v| *v >= 0.0));
        }
        Ok(())
    }

    #[test]
    fn motion_kernel_support_stays_in_a_plausible_band() -> Result<()> {
        let mut total = 0usize;
        let trials = 100;
        for seed in 0..trials {
            total += motion_kernel(13, seed as u64)?.support_cells();
        }
        let mean = total as f64 / trials as f64;
        assert!(
            (3.0..=120.0).contains(&mean),
            "mean support {mean} outside [3, 120]"
        );
        Ok(())
    }

    #[test]
    fn degrading_a_constant_frame_keeps_it_constant() -> Result<()> {
        let gt = Array3::from_elem((3, 32, 32), 0.6f32);
        let k = gaussian_kernel(1.0, 13)?;
        let lr = degrade_frame(&gt, &k, 4)?;
        assert_eq!(lr.dim(), (3, 8, 8));
        for v in lr.iter() {
            assert!((v - 0.6).abs() < 1e-5);
        }
        assert!(degrade_frame(&gt, &k, 5).is_err());
        Ok(())
    }

    #[test]
    fn triplets_vary_kernels_per_frame_and_are_seeded() -> Result<()> {
        let gt = synthetic_clip(3, 32, 32, 1);
        let cfg = DegradationConfig::new(Scenario::Gaussian);
        let t1 = make_triplet(&gt, &cfg, 7)?;
        let t2 = make_triplet(&gt, &cfg, 7)?;
        assert_eq!(t1.lr[0], t2.lr[0]);
        let sig0 = t1.manifest.frames[0].sigma.unwrap();
        let sig1 = t1.manifest.frames[1].sigma.unwrap();
        assert_ne!(sig0, sig1, "per-frame sigmas should differ");
        for s in t1.manifest.frames.iter().filter_map(|f| f.sigma) {
            assert!((0.4..=2.0).contains(&s));
        }
        // dn is the blur-free bicubic downsample.
        let want = bicubic_resize(&gt[0], 8, 8)?;
        assert_eq!(t1.dn[0], want);
        Ok(())
    }

    #[test]
    fn noise_perturbs_lr_at_the_requested_level() -> Result<()> {
        let gt = synthetic_clip(2, 48, 48, 2);
        let clean_cfg = DegradationConfig::new(Scenario::Gaussian);
        let mut noisy_cfg = clean_cfg.clone();
        noisy_cfg.noise_sigma = 25.0;
        let clean = make_triplet(&gt, &clean_cfg, 3)?;
        let noisy = make_triplet(&gt, &noisy_cfg, 3)?;
        let diffs: Vec<f64> = clean.lr[0]
            .iter()
            .zip(noisy.lr[0].iter())
            .map(|(a, b)| *a as f64 - *b as f64)
            .collect();
        let rms = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
        let want = 25.0 / 255.0;
        assert!(
            (rms - want).abs() < 0.3 * want,
            "noise rms {rms}, requested {want}"
        );
        Ok(())
    }

    #[test]
    fn synthetic_clips_are_deterministic_and_in_range() {
        let a = synthetic_clip(3, 24, 24, 5);
        let b = synthetic_clip(3, 24, 24, 5);
        assert_eq!(a[2], b[2]);
        assert!(a.iter().flat_map(|f| f.iter()).all(|v| (0.0..=1.0).contains(v)));
        // Frames actually move.
        assert_ne!(a[0], a[1]);
    }
}
