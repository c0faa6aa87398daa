//! Spatially-varying filtering with per-pixel kernels assembled from the
//! multi-scale dictionary.
//!
//! Every output pixel `(i, j)` is the true convolution of the input with its
//! own kernel
//!
//! ```text
//! k_ij = sum_r mu_r(i, j) * sum_n omega_n(i, j) * D[r][n]
//! ```
//!
//! where `mu` is a per-pixel soft scale selection (rows sum to one) and
//! `omega` holds unconstrained atom weights. The fast path computes one
//! whole-image convolution per (atom, scale) pair and blends the results
//! with the coefficient fields, which is algebraically identical to the
//! per-pixel definition; [`brute_force_filter`] evaluates that definition
//! directly with scalar loops and exists solely to cross-check the fast path.
//!
//! Borders use replicate padding throughout, and the same kernel applies to
//! every channel of a pixel.

use candle_core::{DType, Tensor};
use ndarray::{Array2, Array3};

use crate::dictionary::MultiScaleDictionary;
use crate::error::{contract, validation, Result};
use crate::nn::replicate_pad;

/// Maximum tolerated deviation of a per-pixel `mu` sum from one.
///
/// The scale weights come out of a softmax, so any drift beyond float
/// rounding indicates a wiring bug; the filter refuses to run with it.
pub const MU_SUM_TOL: f64 = 1e-5;

/// Per-pixel filter coefficients: atom weights `omega` of shape `(N, H, W)`
/// and scale weights `mu` of shape `(R, H, W)`.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    omega: Tensor,
    mu: Tensor,
}

impl CoefficientField {
    /// Validate shapes, finiteness, and `mu` normalization.
    pub fn new(omega: Tensor, mu: Tensor) -> Result<Self> {
        let (_, oh, ow) = omega
            .dims3()
            .map_err(|_| validation("omega must be rank-3 (atoms, H, W)"))?;
        let (r, mh, mw) = mu
            .dims3()
            .map_err(|_| validation("mu must be rank-3 (scales, H, W)"))?;
        if (oh, ow) != (mh, mw) {
            return Err(validation(format!(
                "omega spatial dims {oh}x{ow} differ from mu {mh}x{mw}"
            )));
        }
        let mu_f64 = mu.to_dtype(DType::F64)?;
        let sums = mu_f64.sum(0)?.flatten_all()?.to_vec1::<f64>()?;
        for (idx, s) in sums.iter().enumerate() {
            if !s.is_finite() || (s - 1.0).abs() > MU_SUM_TOL {
                return Err(contract(format!(
                    "mu sums to {s} at pixel {} (R = {r}); expected 1 within {MU_SUM_TOL}",
                    idx
                )));
            }
        }
        let omega_max = omega
            .to_dtype(DType::F64)?
            .abs()?
            .max_all()?
            .to_scalar::<f64>()?;
        if !omega_max.is_finite() {
            return Err(contract("omega contains non-finite values"));
        }
        Ok(CoefficientField { omega, mu })
    }

    pub fn omega(&self) -> &Tensor {
        &self.omega
    }

    pub fn mu(&self) -> &Tensor {
        &self.mu
    }

    pub fn n_atoms(&self) -> usize {
        self.omega.dims3().map(|d| d.0).unwrap_or(0)
    }

    pub fn n_scales(&self) -> usize {
        self.mu.dims3().map(|d| d.0).unwrap_or(0)
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.omega.dims3().map(|d| (d.1, d.2)).unwrap_or((0, 0))
    }

    /// Coefficients that make the filter an exact identity: all atom weight
    /// on atom 0 paired with all scale weight on the delta scale.
    pub fn identity(
        n_atoms: usize,
        n_scales: usize,
        h: usize,
        w: usize,
        dtype: DType,
        device: &candle_core::Device,
    ) -> Result<Self> {
        let mut omega = vec![0.0f64; n_atoms * h * w];
        omega[..h * w].fill(1.0);
        let mut mu = vec![0.0f64; n_scales * h * w];
        mu[..h * w].fill(1.0);
        CoefficientField::new(
            Tensor::from_vec(omega, (n_atoms, h, w), device)?.to_dtype(dtype)?,
            Tensor::from_vec(mu, (n_scales, h, w), device)?.to_dtype(dtype)?,
        )
    }
}

fn check_filter_args(
    input: &Tensor,
    dict: &MultiScaleDictionary,
    coeff: &CoefficientField,
) -> Result<(usize, usize, usize)> {
    let (c, h, w) = input
        .dims3()
        .map_err(|_| validation("filter input must be rank-3 (C, H, W)"))?;
    if coeff.spatial() != (h, w) {
        return Err(validation(format!(
            "coefficient fields are {:?}, input is {h}x{w}",
            coeff.spatial()
        )));
    }
    if coeff.n_atoms() != dict.n_atoms() {
        return Err(validation(format!(
            "omega has {} atoms, dictionary has {}",
            coeff.n_atoms(),
            dict.n_atoms()
        )));
    }
    if coeff.n_scales() != dict.n_scales() {
        return Err(validation(format!(
            "mu has {} scales, dictionary has {}",
            coeff.n_scales(),
            dict.n_scales()
        )));
    }
    Ok((c, h, w))
}

/// Reverse both axes of a square kernel grid (convolution vs correlation).
fn flip2d(grid: &Tensor) -> Result<Tensor> {
    let (s, _) = grid.dims2()?;
    if s <= 1 {
        return Ok(grid.clone());
    }
    let idx = Tensor::from_vec(
        (0..s as u32).rev().collect::<Vec<_>>(),
        (s,),
        grid.device(),
    )?;
    Ok(grid.index_select(&idx, 0)?.index_select(&idx, 1)?)
}

/// Apply the spatially-varying filter to a `(C, H, W)` image.
///
/// Runs `N * R` whole-image convolutions (channels batched through a shared
/// single-channel kernel) and blends them with `mu_r * omega_n` fields.
pub fn filter(
    input: &Tensor,
    dict: &MultiScaleDictionary,
    coeff: &CoefficientField,
) -> Result<Tensor> {
    let (c, h, w) = check_filter_args(input, dict, coeff)?;
    let channels_as_batch = input.reshape((c, 1, h, w))?;
    let mut acc: Option<Tensor> = None;
    for r in 1..=dict.n_scales() {
        let size = 2 * r - 1;
        let padded = replicate_pad(&channels_as_batch, r - 1)?;
        let mu_r = coeff.mu.narrow(0, r - 1, 1)?.unsqueeze(0)?; // (1, 1, H, W)
        for n in 0..dict.n_atoms() {
            let grid = dict.scale(r)?.narrow(0, n, 1)?.squeeze(0)?;
            let weight = flip2d(&grid)?.reshape((1, 1, size, size))?;
            let response = padded.conv2d(&weight, 0, 1, 1, 1)?; // (C, 1, H, W)
            let omega_n = coeff.omega.narrow(0, n, 1)?.unsqueeze(0)?;
            let field = mu_r.broadcast_mul(&omega_n)?;
            let term = response.broadcast_mul(&field)?;
            acc = Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            });
        }
    }
    // n_scales and n_atoms are both >= 1, so acc is always populated.
    Ok(acc.expect("dictionary validated non-empty").reshape((c, h, w))?)
}

/// CPU-side copy of the dictionary and coefficients in `f64`.
struct FilterData {
    scales: Vec<Array3<f64>>,
    omega: Array3<f64>,
    mu: Array3<f64>,
}

impl FilterData {
    fn new(dict: &MultiScaleDictionary, coeff: &CoefficientField) -> Result<Self> {
        let mut scales = Vec::with_capacity(dict.n_scales());
        for r in 1..=dict.n_scales() {
            let t = dict.scale(r)?;
            let (n, s, _) = t.dims3()?;
            let flat = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
            scales.push(
                Array3::from_shape_vec((n, s, s), flat)
                    .map_err(|e| validation(format!("dictionary grid layout: {e}")))?,
            );
        }
        let to_array = |t: &Tensor| -> Result<Array3<f64>> {
            let (a, h, w) = t.dims3()?;
            let flat = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
            Array3::from_shape_vec((a, h, w), flat)
                .map_err(|e| validation(format!("coefficient layout: {e}")))
        };
        Ok(FilterData {
            scales,
            omega: to_array(coeff.omega())?,
            mu: to_array(coeff.mu())?,
        })
    }

    /// Materialize the per-pixel kernel at `(i, j)` on the largest lattice.
    fn kernel_at(&self, i: usize, j: usize) -> Array2<f64> {
        let r_max = self.scales.len();
        let full = 2 * r_max - 1;
        let center = r_max - 1;
        let mut kernel = Array2::zeros((full, full));
        for (scale_idx, grids) in self.scales.iter().enumerate() {
            let mu = self.mu[(scale_idx, i, j)];
            let half = scale_idx; // (size - 1) / 2 for size = 2r - 1
            for (atom_idx, grid) in grids.outer_iter().enumerate() {
                let weight = mu * self.omega[(atom_idx, i, j)];
                for u in 0..grid.nrows() {
                    for v in 0..grid.ncols() {
                        kernel[(center - half + u, center - half + v)] += weight * grid[(u, v)];
                    }
                }
            }
        }
        kernel
    }
}

/// Scalar-loop reference implementation of [`filter`].
///
/// Materializes the kernel at every pixel and evaluates the true convolution
/// `out[c][i][j] = sum_{x,y} k[x][y] * in[c][i-x][j-y]` with replicate
/// borders, entirely in `f64`. Deliberately naive.
pub fn brute_force_filter(
    input: &Tensor,
    dict: &MultiScaleDictionary,
    coeff: &CoefficientField,
) -> Result<Tensor> {
    let (c, h, w) = check_filter_args(input, dict, coeff)?;
    let data = FilterData::new(dict, coeff)?;
    let image = input.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let half = dict.n_scales() - 1;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut out = vec![0.0f64; c * h * w];
    for i in 0..h {
        for j in 0..w {
            let kernel = data.kernel_at(i, j);
            for ch in 0..c {
                let mut acc = 0.0;
                for dx in -(half as isize)..=(half as isize) {
                    for dy in -(half as isize)..=(half as isize) {
                        let k = kernel[((half as isize + dx) as usize, (half as isize + dy) as usize)];
                        let src_i = clamp(i as isize - dx, h);
                        let src_j = clamp(j as isize - dy, w);
                        acc += k * image[(ch * h + src_i) * w + src_j];
                    }
                }
                out[(ch * h + i) * w + j] = acc;
            }
        }
    }
    Ok(Tensor::from_vec(out, (c, h, w), input.device())?.to_dtype(input.dtype())?)
}

/// The effective kernel applied at pixel `(i, j)`, on the `(2R-1)` lattice.
pub fn per_pixel_kernel(
    dict: &MultiScaleDictionary,
    coeff: &CoefficientField,
    i: usize,
    j: usize,
) -> Result<Array2<f64>> {
    let (h, w) = coeff.spatial();
    if coeff.n_atoms() != dict.n_atoms() || coeff.n_scales() != dict.n_scales() {
        return Err(validation(
            "coefficient field does not match dictionary layout".to_string(),
        ));
    }
    if i >= h || j >= w {
        return Err(validation(format!(
            "pixel ({i}, {j}) outside coefficient field {h}x{w}"
        )));
    }
    Ok(FilterData::new(dict, coeff)?.kernel_at(i, j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_dictionary, init_atoms, MultiScaleDictionary};
    use crate::param::ParamStore;
    use candle_core::Device;
    use proptest::prelude::*;

    fn dev() -> Device {
        Device::Cpu
    }

    fn rand_image(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(data, (c, h, w), &dev()).unwrap()
    }

    fn rand_coeff(n: usize, r: usize, h: usize, w: usize, seed: u64) -> CoefficientField {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let omega: Vec<f32> = (0..n * h * w).map(|_| rng.gen_range(-1.5..1.5)).collect();
        // Random logits -> softmax across scales so mu is normalized.
        let logits: Vec<f64> = (0..r * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut mu = vec![0.0f32; r * h * w];
        for p in 0..h * w {
            let mx = (0..r).map(|s| logits[s * h * w + p]).fold(f64::MIN, f64::max);
            let z: f64 = (0..r).map(|s| (logits[s * h * w + p] - mx).exp()).sum();
            for s in 0..r {
                mu[s * h * w + p] = (((logits[s * h * w + p] - mx).exp()) / z) as f32;
            }
        }
        CoefficientField::new(
            Tensor::from_vec(omega, (n, h, w), &dev()).unwrap(),
            Tensor::from_vec(mu, (r, h, w), &dev()).unwrap(),
        )
        .unwrap()
    }

    fn small_dict(n: usize, r: usize, seed: u64) -> MultiScaleDictionary {
        let mut store = ParamStore::new(DType::F32, seed);
        let atoms = init_atoms(&mut store, n, 2.0, 16.0).unwrap();
        build_dictionary(&atoms, r).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a.to_dtype(DType::F64).unwrap() - b.to_dtype(DType::F64).unwrap())
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    }

    #[test]
    fn identity_coefficients_reproduce_the_input() -> Result<()> {
        let dict = small_dict(3, 3, 1);
        let img = rand_image(3, 9, 7, 2);
        let coeff = CoefficientField::identity(3, 3, 9, 7, DType::F32, &dev())?;
        let out = filter(&img, &dict, &coeff)?;
        assert_eq!(max_abs_diff(&out, &img), 0.0);
        Ok(())
    }

    #[test]
    fn constant_images_scale_by_the_kernel_sum() -> Result<()> {
        // One atom, two scales, constant coefficient fields: thanks to
        // replicate padding the output is constant everywhere, scaled by the
        // blended kernel sum.
        let dict = small_dict(1, 2, 3);
        let grid_sum = dict
            .scale(2)?
            .to_dtype(DType::F64)?
            .sum_all()?
            .to_scalar::<f64>()?;
        let (h, w) = (8, 6);
        let img = Tensor::full(0.4f32, (2, h, w), &dev())?;
        let omega = Tensor::full(1.7f32, (1, h, w), &dev())?;
        let mu = Tensor::cat(
            &[
                Tensor::full(0.3f32, (1, h, w), &dev())?,
                Tensor::full(0.7f32, (1, h, w), &dev())?,
            ],
            0,
        )?;
        let coeff = CoefficientField::new(omega, mu)?;
        let out = filter(&img, &dict, &coeff)?;
        let expected = 0.4 * 1.7 * (0.3 * 1.0 + 0.7 * grid_sum);
        let dev_max = (out.to_dtype(DType::F64)? - expected)?
            .abs()?
            .max_all()?
            .to_scalar::<f64>()?;
        assert!(dev_max < 1e-5, "deviation {dev_max}");
        Ok(())
    }

    #[test]
    fn zero_omega_yields_zero_output() -> Result<()> {
        let dict = small_dict(2, 3, 4);
        let img = rand_image(1, 6, 6, 5);
        let omega = Tensor::zeros((2, 6, 6), DType::F32, &dev())?;
        let mu = Tensor::cat(
            &[
                Tensor::full(0.2f32, (1, 6, 6), &dev())?,
                Tensor::full(0.3f32, (1, 6, 6), &dev())?,
                Tensor::full(0.5f32, (1, 6, 6), &dev())?,
            ],
            0,
        )?;
        let out = filter(&img, &dict, &CoefficientField::new(omega, mu)?)?;
        assert_eq!(out.abs()?.max_all()?.to_scalar::<f32>()?, 0.0);
        Ok(())
    }

    #[test]
    fn single_pixel_images_scale_by_the_kernel_sum() -> Result<()> {
        // A 1x1 image replicates to every tap, so the output is the pixel
        // times the kernel sum.
        let dict = small_dict(2, 2, 6);
        let img = Tensor::full(0.8f32, (1, 1, 1), &dev())?;
        let coeff = rand_coeff(2, 2, 1, 1, 7);
        let out = filter(&img, &dict, &coeff)?;
        let kernel = per_pixel_kernel(&dict, &coeff, 0, 0)?;
        let want = 0.8 * kernel.sum();
        let got = out.to_dtype(DType::F64)?.to_vec3::<f64>()?[0][0][0];
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        Ok(())
    }

    #[test]
    fn per_pixel_kernel_blends_scales() -> Result<()> {
        // mu = (0.5, 0.5), omega = 1, and an all-ones 3x3 sub-dictionary:
        // the kernel is 0.5 * delta + 0.5 * ones(3x3).
        let dict = MultiScaleDictionary::from_grids(vec![
            Tensor::ones((1, 1, 1), DType::F32, &dev())?,
            Tensor::ones((1, 3, 3), DType::F32, &dev())?,
        ])?;
        let omega = Tensor::ones((1, 4, 4), DType::F32, &dev())?;
        let mu = Tensor::full(0.5f32, (2, 4, 4), &dev())?;
        let coeff = CoefficientField::new(omega, mu)?;
        let k = per_pixel_kernel(&dict, &coeff, 2, 1)?;
        for u in 0..3 {
            for v in 0..3 {
                let want = if (u, v) == (1, 1) { 1.0 } else { 0.5 };
                assert!((k[(u, v)] - want).abs() < 1e-7);
            }
        }
        Ok(())
    }

    #[test]
    fn fast_path_matches_the_brute_force_oracle() -> Result<()> {
        for seed in 0..5u64 {
            let n = 1 + (seed as usize % 3);
            let r = 1 + (seed as usize % 3);
            let dict = small_dict(n, r, seed);
            let img = rand_image(2, 10, 9, seed + 100);
            let coeff = rand_coeff(n, r, 10, 9, seed + 200);
            let fast = filter(&img, &dict, &coeff)?;
            let slow = brute_force_filter(&img, &dict, &coeff)?;
            let scale = slow.to_dtype(DType::F64)?.abs()?.max_all()?.to_scalar::<f64>()?;
            let diff = max_abs_diff(&fast, &slow);
            assert!(
                diff <= 1e-5 * scale.max(1.0),
                "seed {seed}: diff {diff} at scale {scale}"
            );
        }
        Ok(())
    }

    #[test]
    fn rejects_bad_shapes_and_unnormalized_mu() -> Result<()> {
        let dict = small_dict(2, 2, 8);
        let img = rand_image(1, 5, 5, 9);
        let coeff = rand_coeff(2, 2, 6, 5, 10);
        assert_eq!(filter(&img, &dict, &coeff).unwrap_err().class(), "validation");

        let omega = Tensor::ones((2, 5, 5), DType::F32, &dev())?;
        let bad_mu = Tensor::full(0.9f32, (2, 5, 5), &dev())?;
        assert_eq!(
            CoefficientField::new(omega, bad_mu).unwrap_err().class(),
            "contract"
        );

        let coeff = rand_coeff(2, 2, 5, 5, 11);
        assert_eq!(
            per_pixel_kernel(&dict, &coeff, 5, 0).unwrap_err().class(),
            "validation"
        );
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn filtering_is_linear_in_the_image(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let dict = small_dict(2, 2, seed);
            let coeff = rand_coeff(2, 2, 6, 7, seed + 1);
            let x = rand_image(1, 6, 7, seed + 2);
            let y = rand_image(1, 6, 7, seed + 3);
            let combo = ((&x * a).unwrap() + (&y * b).unwrap()).unwrap();
            let lhs = filter(&combo, &dict, &coeff).unwrap();
            let rhs = ((filter(&x, &dict, &coeff).unwrap() * a).unwrap()
                + (filter(&y, &dict, &coeff).unwrap() * b).unwrap())
            .unwrap();
            let diff = max_abs_diff(&lhs, &rhs);
            prop_assert!(diff < 1e-4, "linearity violated by {diff}");
        }
    }
}
