//! Implicit kernel atoms and the multi-scale dictionary rendered from them.
//!
//! Each atom is a tiny coordinate MLP `(x, y) -> value` with sinusoidal
//! activations and a per-atom frequency. Because the atom is a continuous
//! function of normalized coordinates, the same network can be sampled on a
//! `1x1`, `3x3`, ..., `(2R-1)x(2R-1)` lattice to populate every scale of the
//! dictionary. The scale-1 sub-dictionary is a fixed identity (delta) kernel
//! held out of gradient updates; it anchors the filter so a degenerate
//! coefficient field reproduces the input.

use candle_core::{DType, Device, Tensor};

use crate::error::{contract, validation, Result};
use crate::param::ParamStore;

/// Hidden width of the atom MLP.
pub const ATOM_HIDDEN: usize = 32;

/// Normalized coordinate of lattice cell `i` on a `size`-cell axis.
///
/// Corners map to -1 and +1; a single cell maps to the origin.
pub fn lattice_coord(i: usize, size: usize) -> f64 {
    if size <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (size - 1) as f64
    }
}

/// One implicit kernel atom: `phi(x, y) = W3 sin(W2 sin(f*(W1 [x,y] + b1)) + b2) + b3`.
#[derive(Debug, Clone)]
pub struct InrAtom {
    frequency: Tensor, // (1,)
    w1: Tensor,        // (2, H)
    b1: Tensor,        // (H,)
    w2: Tensor,        // (H, H)
    b2: Tensor,        // (H,)
    w3: Tensor,        // (H, 1)
    b3: Tensor,        // (1,)
}

impl InrAtom {
    fn new(store: &mut ParamStore, name: &str, frequency: f64) -> Result<Self> {
        let h = ATOM_HIDDEN;
        // First layer follows the sinusoidal-MLP convention U[-1/in, 1/in];
        // deeper layers use U[-sqrt(6/H), sqrt(6/H)] to keep pre-activations
        // in the responsive range of the sine.
        let deep = (6.0 / h as f64).sqrt();
        let frequency = store.from_values(&format!("{name}.freq"), &[1], vec![frequency])?;
        let w1 = store.uniform(&format!("{name}.w1"), &[2, h], -0.5, 0.5)?;
        let b1 = store.uniform(&format!("{name}.b1"), &[h], -0.5, 0.5)?;
        let w2 = store.uniform(&format!("{name}.w2"), &[h, h], -deep, deep)?;
        let b2 = store.uniform(&format!("{name}.b2"), &[h], -deep, deep)?;
        let w3 = store.uniform(&format!("{name}.w3"), &[h, 1], -deep, deep)?;
        let b3 = store.zeros(&format!("{name}.b3"), &[1])?;
        Ok(InrAtom { frequency, w1, b1, w2, b2, w3, b3 })
    }

    /// Assemble an atom from explicit tensors (tests and analysis).
    pub fn from_parts(
        frequency: Tensor,
        w1: Tensor,
        b1: Tensor,
        w2: Tensor,
        b2: Tensor,
        w3: Tensor,
        b3: Tensor,
    ) -> Result<Self> {
        let h = ATOM_HIDDEN;
        let expect = [
            (frequency.dims(), vec![1]),
            (w1.dims(), vec![2, h]),
            (b1.dims(), vec![h]),
            (w2.dims(), vec![h, h]),
            (b2.dims(), vec![h]),
            (w3.dims(), vec![h, 1]),
            (b3.dims(), vec![1]),
        ];
        for (got, want) in expect {
            if got != want.as_slice() {
                return Err(validation(format!(
                    "atom part has shape {got:?}, expected {want:?}"
                )));
            }
        }
        Ok(InrAtom { frequency, w1, b1, w2, b2, w3, b3 })
    }

    pub fn frequency(&self) -> Result<f64> {
        Ok(self.frequency.to_dtype(DType::F64)?.to_vec1::<f64>()?[0])
    }

    fn dtype(&self) -> DType {
        self.w1.dtype()
    }

    fn device(&self) -> &Device {
        self.w1.device()
    }

    /// Sample the atom on an odd `size x size` lattice over `[-1, 1]^2`.
    ///
    /// `grid[a][b]` evaluates `phi` at `(lattice_coord(a), lattice_coord(b))`,
    /// so the first index moves along the first network input.
    pub fn render(&self, size: usize) -> Result<Tensor> {
        if size == 0 || size % 2 == 0 {
            return Err(validation(format!(
                "kernel size must be odd and positive, got {size}"
            )));
        }
        let n = size * size;
        let mut coords = Vec::with_capacity(n * 2);
        for a in 0..size {
            for b in 0..size {
                coords.push(lattice_coord(a, size));
                coords.push(lattice_coord(b, size));
            }
        }
        let coords = Tensor::from_vec(coords, (n, 2), self.device())?.to_dtype(self.dtype())?;
        let h1 = coords
            .matmul(&self.w1)?
            .broadcast_add(&self.b1)?
            .broadcast_mul(&self.frequency.reshape((1, 1))?)?
            .sin()?;
        let h2 = h1.matmul(&self.w2)?.broadcast_add(&self.b2)?.sin()?;
        let out = h2.matmul(&self.w3)?.broadcast_add(&self.b3.reshape((1, 1))?)?;
        Ok(out.reshape((size, size))?)
    }
}

/// Create `n_atoms` atoms with frequencies drawn from `U[freq_low, freq_high]`.
///
/// All weights and frequencies come from the store's seeded stream, so two
/// stores with the same seed produce bit-identical atoms.
pub fn init_atoms(
    store: &mut ParamStore,
    n_atoms: usize,
    freq_low: f64,
    freq_high: f64,
) -> Result<Vec<InrAtom>> {
    if n_atoms == 0 {
        return Err(validation("dictionary needs at least one atom"));
    }
    if !(freq_low > 0.0 && freq_low <= freq_high) {
        return Err(validation(format!(
            "invalid frequency range [{freq_low}, {freq_high}]"
        )));
    }
    (0..n_atoms)
        .map(|i| {
            let f = store.draw_uniform(freq_low, freq_high);
            InrAtom::new(store, &format!("atoms.{i}"), f)
        })
        .collect()
}

/// Kernel grids for scales `1..=R`; scale `r` holds `n_atoms` grids of side
/// `2r - 1`. Scale 1 is the fixed delta.
#[derive(Debug)]
pub struct MultiScaleDictionary {
    scales: Vec<Tensor>, // scales[r-1]: (n_atoms, 2r-1, 2r-1)
}

impl MultiScaleDictionary {
    /// Validate and wrap pre-rendered grids (scale 1 first).
    pub fn from_grids(scales: Vec<Tensor>) -> Result<Self> {
        if scales.is_empty() {
            return Err(validation("dictionary needs at least one scale"));
        }
        let n_atoms = scales[0].dims3().map_err(|_| {
            validation("dictionary scales must be rank-3 (atoms, size, size)")
        })?.0;
        for (idx, grids) in scales.iter().enumerate() {
            let (n, h, w) = grids
                .dims3()
                .map_err(|_| validation("dictionary scales must be rank-3 (atoms, size, size)"))?;
            let want = 2 * (idx + 1) - 1;
            if h != want || w != want {
                return Err(validation(format!(
                    "scale {} grids are {h}x{w}, expected {want}x{want}",
                    idx + 1
                )));
            }
            if n != n_atoms {
                return Err(validation(format!(
                    "scale {} holds {n} atoms, expected {n_atoms}",
                    idx + 1
                )));
            }
            let values = grids.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(contract(format!("scale {} contains non-finite values", idx + 1)));
            }
            if idx == 0 && values.iter().any(|v| (v - 1.0).abs() > 1e-6) {
                return Err(contract("scale 1 must hold the fixed delta kernel"));
            }
        }
        Ok(MultiScaleDictionary { scales })
    }

    pub fn n_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.scales[0].dims3().map(|d| d.0).unwrap_or(0)
    }

    /// Grids at 1-based scale `r`, shaped `(n_atoms, 2r-1, 2r-1)`.
    pub fn scale(&self, r: usize) -> Result<&Tensor> {
        self.scales
            .get(r.wrapping_sub(1))
            .ok_or_else(|| validation(format!("scale {r} out of range 1..={}", self.scales.len())))
    }

    /// Side length of the largest kernel, `2R - 1`.
    pub fn max_size(&self) -> usize {
        2 * self.scales.len() - 1
    }
}

/// Render every atom at every scale and assemble the dictionary.
///
/// Scale 1 is a constant all-ones `(n_atoms, 1, 1)` grid — the shared delta —
/// created outside the autodiff graph so it never receives updates.
pub fn build_dictionary(atoms: &[InrAtom], r_scales: usize) -> Result<MultiScaleDictionary> {
    if atoms.is_empty() {
        return Err(validation("dictionary needs at least one atom"));
    }
    if r_scales == 0 {
        return Err(validation("dictionary needs at least one scale"));
    }
    let dtype = atoms[0].dtype();
    let device = atoms[0].device().clone();
    let mut scales = Vec::with_capacity(r_scales);
    scales.push(Tensor::ones((atoms.len(), 1, 1), dtype, &device)?);
    for r in 2..=r_scales {
        let size = 2 * r - 1;
        let grids = atoms
            .iter()
            .map(|a| a.render(size)?.unsqueeze(0).map_err(Into::into))
            .collect::<Result<Vec<_>>>()?;
        scales.push(Tensor::cat(&grids, 0)?);
    }
    MultiScaleDictionary::from_grids(scales)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atoms_for_seed(seed: u64, n: usize) -> Result<Vec<InrAtom>> {
        let mut store = ParamStore::new(DType::F32, seed);
        init_atoms(&mut store, n, 2.0, 16.0)
    }

    #[test]
    fn lattice_maps_corners_to_unit_square() {
        assert_eq!(lattice_coord(0, 5), -1.0);
        assert_eq!(lattice_coord(4, 5), 1.0);
        assert_eq!(lattice_coord(2, 5), 0.0);
        assert_eq!(lattice_coord(0, 1), 0.0);
    }

    #[test]
    fn init_is_bit_identical_for_a_seed() -> Result<()> {
        let a = atoms_for_seed(7, 3)?;
        let b = atoms_for_seed(7, 3)?;
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.frequency()?, y.frequency()?);
            let gx = x.render(13)?.to_vec2::<f32>()?;
            let gy = y.render(13)?.to_vec2::<f32>()?;
            assert_eq!(gx, gy);
        }
        let c = atoms_for_seed(8, 3)?;
        let ga = a[0].render(13)?.to_vec2::<f32>()?;
        let gc = c[0].render(13)?.to_vec2::<f32>()?;
        assert_ne!(ga, gc);
        Ok(())
    }

    #[test]
    fn frequencies_start_inside_the_sampling_range() -> Result<()> {
        for seed in 0..20 {
            for atom in atoms_for_seed(seed, 4)? {
                let f = atom.frequency()?;
                assert!((2.0..=16.0).contains(&f), "frequency {f} out of range");
            }
        }
        Ok(())
    }

    #[test]
    fn render_rejects_even_or_zero_sizes() -> Result<()> {
        let atoms = atoms_for_seed(1, 1)?;
        assert_eq!(atoms[0].render(4).unwrap_err().class(), "validation");
        assert_eq!(atoms[0].render(0).unwrap_err().class(), "validation");
        Ok(())
    }

    /// With the second layer operating in its linear regime, an atom can be
    /// hand-set to realize `phi(x, y) = sin(2x)`; the render must match the
    /// closed form on the lattice.
    #[test]
    fn hand_set_atom_matches_closed_form() -> Result<()> {
        let dev = Device::Cpu;
        let h = ATOM_HIDDEN;
        let eps = 1e-5f64;
        // w1 routes x into hidden unit 0; frequency 2 makes h1[0] = sin(2x).
        let mut w1 = vec![0.0f64; 2 * h];
        w1[0] = 1.0;
        // w2 scales by eps so sin(eps*t) ~= eps*t; w3 divides back out.
        let mut w2 = vec![0.0f64; h * h];
        w2[0] = eps;
        let mut w3 = vec![0.0f64; h];
        w3[0] = 1.0 / eps;
        let atom = InrAtom::from_parts(
            Tensor::from_vec(vec![2.0f64], (1,), &dev)?,
            Tensor::from_vec(w1, (2, h), &dev)?,
            Tensor::zeros((h,), DType::F64, &dev)?,
            Tensor::from_vec(w2, (h, h), &dev)?,
            Tensor::zeros((h,), DType::F64, &dev)?,
            Tensor::from_vec(w3, (h, 1), &dev)?,
            Tensor::zeros((1,), DType::F64, &dev)?,
        )?;
        let size = 7;
        let grid = atom.render(size)?.to_vec2::<f64>()?;
        for (a, row) in grid.iter().enumerate() {
            let want = (2.0 * lattice_coord(a, size)).sin();
            for v in row {
                assert!((v - want).abs() < 1e-9, "grid {v} vs closed form {want}");
            }
        }
        Ok(())
    }

    #[test]
    fn dictionary_has_odd_sizes_and_fixed_delta() -> Result<()> {
        let atoms = atoms_for_seed(3, 8)?;
        let dict = build_dictionary(&atoms, 7)?;
        assert_eq!(dict.n_scales(), 7);
        assert_eq!(dict.n_atoms(), 8);
        assert_eq!(dict.max_size(), 13);
        for r in 1..=7 {
            let dims = dict.scale(r)?.dims3()?;
            assert_eq!(dims, (8, 2 * r - 1, 2 * r - 1));
        }
        let delta = dict.scale(1)?.to_vec3::<f32>()?;
        for atom in delta {
            assert_eq!(atom, vec![vec![1.0]]);
        }
        Ok(())
    }

    #[test]
    fn atom_parameters_get_gradients_but_delta_cannot() -> Result<()> {
        let mut store = ParamStore::new(DType::F32, 5);
        let atoms = init_atoms(&mut store, 2, 2.0, 16.0)?;
        let dict = build_dictionary(&atoms, 3)?;
        let loss = (dict.scale(2)?.sqr()?.sum_all()? + dict.scale(3)?.sqr()?.sum_all()?)?;
        let grads = loss.backward()?;
        for (name, var) in store.iter() {
            // b3 of an atom is all-zero but still reachable; every atom
            // parameter must have a gradient entry.
            assert!(
                grads.get(var).is_some(),
                "no gradient for atom parameter {name}"
            );
        }
        // The delta grid is a plain constant: nothing in the store maps to it
        // and the graph cannot update it; its values stay exactly one.
        let delta = dict.scale(1)?.to_vec3::<f32>()?;
        assert!(delta.iter().all(|a| a == &vec![vec![1.0f32]]));
        Ok(())
    }

    #[test]
    fn from_grids_validates_shapes_and_delta() -> Result<()> {
        let dev = Device::Cpu;
        let delta = Tensor::ones((2, 1, 1), DType::F32, &dev)?;
        let wrong_size = Tensor::ones((2, 5, 5), DType::F32, &dev)?;
        let err = MultiScaleDictionary::from_grids(vec![delta.clone(), wrong_size]).unwrap_err();
        assert_eq!(err.class(), "validation");

        let not_delta = Tensor::full(0.5f32, (2, 1, 1), &dev)?;
        let err = MultiScaleDictionary::from_grids(vec![not_delta]).unwrap_err();
        assert_eq!(err.class(), "contract");

        let ok = MultiScaleDictionary::from_grids(vec![
            delta,
            Tensor::ones((2, 3, 3), DType::F32, &dev)?,
        ])?;
        assert_eq!(ok.n_scales(), 2);
        Ok(())
    }
}
