//! Named parameter storage, deterministic initialization, and the Adam
//! optimizer with cosine learning-rate annealing.
//!
//! All trainable tensors live in a [`ParamStore`] keyed by a hierarchical
//! name (`"isc.srt.enc1.feat.weight"`). Initialization draws from a seeded
//! ChaCha stream in `f64` and casts afterwards, so parameter values are
//! bit-identical run to run for a fixed seed, independent of dtype.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{validation, IkError, Result};

/// Lower bound enforced on attention temperature parameters after every
/// optimizer step. Keeps the attention logits well defined.
pub const ALPHA_FLOOR: f64 = 1e-4;

/// Name suffix that marks a parameter as an attention temperature.
pub const ALPHA_SUFFIX: &str = ".alpha";

/// Registry of named trainable parameters.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    /// Create an empty store whose initializers draw from `seed`.
    pub fn new(dtype: DType, seed: u64) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn register(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(validation(format!("duplicate parameter name {name:?}")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    /// New parameter drawn i.i.d. from `U[lo, hi)`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| lo + self.rng.gen::<f64>() * (hi - lo)).collect();
        self.register(name, values, shape)
    }

    /// New parameter filled with a constant.
    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.register(name, vec![value; n], shape)
    }

    /// New all-zero parameter.
    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.constant(name, shape, 0.0)
    }

    /// New parameter from explicit values (row-major).
    pub fn from_values(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(validation(format!(
                "parameter {name:?}: {} values for shape {shape:?}",
                values.len()
            )));
        }
        self.register(name, values, shape)
    }

    /// One `f64` sample from the store's init stream (used for scalar draws
    /// such as atom frequencies, so they share the seeded stream).
    pub fn draw_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.rng.gen::<f64>() * (hi - lo)
    }

    /// Look up a registered parameter tensor by name.
    pub fn get(&self, name: &str) -> Result<Tensor> {
        self.vars
            .get(name)
            .map(|v| v.as_tensor().clone())
            .ok_or_else(|| validation(format!("unknown parameter {name:?}")))
    }

    /// Overwrite a parameter value in place (checkpoint restore).
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| IkError::Checkpoint(format!("checkpoint names unknown parameter {name:?}")))?;
        let value = value.to_dtype(self.dtype)?;
        if value.dims() != var.dims() {
            return Err(IkError::Checkpoint(format!(
                "parameter {name:?}: checkpoint shape {:?} != model shape {:?}",
                value.dims(),
                var.dims()
            )));
        }
        var.set(&value)?;
        Ok(())
    }

    /// Iterate parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }
}

/// Fixed Adam hyper-parameters (the learning rate is supplied per step).
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
        }
    }
}

/// Adam with bias correction, optional global-norm gradient clipping, and a
/// positivity projection for attention temperatures.
///
/// The moment buffers are plain tensors keyed like their parameters, so the
/// whole state round-trips through checkpoints.
pub struct Adam {
    entries: Vec<AdamEntry>,
    cfg: AdamConfig,
    step: u64,
}

struct AdamEntry {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
}

impl Adam {
    /// Snapshot the store's parameters (in name order) with zeroed moments.
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Result<Self> {
        let mut entries = Vec::with_capacity(store.len());
        for (name, var) in store.iter() {
            let zeros = Tensor::zeros(var.shape(), var.dtype(), var.device())?;
            entries.push(AdamEntry {
                name: name.clone(),
                var: var.clone(),
                m: zeros.clone(),
                v: zeros,
            });
        }
        Ok(Adam { entries, cfg, step: 0 })
    }

    /// Number of optimizer steps taken so far.
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Global L2 norm over all gradients present in `grads`.
    fn grad_norm(&self, grads: &GradStore) -> Result<f64> {
        let mut total = 0.0f64;
        for entry in &self.entries {
            if let Some(g) = grads.get(&entry.var) {
                let sq = g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
                total += sq;
            }
        }
        Ok(total.sqrt())
    }

    /// Apply one update with learning rate `lr`. Parameters without a
    /// gradient in `grads` are left untouched.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        let scale = match self.cfg.clip_norm {
            Some(clip) => {
                let norm = self.grad_norm(grads)?;
                if !norm.is_finite() {
                    return Err(IkError::Training(format!(
                        "non-finite gradient norm at optimizer step {}",
                        self.step + 1
                    )));
                }
                if norm > clip {
                    clip / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for entry in &mut self.entries {
            let Some(grad) = grads.get(&entry.var) else { continue };
            // Detach both the gradient and the new moments: the moment
            // buffers persist across steps, and without the detach they would
            // keep every past step's autograd graph alive.
            let grad = if scale != 1.0 {
                (grad * scale)?.detach()
            } else {
                grad.detach()
            };
            entry.m = ((&entry.m * self.cfg.beta1)? + (&grad * (1.0 - self.cfg.beta1))?)?.detach();
            entry.v = ((&entry.v * self.cfg.beta2)? + (grad.sqr()? * (1.0 - self.cfg.beta2))?)?.detach();
            let m_hat = (&entry.m / bc1)?;
            let v_hat = (&entry.v / bc2)?;
            let delta = (m_hat * lr)?.div(&(v_hat.sqrt()? + self.cfg.eps)?)?;
            let mut updated = entry.var.as_tensor().sub(&delta)?;
            if entry.name.ends_with(ALPHA_SUFFIX) {
                updated = updated.maximum(ALPHA_FLOOR)?;
            }
            entry.var.set(&updated)?;
        }
        Ok(())
    }

    /// Moment buffers for checkpointing, keyed `m/<name>` and `v/<name>`.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(self.entries.len() * 2);
        for e in &self.entries {
            out.push((format!("m/{}", e.name), e.m.clone()));
            out.push((format!("v/{}", e.name), e.v.clone()));
        }
        out
    }

    /// Restore moment buffers and step counter from a checkpoint.
    pub fn restore(&mut self, step: u64, mut lookup: impl FnMut(&str) -> Option<Tensor>) -> Result<()> {
        self.step = step;
        for e in &mut self.entries {
            let m = lookup(&format!("m/{}", e.name));
            let v = lookup(&format!("v/{}", e.name));
            match (m, v) {
                (Some(m), Some(v)) => {
                    if m.dims() != e.m.dims() || v.dims() != e.v.dims() {
                        return Err(IkError::Checkpoint(format!(
                            "optimizer state for {:?} has wrong shape",
                            e.name
                        )));
                    }
                    e.m = m.to_dtype(e.m.dtype())?;
                    e.v = v.to_dtype(e.v.dtype())?;
                }
                _ => {
                    return Err(IkError::Checkpoint(format!(
                        "optimizer state for {:?} missing from checkpoint",
                        e.name
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `lr0` down to `lr_min` over `total` steps.
///
/// Steps past `total` stay at `lr_min`; `total == 0` pins the rate at `lr0`.
pub fn cosine_lr(step: u64, total: u64, lr0: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = step.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}
