//! Single-file checkpoints holding parameters, optimizer moments, and run
//! metadata.
//!
//! The container is a safetensors file. Tensor names are namespaced:
//! `param/<name>` for model parameters and `opt/m/<name>` / `opt/v/<name>`
//! for Adam moments. The header metadata records the format version, the
//! structural config fingerprint, the full resolved config text, the
//! optimizer step, and the position of the trainer's data-sampling RNG —
//! everything needed to resume training or rebuild the model for
//! evaluation from the file alone.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};

use crate::error::{IkError, Result};
use crate::param::{Adam, ParamStore};

/// Format version written into every checkpoint.
pub const CHECKPOINT_VERSION: u32 = 1;

const PARAM_PREFIX: &str = "param/";
const OPT_PREFIX: &str = "opt/";

/// Header metadata stored alongside the tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    /// Fingerprint of the structural part of the run config.
    pub fingerprint: String,
    /// Full resolved config, serialized as config-file text.
    pub config: String,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    /// Word position of the trainer's data-sampling RNG stream.
    pub rng_word_pos: u128,
}

/// Write `store` (and optionally the optimizer moments) to `path`.
pub fn save_checkpoint(
    path: &Path,
    store: &ParamStore,
    opt: Option<&Adam>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = store
        .iter()
        .map(|(name, var)| (format!("{PARAM_PREFIX}{name}"), var.as_tensor().clone()))
        .collect();
    if let Some(opt) = opt {
        for (key, tensor) in opt.state() {
            tensors.push((format!("{OPT_PREFIX}{key}"), tensor));
        }
    }
    let header = HashMap::from([
        ("version".to_string(), CHECKPOINT_VERSION.to_string()),
        ("fingerprint".to_string(), meta.fingerprint.clone()),
        ("config".to_string(), meta.config.clone()),
        ("step".to_string(), meta.step.to_string()),
        ("rng_word_pos".to_string(), meta.rng_word_pos.to_string()),
    ]);
    safetensors::serialize_to_file(tensors.iter().map(|(n, t)| (n, t)), &Some(header), path)
        .map_err(|e| IkError::Checkpoint(format!("cannot write {}: {e}", path.display())))
}

/// A checkpoint loaded into memory.
#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    tensors: HashMap<String, Tensor>,
}

fn meta_field<'m>(header: &'m HashMap<String, String>, key: &str, path: &Path) -> Result<&'m str> {
    header.get(key).map(String::as_str).ok_or_else(|| {
        IkError::Checkpoint(format!("{}: header lacks the {key:?} field", path.display()))
    })
}

impl Checkpoint {
    /// Read a checkpoint file. Rejects unknown format versions.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| IkError::io(path, e))?;
        let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| IkError::Checkpoint(format!("cannot parse {}: {e}", path.display())))?;
        let header = header.metadata().clone().ok_or_else(|| {
            IkError::Checkpoint(format!("{}: no header metadata", path.display()))
        })?;
        let version: u32 = meta_field(&header, "version", path)?
            .parse()
            .map_err(|_| IkError::Checkpoint(format!("{}: malformed version", path.display())))?;
        if version != CHECKPOINT_VERSION {
            return Err(IkError::Checkpoint(format!(
                "{}: format version {version}, this build reads version {CHECKPOINT_VERSION}",
                path.display()
            )));
        }
        let parse_err =
            |key: &str| IkError::Checkpoint(format!("{}: malformed {key} field", path.display()));
        let meta = CheckpointMeta {
            fingerprint: meta_field(&header, "fingerprint", path)?.to_string(),
            config: meta_field(&header, "config", path)?.to_string(),
            step: meta_field(&header, "step", path)?.parse().map_err(|_| parse_err("step"))?,
            rng_word_pos: meta_field(&header, "rng_word_pos", path)?
                .parse()
                .map_err(|_| parse_err("rng_word_pos"))?,
        };
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        Ok(Checkpoint { meta, tensors })
    }

    /// Names of the stored model parameters (without the namespace prefix).
    pub fn param_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .tensors
            .keys()
            .filter_map(|k| k.strip_prefix(PARAM_PREFIX))
            .collect();
        names.sort_unstable();
        names
    }

    /// True when Adam moments were saved alongside the parameters.
    pub fn has_optimizer_state(&self) -> bool {
        self.tensors.keys().any(|k| k.starts_with(OPT_PREFIX))
    }

    /// Copy every stored parameter into `store`. The name sets must match
    /// exactly in both directions.
    pub fn restore_params(&self, store: &ParamStore) -> Result<()> {
        let stored: BTreeSet<&str> = self.param_names().into_iter().collect();
        for name in store.names() {
            if !stored.contains(name.as_str()) {
                return Err(IkError::Checkpoint(format!(
                    "checkpoint has no value for parameter {name:?}"
                )));
            }
        }
        for name in &stored {
            // `set` rejects names the model does not know and shape drift.
            store.set(name, &self.tensors[&format!("{PARAM_PREFIX}{name}")])?;
        }
        Ok(())
    }

    /// Restore Adam moments and the step counter.
    pub fn restore_optimizer(&self, opt: &mut Adam) -> Result<()> {
        if !self.has_optimizer_state() {
            return Err(IkError::Checkpoint(
                "checkpoint carries no optimizer state".to_string(),
            ));
        }
        opt.restore(self.meta.step, |key| {
            self.tensors.get(&format!("{OPT_PREFIX}{key}")).cloned()
        })
    }
}
