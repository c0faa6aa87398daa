//! Run configuration: flat `key = value` files, flag overrides, and
//! per-field provenance.
//!
//! A [`RunConfig`] starts from built-in defaults (a desk-scale setup that
//! trains in minutes on a CPU), then applies a config file, then flag
//! overrides — later sources win and each field remembers where its value
//! came from. The canonical text form round-trips through [`RunConfig::
//! to_text`] / [`RunConfig::from_text`] and is embedded verbatim in every
//! checkpoint, so a checkpoint alone suffices to rebuild its model.
//!
//! The [`RunConfig::fingerprint`] covers only the fields that determine
//! the parameter set (widths and component switches). Two configs that
//! disagree on, say, the learning rate still address the same parameters
//! and may share checkpoints; two configs with different widths must not.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::degradation::Scenario;
use crate::error::{IkError, Result};
use crate::loss::LossWeights;
use crate::model::{AblationFlags, ModelDims};
use crate::param::AdamConfig;

/// Where a config value came from. Later variants override earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Default => write!(f, "default"),
            Source::File => write!(f, "file"),
            Source::Flag => write!(f, "flag"),
        }
    }
}

/// Every recognized config key, in canonical serialization order.
pub const CONFIG_KEYS: &[&str] = &[
    "channels",
    "scales",
    "atoms",
    "radius",
    "feat_blocks",
    "up_blocks",
    "lr",
    "lr_min",
    "steps",
    "epochs",
    "batch",
    "patch",
    "seed",
    "grad_clip",
    "lambda",
    "charbonnier_eps",
    "save_every",
    "log_every",
    "scenario",
    "noise_sigma",
    "data",
    "out",
    "no_isc",
    "no_ita",
    "no_rec",
    "no_bidir",
    "no_lc",
];

/// Merged view of model widths, optimization settings, loss weights, data
/// paths, and ablation switches.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Feature channel width.
    pub channels: usize,
    /// Number of dictionary scales.
    pub scales: usize,
    /// Number of atoms per scale.
    pub atoms: usize,
    /// Temporal radius: training windows span `2 * radius + 1` frames.
    pub radius: usize,
    /// Residual blocks in the feature extractor.
    pub feat_blocks: usize,
    /// Residual blocks in the upsampler.
    pub up_blocks: usize,
    /// Initial learning rate.
    pub lr: f64,
    /// Cosine-annealing floor.
    pub lr_min: f64,
    /// Total optimizer steps; 0 defers to `epochs`.
    pub steps: u64,
    /// Epochs over the window list; used only when `steps` is 0.
    pub epochs: u64,
    /// Independent clip windows averaged per optimizer step.
    pub batch: usize,
    /// Square crop side on the low-resolution grid.
    pub patch: usize,
    /// Seed for initialization and data sampling.
    pub seed: u64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// Weight of the correction loss term.
    pub lambda: f64,
    /// Charbonnier smoothing constant.
    pub charbonnier_eps: f64,
    /// Checkpoint cadence in steps.
    pub save_every: u64,
    /// Log cadence in steps.
    pub log_every: u64,
    /// Degradation scenario for the `degrade` subcommand.
    pub scenario: String,
    /// Additive noise level on the 0..255 scale for `degrade`; 0 disables.
    pub noise_sigma: f64,
    /// Root directory holding clip triplets.
    pub data: String,
    /// Output directory for run artifacts.
    pub out: String,
    pub no_isc: bool,
    pub no_ita: bool,
    pub no_rec: bool,
    pub no_bidir: bool,
    pub no_lc: bool,
    sources: BTreeMap<String, Source>,
}

impl Default for RunConfig {
    /// Desk-scale defaults: small widths, one clip window per step, 2000
    /// steps. Overfits a single clip on a CPU in minutes.
    fn default() -> Self {
        RunConfig {
            channels: 16,
            scales: 3,
            atoms: 4,
            radius: 1,
            feat_blocks: 4,
            up_blocks: 6,
            lr: 1e-4,
            lr_min: 1e-7,
            steps: 2000,
            epochs: 0,
            batch: 1,
            patch: 32,
            seed: 0,
            grad_clip: 10.0,
            lambda: 0.2,
            charbonnier_eps: 1e-3,
            save_every: 500,
            log_every: 50,
            scenario: "gaussian".to_string(),
            noise_sigma: 0.0,
            data: String::new(),
            out: "runs".to_string(),
            no_isc: false,
            no_ita: false,
            no_rec: false,
            no_bidir: false,
            no_lc: false,
            sources: BTreeMap::new(),
        }
    }
}

fn bad_value(key: &str, value: &str, want: &str) -> IkError {
    IkError::Config(format!("key {key:?}: cannot parse {value:?} as {want}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(bad_value(key, value, "a boolean (true/false/1/0)")),
    }
}

impl RunConfig {
    /// The full-scale setup matching the published training protocol:
    /// wide model, batched windows, 400 epochs.
    pub fn full() -> Self {
        let mut cfg = RunConfig {
            channels: 64,
            scales: 7,
            atoms: 8,
            radius: 2,
            feat_blocks: 8,
            up_blocks: 13,
            steps: 0,
            epochs: 400,
            batch: 7,
            patch: 256,
            save_every: 2000,
            ..RunConfig::default()
        };
        cfg.sources.clear();
        cfg
    }

    /// Assign one key. Unknown keys and unparsable values are errors.
    pub fn set(&mut self, key: &str, value: &str, source: Source) -> Result<()> {
        macro_rules! num {
            ($field:ident, $ty:literal) => {{
                self.$field = value.parse().map_err(|_| bad_value(key, value, $ty))?;
            }};
        }
        match key {
            "channels" => num!(channels, "a positive integer"),
            "scales" => num!(scales, "a positive integer"),
            "atoms" => num!(atoms, "a positive integer"),
            "radius" => num!(radius, "a positive integer"),
            "feat_blocks" => num!(feat_blocks, "a positive integer"),
            "up_blocks" => num!(up_blocks, "a positive integer"),
            "lr" => num!(lr, "a number"),
            "lr_min" => num!(lr_min, "a number"),
            "steps" => num!(steps, "an integer"),
            "epochs" => num!(epochs, "an integer"),
            "batch" => num!(batch, "a positive integer"),
            "patch" => num!(patch, "a positive integer"),
            "seed" => num!(seed, "an integer"),
            "grad_clip" => num!(grad_clip, "a number"),
            "lambda" => num!(lambda, "a number"),
            "charbonnier_eps" => num!(charbonnier_eps, "a number"),
            "save_every" => num!(save_every, "a positive integer"),
            "log_every" => num!(log_every, "a positive integer"),
            "scenario" => self.scenario = value.to_string(),
            "noise_sigma" => num!(noise_sigma, "a number"),
            "data" => self.data = value.to_string(),
            "out" => self.out = value.to_string(),
            "no_isc" => self.no_isc = parse_bool(key, value)?,
            "no_ita" => self.no_ita = parse_bool(key, value)?,
            "no_rec" => self.no_rec = parse_bool(key, value)?,
            "no_bidir" => self.no_bidir = parse_bool(key, value)?,
            "no_lc" => self.no_lc = parse_bool(key, value)?,
            _ => return Err(IkError::Config(format!("unknown config key {key:?}"))),
        }
        self.sources.insert(key.to_string(), source);
        Ok(())
    }

    /// Current value of a key, formatted as it would be serialized.
    pub fn value_of(&self, key: &str) -> Result<String> {
        let v = match key {
            "channels" => self.channels.to_string(),
            "scales" => self.scales.to_string(),
            "atoms" => self.atoms.to_string(),
            "radius" => self.radius.to_string(),
            "feat_blocks" => self.feat_blocks.to_string(),
            "up_blocks" => self.up_blocks.to_string(),
            "lr" => self.lr.to_string(),
            "lr_min" => self.lr_min.to_string(),
            "steps" => self.steps.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch" => self.batch.to_string(),
            "patch" => self.patch.to_string(),
            "seed" => self.seed.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "lambda" => self.lambda.to_string(),
            "charbonnier_eps" => self.charbonnier_eps.to_string(),
            "save_every" => self.save_every.to_string(),
            "log_every" => self.log_every.to_string(),
            "scenario" => self.scenario.clone(),
            "noise_sigma" => self.noise_sigma.to_string(),
            "data" => self.data.clone(),
            "out" => self.out.clone(),
            "no_isc" => self.no_isc.to_string(),
            "no_ita" => self.no_ita.to_string(),
            "no_rec" => self.no_rec.to_string(),
            "no_bidir" => self.no_bidir.to_string(),
            "no_lc" => self.no_lc.to_string(),
            _ => return Err(IkError::Config(format!("unknown config key {key:?}"))),
        };
        Ok(v)
    }

    /// Where the current value of `key` came from.
    pub fn source(&self, key: &str) -> Source {
        self.sources.get(key).copied().unwrap_or(Source::Default)
    }

    /// Apply `key = value` text. `#` starts a comment; blank lines are
    /// skipped.
    pub fn apply_text(&mut self, text: &str, source: Source) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                IkError::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            self.set(key.trim(), value.trim(), source)?;
        }
        Ok(())
    }

    /// Apply a config file on top of the current values.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            IkError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        self.apply_text(&text, Source::File)
            .map_err(|e| IkError::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults plus `text`, validated. Inverse of [`RunConfig::to_text`].
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, Source::File)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialization: every key, fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.value_of(key).expect("listed key"));
            out.push('\n');
        }
        out
    }

    /// Like [`RunConfig::to_text`] but annotates each line with its source.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let line = format!("{key} = {}", self.value_of(key).expect("listed key"));
            out.push_str(&format!("{line:<28} # {}\n", self.source(key)));
        }
        out
    }

    /// Canonical description of the fields that determine the parameter
    /// set.
    pub fn model_signature(&self) -> String {
        format!(
            "channels={} scales={} atoms={} feat_blocks={} up_blocks={} \
             no_isc={} no_ita={} no_rec={} no_bidir={}",
            self.channels,
            self.scales,
            self.atoms,
            self.feat_blocks,
            self.up_blocks,
            self.no_isc,
            self.no_ita,
            self.no_rec,
            self.no_bidir,
        )
    }

    /// Short hash of [`RunConfig::model_signature`]; stored in checkpoints
    /// and reports.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.model_signature().as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(IkError::Config(msg));
        if self.channels == 0
            || self.scales == 0
            || self.atoms == 0
            || self.radius == 0
            || self.feat_blocks == 0
            || self.up_blocks == 0
        {
            return err("model widths and radius must all be positive".to_string());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return err(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_min.is_finite() && (0.0..=self.lr).contains(&self.lr_min)) {
            return err(format!("lr_min must lie in [0, lr], got {}", self.lr_min));
        }
        if self.steps == 0 && self.epochs == 0 {
            return err("set steps or epochs to a positive value".to_string());
        }
        if self.batch == 0 {
            return err("batch must be positive".to_string());
        }
        if self.patch < 8 || self.patch % 4 != 0 {
            return err(format!(
                "patch must be a multiple of 4 and at least 8, got {}",
                self.patch
            ));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return err(format!("grad_clip must be >= 0, got {}", self.grad_clip));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return err(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.charbonnier_eps.is_finite() && self.charbonnier_eps > 0.0) {
            return err(format!(
                "charbonnier_eps must be positive, got {}",
                self.charbonnier_eps
            ));
        }
        if self.save_every == 0 || self.log_every == 0 {
            return err("save_every and log_every must be positive".to_string());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return err(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        Scenario::from_str(&self.scenario)?;
        Ok(())
    }

    /// Structural widths for model construction.
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            channels: self.channels,
            n_scales: self.scales,
            n_atoms: self.atoms,
            n1_blocks: self.feat_blocks,
            n2_blocks: self.up_blocks,
        }
    }

    /// Component switches for model construction.
    pub fn ablation(&self) -> AblationFlags {
        AblationFlags {
            no_isc: self.no_isc,
            no_ita: self.no_ita,
            no_rec: self.no_rec,
            no_bidir: self.no_bidir,
            no_lc: self.no_lc,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda: self.lambda, eps: self.charbonnier_eps }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            clip_norm: (self.grad_clip > 0.0).then_some(self.grad_clip),
            ..AdamConfig::default()
        }
    }

    pub fn degradation_scenario(&self) -> Result<Scenario> {
        Scenario::from_str(&self.scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() -> Result<()> {
        let cfg = RunConfig::default();
        cfg.validate()?;
        let parsed = RunConfig::from_text(&cfg.to_text())?;
        assert_eq!(parsed.to_text(), cfg.to_text());
        assert_eq!(parsed, {
            let mut want = cfg.clone();
            // Parsing marks every key as file-sourced; values must match.
            want.sources = parsed.sources.clone();
            want
        });
        Ok(())
    }

    #[test]
    fn full_preset_validates_and_is_wider() -> Result<()> {
        let full = RunConfig::full();
        full.validate()?;
        assert!(full.channels > RunConfig::default().channels);
        assert_eq!(full.epochs, 400);
        assert_eq!(full.batch, 7);
        assert_eq!(full.patch, 256);
        assert_eq!(full.lr, 1e-4);
        Ok(())
    }

    #[test]
    fn later_sources_win_and_are_recorded() -> Result<()> {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.source("lr"), Source::Default);
        cfg.apply_text("lr = 0.01\nbatch = 2\n", Source::File)?;
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.source("lr"), Source::File);
        cfg.set("lr", "0.5", Source::Flag)?;
        assert_eq!(cfg.lr, 0.5);
        assert_eq!(cfg.source("lr"), Source::Flag);
        assert_eq!(cfg.source("batch"), Source::File);
        assert_eq!(cfg.source("seed"), Source::Default);
        assert!(cfg.resolved_text().contains("lr = 0.5"));
        Ok(())
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() -> Result<()> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# full-line comment\n\n  channels = 8  # trailing comment\n",
            Source::File,
        )?;
        assert_eq!(cfg.channels, 8);
        Ok(())
    }

    #[test]
    fn bad_keys_and_values_name_the_offender() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("chanels", "8", Source::File).unwrap_err();
        assert_eq!(err.class(), "config");
        assert!(err.to_string().contains("chanels"), "{err}");
        let err = cfg.set("batch", "two", Source::File).unwrap_err();
        assert!(err.to_string().contains("batch"), "{err}");
        assert!(err.to_string().contains("two"), "{err}");
        let err = cfg.apply_text("lr 0.1\n", Source::File).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn validation_rejects_out_of_range_values() {
        let mut cfg = RunConfig::default();
        cfg.patch = 30;
        assert!(cfg.validate().is_err());
        cfg = RunConfig::default();
        cfg.lr_min = 1.0;
        assert!(cfg.validate().is_err());
        cfg = RunConfig::default();
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
        cfg.epochs = 1;
        assert!(cfg.validate().is_ok());
        cfg = RunConfig::default();
        cfg.scenario = "sparkle".to_string();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_structure_only() -> Result<()> {
        let base = RunConfig::default();
        let mut same = base.clone();
        same.set("lr", "0.5", Source::Flag)?;
        same.set("seed", "9", Source::Flag)?;
        same.set("radius", "3", Source::Flag)?;
        same.set("no_lc", "true", Source::Flag)?;
        assert_eq!(base.fingerprint(), same.fingerprint());

        for (key, value) in [
            ("channels", "32"),
            ("scales", "2"),
            ("atoms", "2"),
            ("feat_blocks", "1"),
            ("up_blocks", "1"),
            ("no_isc", "true"),
            ("no_ita", "true"),
            ("no_rec", "true"),
            ("no_bidir", "true"),
        ] {
            let mut changed = base.clone();
            changed.set(key, value, Source::Flag)?;
            assert_ne!(base.fingerprint(), changed.fingerprint(), "{key}");
        }
        assert_eq!(base.fingerprint().len(), 16);
        Ok(())
    }

    #[test]
    fn mapping_helpers_mirror_the_fields() {
        let mut cfg = RunConfig::default();
        cfg.no_rec = true;
        cfg.grad_clip = 0.0;
        let dims = cfg.dims();
        assert_eq!(dims.channels, cfg.channels);
        assert_eq!(dims.n2_blocks, cfg.up_blocks);
        assert!(cfg.ablation().no_rec);
        assert!(!cfg.ablation().no_isc);
        assert_eq!(cfg.adam().clip_norm, None);
        assert_eq!(cfg.loss_weights().lambda, 0.2);
    }
}
