//! Checkpoint evaluation: run the model over clip triplets and produce a
//! metrics report.
//!
//! A checkpoint embeds its full config, so evaluation needs nothing but
//! the checkpoint file and a data root. When the caller supplies an
//! expected config anyway, its structural fingerprint is cross-checked
//! against the checkpoint before any work happens.

use std::path::Path;

use candle_core::{DType, Tensor};
use ndarray::Array3;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::TripletSet;
use crate::error::{IkError, Result};
use crate::flow::{FlowEstimator, HornSchunckFlow};
use crate::metrics::{psnr_y, ssim_y, tof, ClipMetrics, MetricsReport};
use crate::model::VsrModel;
use crate::param::ParamStore;
use crate::sequence::{frame_to_tensor, tensor_to_frame};

/// Evaluation switches.
#[derive(Default)]
pub struct EvalOptions {
    /// Score ground truth against itself instead of running the model — a
    /// harness oracle that must come out at the PSNR cap, SSIM 1, tOF 0.
    pub gt_bypass: bool,
    /// Cross-check this config against the checkpoint's fingerprint.
    pub expected: Option<RunConfig>,
}

/// Rebuild the model a checkpoint was written from and load its weights.
pub fn load_model(ckpt: &Checkpoint) -> Result<(RunConfig, ParamStore, VsrModel)> {
    let cfg = RunConfig::from_text(&ckpt.meta.config)
        .map_err(|e| IkError::Checkpoint(format!("embedded config does not parse: {e}")))?;
    let rebuilt = cfg.fingerprint();
    if rebuilt != ckpt.meta.fingerprint {
        return Err(IkError::Checkpoint(format!(
            "checkpoint header fingerprint {} disagrees with its embedded config ({rebuilt})",
            ckpt.meta.fingerprint
        )));
    }
    let mut store = ParamStore::new(DType::F32, cfg.seed);
    let model = VsrModel::new(&mut store, cfg.dims(), cfg.ablation())?;
    ckpt.restore_params(&store)?;
    Ok((cfg, store, model))
}

/// Super-resolve every frame of one clip.
pub fn run_clip(
    model: &VsrModel,
    lr: &[Array3<f32>],
    estimator: &dyn FlowEstimator,
) -> Result<Vec<Array3<f32>>> {
    let device = candle_core::Device::Cpu;
    let frames = lr
        .iter()
        .map(|f| Ok(frame_to_tensor(f, DType::F32, &device)?.unsqueeze(0)?))
        .collect::<Result<Vec<Tensor>>>()?;
    let out = model.forward_clip(&frames, estimator)?;
    out.sr
        .iter()
        .map(|t| tensor_to_frame(&t.squeeze(0)?))
        .collect()
}

fn score_clip(
    name: &str,
    restored: &[Array3<f32>],
    reference: &[Array3<f32>],
    estimator: &dyn FlowEstimator,
) -> Result<ClipMetrics> {
    let mut psnr = 0.0;
    let mut ssim = 0.0;
    for (sr, gt) in restored.iter().zip(reference) {
        psnr += psnr_y(sr, gt)?;
        ssim += ssim_y(sr, gt)?;
    }
    let n = restored.len() as f64;
    let tof = if restored.len() >= 2 {
        Some(tof(restored, reference, estimator)?)
    } else {
        None
    };
    Ok(ClipMetrics {
        name: name.to_string(),
        frames: restored.len(),
        psnr_y: psnr / n,
        ssim: ssim / n,
        tof,
    })
}

/// Evaluate a checkpoint over every clip under `data_root`.
pub fn evaluate(ckpt_path: &Path, data_root: &Path, opts: &EvalOptions) -> Result<MetricsReport> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    if let Some(expected) = &opts.expected {
        let want = expected.fingerprint();
        if want != ckpt.meta.fingerprint {
            return Err(IkError::Checkpoint(format!(
                "checkpoint fingerprint {} does not match the requested config fingerprint {want}",
                ckpt.meta.fingerprint
            )));
        }
    }
    let (cfg, _store, model) = load_model(&ckpt)?;
    let set = TripletSet::load(data_root)?;
    let estimator = HornSchunckFlow::default();

    let mut clips = Vec::with_capacity(set.clips().len());
    for clip in set.clips() {
        let restored = if opts.gt_bypass {
            clip.gt.clone()
        } else {
            run_clip(&model, &clip.lr, &estimator)?
        };
        clips.push(score_clip(&clip.name, &restored, &clip.gt, &estimator)?);
    }
    let aggregate = MetricsReport::aggregate_of(&clips)?;
    Ok(MetricsReport {
        schema_version: MetricsReport::SCHEMA_VERSION,
        checkpoint: format!("{}@step{}", ckpt_path.display(), ckpt.meta.step),
        config_fingerprint: cfg.fingerprint(),
        flow: estimator.name().to_string(),
        clips,
        aggregate,
    })
}
