//! The training loop: windowed clip sampling, patch cropping, Adam updates
//! on the clip loss, periodic checkpoints, and seeded resume.
//!
//! Each optimizer step draws `batch` independent samples — a clip, a
//! window of `2 * radius + 1` consecutive frames, and a square patch on
//! the low-resolution grid (ground truth is cropped at 4x the same
//! coordinates) — runs the model over each window, and descends the mean
//! loss. All sampling comes from one seeded stream whose position is
//! stored in checkpoints, so a resumed run continues the exact sample
//! sequence the interrupted run would have drawn.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use ndarray::{s, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{save_checkpoint, Checkpoint, CheckpointMeta};
use crate::config::RunConfig;
use crate::data::TripletSet;
use crate::error::{IkError, Result};
use crate::flow::{FlowEstimator, HornSchunckFlow};
use crate::loss::total_loss;
use crate::metrics::psnr_y;
use crate::model::{VsrModel, UPSCALE};
use crate::param::{cosine_lr, Adam, ParamStore};
use crate::resize::bicubic_resize;
use crate::sequence::{frame_to_tensor, tensor_to_frame};

/// Scalars describing one completed optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    /// 1-based index of the completed step.
    pub step: u64,
    /// Learning rate the step used.
    pub lr: f64,
    /// Mean total loss over the batch.
    pub total: f64,
    /// Mean restoration term.
    pub restoration: f64,
    /// Mean correction term (logged even when not optimized).
    pub correction: f64,
}

/// Owns the model, optimizer, data, and sampling stream of one run.
pub struct Trainer {
    cfg: RunConfig,
    store: ParamStore,
    model: VsrModel,
    opt: Adam,
    dataset: TripletSet,
    flow: Box<dyn FlowEstimator>,
    rng: ChaCha8Rng,
    step: u64,
    total_steps: u64,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("step", &self.step)
            .field("total_steps", &self.total_steps)
            .field("clips", &self.dataset.clips().len())
            .finish_non_exhaustive()
    }
}

fn crop(frame: &Array3<f32>, y0: usize, x0: usize, size: usize) -> Array3<f32> {
    frame.slice(s![.., y0..y0 + size, x0..x0 + size]).to_owned()
}

impl Trainer {
    pub fn new(cfg: RunConfig, dataset: TripletSet) -> Result<Self> {
        cfg.validate()?;
        for clip in dataset.clips() {
            let (h, w) = clip.lr_size();
            if h < cfg.patch || w < cfg.patch {
                return Err(IkError::Data(format!(
                    "patch {} exceeds clip {:?} size {h}x{w}",
                    cfg.patch, clip.name
                )));
            }
        }
        let mut store = ParamStore::new(DType::F32, cfg.seed);
        let model = VsrModel::new(&mut store, cfg.dims(), cfg.ablation())?;
        let opt = Adam::new(&store, cfg.adam())?;
        // Data sampling gets its own stream of the seed so it cannot
        // collide with parameter initialization.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let window = 2 * cfg.radius + 1;
        let windows: u64 = dataset
            .clips()
            .iter()
            .map(|c| (c.frames().saturating_sub(window) + 1) as u64)
            .sum();
        let total_steps = if cfg.steps > 0 { cfg.steps } else { cfg.epochs * windows };
        Ok(Trainer {
            cfg,
            store,
            model,
            opt,
            dataset,
            flow: Box::new(HornSchunckFlow::default()),
            rng,
            step: 0,
            total_steps,
        })
    }

    /// Rebuild a run from its checkpoint: same parameters, optimizer
    /// moments, step counter, and sampling position.
    pub fn resume(cfg: RunConfig, dataset: TripletSet, ckpt: &Checkpoint) -> Result<Self> {
        let expected = cfg.fingerprint();
        if ckpt.meta.fingerprint != expected {
            return Err(IkError::Checkpoint(format!(
                "checkpoint fingerprint {} does not match the run config fingerprint {expected}",
                ckpt.meta.fingerprint
            )));
        }
        let mut trainer = Trainer::new(cfg, dataset)?;
        ckpt.restore_params(&trainer.store)?;
        ckpt.restore_optimizer(&mut trainer.opt)?;
        trainer.step = ckpt.meta.step;
        trainer.rng.set_word_pos(ckpt.meta.rng_word_pos);
        Ok(trainer)
    }

    /// Swap the flow estimator (tests use the zero estimator).
    pub fn with_flow(mut self, flow: Box<dyn FlowEstimator>) -> Self {
        self.flow = flow;
        self
    }

    /// Completed optimizer steps.
    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// Steps this run is configured to take in total.
    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn model(&self) -> &VsrModel {
        &self.model
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    /// Draw one training sample: tensors for the LR window, the DN crops,
    /// and the GT crops, all shaped `(1, 3, ., .)`.
    fn sample_window(&mut self) -> Result<(Vec<Tensor>, Vec<Tensor>, Vec<Tensor>)> {
        let clip_idx = self.rng.gen_range(0..self.dataset.clips().len());
        let clip = &self.dataset.clips()[clip_idx];
        let window = (2 * self.cfg.radius + 1).min(clip.frames());
        let start = self.rng.gen_range(0..=clip.frames() - window);
        let (h, w) = clip.lr_size();
        let p = self.cfg.patch;
        let y0 = self.rng.gen_range(0..=h - p);
        let x0 = self.rng.gen_range(0..=w - p);
        let (dtype, device) = (self.store.dtype(), self.store.device().clone());
        let mut lr = Vec::with_capacity(window);
        let mut dn = Vec::with_capacity(window);
        let mut gt = Vec::with_capacity(window);
        for t in start..start + window {
            lr.push(frame_to_tensor(&crop(&clip.lr[t], y0, x0, p), dtype, &device)?.unsqueeze(0)?);
            dn.push(frame_to_tensor(&crop(&clip.dn[t], y0, x0, p), dtype, &device)?.unsqueeze(0)?);
            let g = crop(&clip.gt[t], y0 * UPSCALE, x0 * UPSCALE, p * UPSCALE);
            gt.push(frame_to_tensor(&g, dtype, &device)?.unsqueeze(0)?);
        }
        Ok((lr, dn, gt))
    }

    /// Run one optimizer step and report its losses.
    pub fn run_step(&mut self) -> Result<StepLog> {
        let lr = cosine_lr(self.step, self.total_steps, self.cfg.lr, self.cfg.lr_min);
        let include_correction = !(self.cfg.no_lc || self.cfg.no_isc);
        let weights = self.cfg.loss_weights();
        let mut totals = Vec::with_capacity(self.cfg.batch);
        let mut restoration = 0.0;
        let mut correction = 0.0;
        for _ in 0..self.cfg.batch {
            let (lr_in, dn, gt) = self.sample_window()?;
            let out = self.model.forward_clip(&lr_in, self.flow.as_ref())?;
            let loss =
                total_loss(&out.sr, &gt, &out.corrected, &dn, &weights, include_correction)?;
            restoration += loss.restoration;
            correction += loss.correction;
            totals.push(loss.total);
        }
        let n = totals.len() as f64;
        let total = if totals.len() == 1 {
            totals.pop().expect("one element")
        } else {
            Tensor::stack(&totals, 0)?.mean_all()?
        };
        let value = total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(IkError::Training(format!(
                "non-finite loss at step {}",
                self.step + 1
            )));
        }
        let grads = total.backward()?;
        self.opt.step(&grads, lr)?;
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            lr,
            total: value,
            restoration: restoration / n,
            correction: correction / n,
        })
    }

    /// Write a checkpoint carrying everything needed to resume.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            fingerprint: self.cfg.fingerprint(),
            config: self.cfg.to_text(),
            step: self.step,
            rng_word_pos: self.rng.get_word_pos(),
        };
        save_checkpoint(path, &self.store, Some(&self.opt), &meta)
    }

    /// Mean PSNR-Y of full-clip model output against ground truth over the
    /// training set.
    pub fn training_psnr(&self) -> Result<f64> {
        let (dtype, device) = (self.store.dtype(), self.store.device().clone());
        let mut sum = 0.0;
        let mut count = 0usize;
        for clip in self.dataset.clips() {
            let frames = clip
                .lr
                .iter()
                .map(|f| Ok(frame_to_tensor(f, dtype, &device)?.unsqueeze(0)?))
                .collect::<Result<Vec<_>>>()?;
            let out = self.model.forward_clip(&frames, self.flow.as_ref())?;
            for (sr, gt) in out.sr.iter().zip(&clip.gt) {
                sum += psnr_y(&tensor_to_frame(&sr.squeeze(0)?)?, gt)?;
                count += 1;
            }
        }
        Ok(sum / count as f64)
    }

    /// Mean absolute error of the corrected stream against DN, next to the
    /// same error for the raw LR input. Correction helps when the first
    /// number is smaller.
    pub fn correction_mae(&self) -> Result<(f64, f64)> {
        let (dtype, device) = (self.store.dtype(), self.store.device().clone());
        let mut corrected_err = 0.0;
        let mut raw_err = 0.0;
        let mut count = 0usize;
        for clip in self.dataset.clips() {
            let frames = clip
                .lr
                .iter()
                .map(|f| Ok(frame_to_tensor(f, dtype, &device)?.unsqueeze(0)?))
                .collect::<Result<Vec<_>>>()?;
            let out = self.model.forward_clip(&frames, self.flow.as_ref())?;
            for t in 0..clip.frames() {
                let corrected = tensor_to_frame(&out.corrected[t].squeeze(0)?)?;
                for ((c, l), d) in corrected.iter().zip(clip.lr[t].iter()).zip(clip.dn[t].iter()) {
                    corrected_err += (*c as f64 - *d as f64).abs();
                    raw_err += (*l as f64 - *d as f64).abs();
                    count += 1;
                }
            }
        }
        Ok((corrected_err / count as f64, raw_err / count as f64))
    }
}

/// Mean PSNR-Y of plain bicubic 4x upsampling over a triplet set — the
/// baseline any trained model has to beat.
pub fn bicubic_baseline_psnr(set: &TripletSet) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for clip in set.clips() {
        for (lr, gt) in clip.lr.iter().zip(&clip.gt) {
            let (_, h, w) = lr.dim();
            let up = bicubic_resize(lr, h * UPSCALE, w * UPSCALE)?;
            sum += psnr_y(&up.mapv(|v| v.clamp(0.0, 1.0)), gt)?;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Artifacts of a completed training run.
pub struct TrainOutcome {
    pub steps: u64,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
    /// Total loss per step, for plotting.
    pub curve: Vec<f64>,
}

/// Drive a full run: load data, train (or resume), write the loss curve
/// and checkpoints under `out_dir`, and report progress through `on_log`.
pub fn train(
    cfg: &RunConfig,
    out_dir: &Path,
    resume_from: Option<&Path>,
    mut on_log: impl FnMut(&StepLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.data.is_empty() {
        return Err(IkError::Config(
            "no data root configured; set data = <dir> or pass --data".to_string(),
        ));
    }
    let dataset = TripletSet::load(Path::new(&cfg.data))?;
    let mut trainer = match resume_from {
        Some(path) => Trainer::resume(cfg.clone(), dataset, &Checkpoint::load(path)?)?,
        None => Trainer::new(cfg.clone(), dataset)?,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| IkError::io(out_dir, e))?;
    std::fs::write(out_dir.join("config.txt"), cfg.resolved_text())
        .map_err(|e| IkError::io(&out_dir.join("config.txt"), e))?;

    let csv_path = out_dir.join("loss.csv");
    let mut csv = if resume_from.is_some() && csv_path.exists() {
        std::fs::OpenOptions::new()
            .append(true)
            .open(&csv_path)
            .map_err(|e| IkError::io(&csv_path, e))?
    } else {
        let mut file = std::fs::File::create(&csv_path).map_err(|e| IkError::io(&csv_path, e))?;
        writeln!(file, "step,lr,total,restoration,correction")
            .map_err(|e| IkError::io(&csv_path, e))?;
        file
    };

    let ckpt_path = out_dir.join("checkpoint.safetensors");
    let mut curve = Vec::new();
    let mut final_loss = f64::NAN;
    while trainer.step_index() < trainer.total_steps() {
        let log = trainer.run_step()?;
        writeln!(
            csv,
            "{},{},{},{},{}",
            log.step, log.lr, log.total, log.restoration, log.correction
        )
        .map_err(|e| IkError::io(&csv_path, e))?;
        curve.push(log.total);
        final_loss = log.total;
        if log.step % cfg.log_every == 0 || log.step == trainer.total_steps() {
            on_log(&log);
        }
        if log.step % cfg.save_every == 0 {
            trainer.save(&ckpt_path)?;
        }
    }
    trainer.save(&ckpt_path)?;
    Ok(TrainOutcome {
        steps: trainer.step_index(),
        final_loss,
        checkpoint: ckpt_path,
        curve,
    })
}
