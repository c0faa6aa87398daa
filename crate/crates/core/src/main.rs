//! `ikvsr` command line: synthesize degraded clips, train, super-resolve,
//! score, and self-diagnose.
//!
//! Every failure prints a single `error[class]: message` line on stderr and
//! exits with a stable per-class code, so scripts can branch on either.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Array3};

use ikvsr::checkpoint::Checkpoint;
use ikvsr::config::{RunConfig, Source};
use ikvsr::data::save_triplet;
use ikvsr::degradation::{make_triplet, DegradationConfig, Scenario};
use ikvsr::error::{contract, IkError, Result};
use ikvsr::eval::{evaluate, load_model, EvalOptions};
use ikvsr::flow::HornSchunckFlow;
use ikvsr::plot::{gray_grid, line_plot};
use ikvsr::selftest;
use ikvsr::sequence::{frame_to_tensor, load_sequence, save_sequence, tensor_to_frame};
use ikvsr::train::train;

#[derive(Parser)]
#[command(
    name = "ikvsr",
    version,
    about = "Blind x4 video super-resolution with a learned kernel dictionary",
    after_help = "Relative output directories are placed under $IKVSR_OUT_ROOT when it is set."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize LR/DN/GT clip triplets from ground-truth frames.
    Degrade(DegradeArgs),
    /// Train a model, writing checkpoints, logs, and plots.
    Train(TrainArgs),
    /// Super-resolve one clip with a trained checkpoint.
    Infer(InferArgs),
    /// Score a checkpoint against clip triplets and write a JSON report.
    Eval(EvalArgs),
    /// Run the built-in diagnostic suites, printing PASS/FAIL per suite.
    Selftest(SelftestArgs),
}

/// Run-configuration inputs shared by training: an optional file, then
/// per-key flag overrides. Flags win over the file, the file over defaults.
#[derive(Args)]
struct ConfigOverrides {
    /// Key = value config file applied before any flag overrides.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Feature channel width.
    #[arg(long)]
    channels: Option<usize>,
    /// Dictionary scale count (largest kernel is 2*scales - 1).
    #[arg(long)]
    scales: Option<usize>,
    /// Atoms per dictionary scale.
    #[arg(long)]
    atoms: Option<usize>,
    /// Temporal radius: a training window spans 2*radius + 1 frames.
    #[arg(long)]
    radius: Option<usize>,
    /// Residual blocks in the feature extractor.
    #[arg(long, alias = "feat_blocks")]
    feat_blocks: Option<usize>,
    /// Residual blocks in the upsampler.
    #[arg(long, alias = "up_blocks")]
    up_blocks: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Cosine-schedule floor.
    #[arg(long, alias = "lr_min")]
    lr_min: Option<f64>,
    /// Total optimization steps; 0 defers to epochs.
    #[arg(long)]
    steps: Option<u64>,
    /// Window sweeps over the dataset when steps = 0.
    #[arg(long)]
    epochs: Option<u64>,
    /// Windows averaged per optimization step.
    #[arg(long)]
    batch: Option<usize>,
    /// Low-resolution crop side length.
    #[arg(long)]
    patch: Option<usize>,
    /// Seed for parameter init and data sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long, alias = "grad_clip")]
    grad_clip: Option<f64>,
    /// Weight of the correction loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// Charbonnier smoothing constant.
    #[arg(long, alias = "charbonnier_eps")]
    charbonnier_eps: Option<f64>,
    /// Checkpoint interval in steps.
    #[arg(long, alias = "save_every")]
    save_every: Option<u64>,
    /// Progress-log interval in steps.
    #[arg(long, alias = "log_every")]
    log_every: Option<u64>,
    /// Degradation scenario recorded with the run: gaussian or motion.
    #[arg(long)]
    scenario: Option<String>,
    /// Noise standard deviation on the 0..255 scale.
    #[arg(long, alias = "noise_sigma")]
    noise_sigma: Option<f64>,
    /// Root directory of lr/dn/gt clip triplets.
    #[arg(long)]
    data: Option<String>,
    /// Output directory of the run.
    #[arg(long)]
    out: Option<String>,

    /// Drop the frame-correction module.
    #[arg(long, alias = "no_isc")]
    no_isc: bool,
    /// Drop temporal alignment (frames are restored independently).
    #[arg(long, alias = "no_ita")]
    no_ita: bool,
    /// Drop the transformer's recurrent hidden inputs.
    #[arg(long, alias = "no_rec")]
    no_rec: bool,
    /// Propagate forward only.
    #[arg(long, alias = "no_bidir")]
    no_bidir: bool,
    /// Drop the correction loss term.
    #[arg(long, alias = "no_lc")]
    no_lc: bool,
}

impl ConfigOverrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        macro_rules! apply {
            ($($field:ident),* $(,)?) => {
                $(
                    if let Some(value) = &self.$field {
                        cfg.set(stringify!($field), &value.to_string(), Source::Flag)?;
                    }
                )*
            };
        }
        apply!(
            channels, scales, atoms, radius, feat_blocks, up_blocks, lr, lr_min, steps,
            epochs, batch, patch, seed, grad_clip, lambda, charbonnier_eps, save_every,
            log_every, scenario, noise_sigma, data, out,
        );
        for (key, on) in [
            ("no_isc", self.no_isc),
            ("no_ita", self.no_ita),
            ("no_rec", self.no_rec),
            ("no_bidir", self.no_bidir),
            ("no_lc", self.no_lc),
        ] {
            if on {
                cfg.set(key, "true", Source::Flag)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DegradeArgs {
    /// Directory of ground-truth PNG frames, or a root of clip directories.
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Root to write <clip>/{lr,dn,gt} triplets under.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Blur scenario: gaussian or motion.
    #[arg(long, default_value = "gaussian")]
    scenario: String,
    /// Base seed; clip k uses seed + k.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise standard deviation on the 0..255 scale; 0 disables.
    #[arg(long, alias = "noise_sigma", default_value_t = 0.0)]
    noise_sigma: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Continue from an existing checkpoint.
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
    /// Also write the loss curve as a PNG.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct InferArgs {
    /// Trained checkpoint to load.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Directory of low-resolution PNG frames (one clip).
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Directory for the restored frames.
    #[arg(long, value_name = "DIR", default_value = "sr")]
    out: PathBuf,
    /// Also dump each frame's aligned features as a tile gallery.
    #[arg(long, alias = "dump_aligned")]
    dump_aligned: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint to score.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Root directory of lr/dn/gt clip triplets.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Directory for the report and plots.
    #[arg(long, value_name = "DIR", default_value = "eval")]
    out: PathBuf,
    /// Config file the checkpoint is expected to match.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Also write a per-clip PSNR curve as a PNG.
    #[arg(long)]
    plot: bool,
    /// Score ground truth against itself (metric ceiling check).
    #[arg(long, alias = "gt_bypass")]
    gt_bypass: bool,
}

#[derive(Args)]
struct SelftestArgs {
    /// Directory for diagnostic artifacts (atom gallery).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.class());
            ExitCode::from(exit_code(err.class()))
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Degrade(args) => run_degrade(args),
        Command::Train(args) => run_train(args),
        Command::Infer(args) => run_infer(args),
        Command::Eval(args) => run_eval(args),
        Command::Selftest(args) => run_selftest(args),
    }
}

/// Stable exit code per error class.
fn exit_code(class: &str) -> u8 {
    match class {
        "validation" => 2,
        "config" => 3,
        "data" => 4,
        "checkpoint" => 5,
        "training" => 6,
        "contract" => 7,
        "io" => 8,
        _ => 9, // backend failures: tensor, image, json
    }
}

/// Place relative output paths under `$IKVSR_OUT_ROOT` when it is set.
fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os("IKVSR_OUT_ROOT") {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// A clip directory holds PNG frames directly; a root holds clip directories.
fn discover_clips(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(root).map_err(|e| IkError::io(root, e))?;
    let mut subdirs = Vec::new();
    let mut has_frames = false;
    for entry in entries {
        let entry = entry.map_err(|e| IkError::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            subdirs.push(path);
        } else if path.extension().is_some_and(|e| e == "png") {
            has_frames = true;
        }
    }
    let name_of = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "clip".to_string())
    };
    if has_frames {
        return Ok(vec![(name_of(root), root.to_path_buf())]);
    }
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(IkError::Data(format!(
            "{}: no PNG frames or clip directories",
            root.display()
        )));
    }
    Ok(subdirs.iter().map(|p| (name_of(p), p.clone())).collect())
}

fn run_degrade(args: DegradeArgs) -> Result<()> {
    let scenario: Scenario = args.scenario.parse()?;
    let mut cfg = DegradationConfig::new(scenario);
    cfg.noise_sigma = args.noise_sigma;
    let out_root = resolve_out(&args.out);
    let clips = discover_clips(&args.input)?;
    println!(
        "degrading {} clip(s) under {} ({scenario}, seed {}, noise sigma {})",
        clips.len(),
        args.input.display(),
        args.seed,
        args.noise_sigma
    );
    for (index, (name, dir)) in clips.iter().enumerate() {
        let gt = load_sequence(dir)?;
        let triplet = make_triplet(&gt, &cfg, args.seed.wrapping_add(index as u64))?;
        let clip_dir = out_root.join(name);
        save_triplet(&clip_dir, &triplet)?;
        println!("  {name}: {} frames -> {}", gt.len(), clip_dir.display());
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    print!("{}", cfg.resolved_text());
    println!("fingerprint {}", cfg.fingerprint());
    let out_dir = resolve_out(Path::new(&cfg.out));
    let outcome = train(&cfg, &out_dir, args.resume.as_deref(), |log| {
        println!(
            "step {:>6}  lr {:.3e}  loss {:.6}  restoration {:.6}  correction {:.6}",
            log.step, log.lr, log.total, log.restoration, log.correction
        );
    })?;
    println!(
        "finished {} steps, final loss {:.6}, checkpoint {}",
        outcome.steps,
        outcome.final_loss,
        outcome.checkpoint.display()
    );
    if args.plot {
        let path = out_dir.join("loss.png");
        line_plot(&path, &[outcome.curve], 800, 400)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_infer(args: InferArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (cfg, store, model) = load_model(&ckpt)?;
    if args.dump_aligned && cfg.no_ita {
        return Err(IkError::Config(
            "--dump-aligned asks for alignment features, but this checkpoint was trained \
             with no_ita = true"
                .to_string(),
        ));
    }
    println!(
        "checkpoint {} (step {}, fingerprint {})",
        args.checkpoint.display(),
        ckpt.meta.step,
        ckpt.meta.fingerprint
    );
    let frames = load_sequence(&args.input)?;
    let clip: Vec<_> = frames
        .iter()
        .map(|f| Ok(frame_to_tensor(f, store.dtype(), store.device())?.unsqueeze(0)?))
        .collect::<Result<_>>()?;
    let output = model.forward_clip(&clip, &HornSchunckFlow::default())?;
    let sr: Vec<Array3<f32>> = output
        .sr
        .iter()
        .map(|t| tensor_to_frame(&t.squeeze(0)?))
        .collect::<Result<_>>()?;
    let out_dir = resolve_out(&args.out);
    save_sequence(&out_dir, &sr)?;
    println!("wrote {} frames to {}", sr.len(), out_dir.display());
    if args.dump_aligned {
        for (t, feature) in output.aligned.iter().enumerate() {
            let gallery = channel_tiles(&feature.squeeze(0)?)?;
            let path = out_dir.join(format!("aligned_{t:03}.png"));
            gray_grid(&path, &gallery, 4)?;
        }
        println!("wrote {} aligned-feature galleries", output.aligned.len());
    }
    Ok(())
}

/// Split a `(C, H, W)` tensor into per-channel grayscale tiles.
fn channel_tiles(feature: &candle_core::Tensor) -> Result<Vec<Array2<f32>>> {
    let frame = tensor_to_frame(feature)?;
    let (c, _, _) = frame.dim();
    Ok((0..c)
        .map(|ch| frame.index_axis(ndarray::Axis(0), ch).to_owned())
        .collect())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let expected = match &args.config {
        Some(path) => {
            let mut cfg = RunConfig::default();
            cfg.apply_file(path)?;
            cfg.validate()?;
            Some(cfg)
        }
        None => None,
    };
    let opts = EvalOptions { gt_bypass: args.gt_bypass, expected };
    let report = evaluate(&args.checkpoint, &args.data, &opts)?;
    println!(
        "checkpoint {} (fingerprint {}, flow {})",
        report.checkpoint, report.config_fingerprint, report.flow
    );
    let fmt_tof = |t: Option<f64>| t.map_or("-".to_string(), |v| format!("{v:.5}"));
    for clip in &report.clips {
        println!(
            "  {:<16} {} frames  psnr {:7.3} dB  ssim {:.4}  tof {}",
            clip.name,
            clip.frames,
            clip.psnr_y,
            clip.ssim,
            fmt_tof(clip.tof)
        );
    }
    println!(
        "aggregate over {} clip(s): psnr {:.3} dB  ssim {:.4}  tof {}",
        report.clips.len(),
        report.aggregate.psnr_y,
        report.aggregate.ssim,
        fmt_tof(report.aggregate.tof)
    );
    let out_dir = resolve_out(&args.out);
    std::fs::create_dir_all(&out_dir).map_err(|e| IkError::io(&out_dir, e))?;
    let report_path = out_dir.join("report.json");
    report.save(&report_path)?;
    println!("wrote {}", report_path.display());
    if args.plot {
        let series: Vec<f64> = report.clips.iter().map(|c| c.psnr_y).collect();
        let path = out_dir.join("psnr_y.png");
        line_plot(&path, &[series], 800, 400)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_selftest(args: SelftestArgs) -> Result<()> {
    let out_dir = args.out.as_deref().map(resolve_out);
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir).map_err(|e| IkError::io(dir, e))?;
    }
    let outcomes = selftest::run_all(out_dir.as_deref());
    let mut failed = 0;
    for outcome in &outcomes {
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {}", outcome.name, outcome.detail);
        failed += usize::from(!outcome.passed);
    }
    if failed > 0 {
        return Err(contract(format!(
            "{failed} of {} diagnostic suites failed",
            outcomes.len()
        )));
    }
    Ok(())
}
