//! Full command-line journey on a tiny clip: degrade ground truth, train,
//! resume, infer, and evaluate — exercising the shipped binary exactly the
//! way a user would.

use std::path::Path;
use std::process::{Command, Output};

use ikvsr::checkpoint::Checkpoint;
use ikvsr::degradation::synthetic_clip;
use ikvsr::metrics::{MetricsReport, PSNR_CAP_DB};
use ikvsr::sequence::{load_sequence, save_sequence};

fn ikvsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ikvsr"))
        .args(args)
        .env_remove("IKVSR_OUT_ROOT")
        .output()
        .expect("spawn ikvsr")
}

fn run_ok(args: &[&str]) -> String {
    let out = ikvsr(args);
    assert!(
        out.status.success(),
        "ikvsr {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // One 4-frame ground-truth clip; 32x32 degrades to an 8x8 LR input.
    let gt_root = root.join("gt");
    save_sequence(&gt_root.join("clip_a"), &synthetic_clip(4, 32, 32, 5)).unwrap();

    let data = root.join("data");
    run_ok(&[
        "degrade",
        "--input",
        path_str(&gt_root),
        "--out",
        path_str(&data),
        "--scenario",
        "gaussian",
        "--seed",
        "3",
    ]);
    for sub in ["lr", "dn", "gt"] {
        assert!(data.join("clip_a").join(sub).is_dir(), "missing {sub} dir");
    }
    assert!(data.join("clip_a/manifest.json").is_file());

    // A deliberately tiny model so the whole journey stays fast.
    let cfg = root.join("tiny.cfg");
    std::fs::write(
        &cfg,
        "channels = 4\nscales = 2\natoms = 2\nradius = 1\nfeat_blocks = 1\n\
         up_blocks = 1\npatch = 8\nsteps = 4\nlr = 0.001\n",
    )
    .unwrap();

    let run = root.join("run");
    let stdout = run_ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&data),
        "--out",
        path_str(&run),
    ]);
    assert!(stdout.contains("step"), "no progress lines in:\n{stdout}");
    let ckpt = run.join("checkpoint.safetensors");
    assert!(ckpt.is_file());
    assert!(run.join("loss.csv").is_file());
    assert!(run.join("config.txt").is_file());
    assert_eq!(Checkpoint::load(&ckpt).unwrap().meta.step, 4);

    // Resuming from step 4 with a higher ceiling continues, not restarts.
    let run2 = root.join("run2");
    run_ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&data),
        "--out",
        path_str(&run2),
        "--steps",
        "6",
        "--resume",
        path_str(&ckpt),
    ]);
    let resumed = run2.join("checkpoint.safetensors");
    assert_eq!(Checkpoint::load(&resumed).unwrap().meta.step, 6);

    // Inference writes one restored PNG per input frame at 4x the size.
    let sr = root.join("sr");
    run_ok(&[
        "infer",
        "--checkpoint",
        path_str(&ckpt),
        "--input",
        path_str(&data.join("clip_a/lr")),
        "--out",
        path_str(&sr),
    ]);
    let frames = load_sequence(&sr).unwrap();
    assert_eq!(frames.len(), 4);
    assert_eq!(frames[0].dim(), (3, 32, 32));

    // Evaluation produces a parseable report over the same data.
    let eval_dir = root.join("eval");
    let stdout = run_ok(&[
        "eval",
        "--checkpoint",
        path_str(&ckpt),
        "--data",
        path_str(&data),
        "--out",
        path_str(&eval_dir),
    ]);
    assert!(stdout.contains("clip_a"), "no per-clip line in:\n{stdout}");
    let report = MetricsReport::load(&eval_dir.join("report.json")).unwrap();
    assert_eq!(report.schema_version, MetricsReport::SCHEMA_VERSION);
    assert_eq!(report.clips.len(), 1);
    assert_eq!(report.clips[0].frames, 4);
    assert!(report.clips[0].psnr_y.is_finite());
    assert!(report.clips[0].ssim.is_finite());
    assert!(report.clips[0].tof.is_some());

    // The ground-truth bypass must sit exactly at the metric ceilings.
    let bypass_dir = root.join("eval-bypass");
    run_ok(&[
        "eval",
        "--checkpoint",
        path_str(&ckpt),
        "--data",
        path_str(&data),
        "--out",
        path_str(&bypass_dir),
        "--gt-bypass",
    ]);
    let report = MetricsReport::load(&bypass_dir.join("report.json")).unwrap();
    assert_eq!(report.aggregate.psnr_y, PSNR_CAP_DB);
    assert_eq!(report.aggregate.ssim, 1.0);
    assert_eq!(report.clips[0].tof, Some(0.0));
}

#[test]
fn cli_rejects_bad_input_with_typed_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let gt_root = root.join("gt");
    save_sequence(&gt_root.join("clip_a"), &synthetic_clip(2, 32, 32, 5)).unwrap();

    // Unknown scenario is a configuration error.
    let out = ikvsr(&[
        "degrade",
        "--input",
        path_str(&gt_root),
        "--out",
        path_str(&root.join("data")),
        "--scenario",
        "defocus",
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[config]"));

    // A data root without any clip triplets is a data error.
    let empty = root.join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = ikvsr(&[
        "train",
        "--data",
        path_str(&empty),
        "--out",
        path_str(&root.join("run")),
        "--steps",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[data]"));
}
