mod common;

use std::path::Path;
use std::process::{Command, Output};

use textir::degradations::Mask;
use textir::generator::GeneratorSpec;
use textir::metrics::MetricReport;
use textir::training::{DiscriminatorConfig, TrainConfig};
use textir::{ImageTensor, Task};

use common::*;

fn textir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textir"))
        .args(args)
        .env_remove("TEXTIR_CHECKPOINT")
        .env_remove("TEXTIR_CLIP_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn restore_writes_a_png() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path(), Task::Inpaint, 2);
    let (img, mask, out) = (dir.path().join("a.png"), dir.path().join("m.png"), dir.path().join("out/r.png"));
    pattern(SIDE, 0.0).save_png(&img).unwrap();
    std::fs::write(&mask, centre_hole(SIDE).to_png_bytes().unwrap()).unwrap();
    let o = textir(&[
        "restore", "--task", "inpaint", "--image", s(&img), "--mask", s(&mask),
        "--prompt", "he is a bald man", "--checkpoint", s(&ckpt), "--output", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let restored = ImageTensor::open(&out).unwrap();
    assert_eq!(restored.dims(), (3, SIDE, SIDE));
    let meta: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(meta["condition_source"], "text");
    assert_eq!(meta["beta"], 1.0);

    let again = dir.path().join("again.png");
    let o = textir(&[
        "restore", "--task", "inpaint", "--image", s(&img), "--mask", s(&mask),
        "--prompt", "he is a bald man", "--checkpoint", s(&ckpt), "--output", s(&again),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn invalid_requests_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    pattern(SIDE, 0.0).save_png(&img).unwrap();
    let mask = dir.path().join("m.png");
    std::fs::write(&mask, Mask::all_keep(SIDE, SIDE).to_png_bytes().unwrap()).unwrap();

    let o = textir(&["restore", "--task", "inpaint", "--image", s(&img), "--mask", s(&mask)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("prompt"), "{}", stderr(&o));

    let o = textir(&["restore", "--task", "inpaint", "--image", s(&img), "--mask", s(&mask), "--beta", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoint"));

    let o = textir(&["restore", "--task", "sr", "--image", s(&img), "--sr-factor", "5", "--beta", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sr_factor"));

    let o = textir(&["restore", "--task", "inpaint", "--image", "/no/such.png", "--beta", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let ckpt = write_checkpoint(dir.path(), Task::Colorize, 0);
    let o = textir(&[
        "restore", "--task", "inpaint", "--image", s(&img), "--mask", s(&mask), "--beta", "0",
        "--checkpoint", s(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flags_print_usage_and_exit_2() {
    let o = textir(&["restore", "--colour", "red"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(textir(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn broken_checkpoints_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    pattern(SIDE, 0.0).save_png(&img).unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"garbage").unwrap();
    let o = textir(&["restore", "--task", "colorize", "--image", s(&img), "--beta", "0", "--checkpoint", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    std::fs::create_dir(&data).unwrap();
    write_dataset(&data, 3, 24);
    let ckpt = write_checkpoint(dir.path(), Task::Colorize, 1);
    let report = dir.path().join("report.json");
    let o = textir(&[
        "eval", "--task", "colorize", "--dataset", s(&data), "--checkpoint", s(&ckpt),
        "--output", s(&report), "--seed", "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: MetricReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!((r.task, r.evaluated, r.seed), (Task::Colorize, 3, 3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("SSIM"));

    let o = textir(&["eval", "--task", "inpaint", "--dataset", s(&data), "--checkpoint", s(&ckpt), "--output", s(&report)]);
    assert_eq!(o.status.code(), Some(2));
    let o = textir(&["eval", "--task", "colorize", "--dataset", s(&data), "--checkpoint", s(&ckpt), "--text-source", "words"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_runs_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    std::fs::create_dir(&data).unwrap();
    write_dataset(&data, 2, SIDE);
    let mut config = TrainConfig::new(Task::Inpaint, &data);
    config.split = Some("test".into());
    config.batch_size = 1;
    config.max_iters = 2;
    config.checkpoint_every = 1;
    config.generator = GeneratorSpec::tiny(Task::Inpaint, SIDE);
    config.discriminator = DiscriminatorConfig {
        base_width: 8,
        max_width: 16,
    };
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, config.to_toml().unwrap()).unwrap();
    let out = dir.path().join("run");

    let o = textir(&["train", "--config", s(&cfg), "--output-dir", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = out.join("ckpt-00000002.ckpt");
    assert!(ckpt.exists());
    assert_eq!(std::fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(), 2);

    let o = textir(&["train", "--config", s(&cfg), "--resume", s(&ckpt), "--max-iters", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("ckpt-00000003.ckpt").exists());
    assert_eq!(std::fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(), 3);

    std::fs::write(&cfg, "task = \"inpaint\"\ndataset = \"d\"\nwarp_speed = 9\n").unwrap();
    assert_eq!(textir(&["train", "--config", s(&cfg)]).status.code(), Some(2));
}
