use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use weathercycle::infer::{parse_csv, MetricReport};
use weathercycle::io::{read_image, write_image};
use weathercycle::settings::save_checkpoint;
use weathercycle_core::config::TrainConfig;
use weathercycle_core::trainer::TrainState;
use weathercycle_core::RgbImage;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weathercycle")).args(args).env_remove("WEATHERCYCLE_SEED").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn pattern(h: usize, w: usize, k: usize) -> RgbImage {
    RgbImage::from_fn(h, w, |y, x| {
        let v = ((x * 7 + y * 3 + k * 11) % 17) as f64 / 16.0;
        [v, 1.0 - v, (v + 0.3).fract()]
    })
}

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.crop = 16;
    c.batch = 2;
    c.base_width = 4;
    c.depth = 1;
    c.cta_channels = 4;
    c.cta_topk = 2;
    c.ldgm_hidden = 2;
    c.pool_size = 4;
    c
}

/// A checkpoint whose restorer is the identity map (all residual weights zero).
fn identity_checkpoint(path: &Path) {
    let mut state = TrainState::new(tiny_config()).unwrap();
    let names: Vec<String> = state.params.names().map(str::to_string).collect();
    for n in names {
        state.params.fill(&n, 0.0).unwrap();
    }
    save_checkpoint(path, &state.checkpoint()).unwrap();
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&cli(&[])), 1);
    assert_eq!(code(&cli(&["frobnicate"])), 1);
    assert_eq!(code(&cli(&["infer", "--ckpt", "x"])), 1);
    assert_eq!(code(&cli(&["--help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "crop = 15\n").unwrap();
    assert_eq!(code(&cli(&["train", "--config", cfg.to_str().unwrap()])), 1);
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(code(&cli(&["train", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.wcc");
    let out = dir.path().join("out");
    assert_eq!(code(&cli(&["infer", "--ckpt", missing.to_str().unwrap(), "--in", ".", "--out", out.to_str().unwrap()])), 2);
    let garbage = dir.path().join("garbage.wcc");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(code(&cli(&["infer", "--ckpt", garbage.to_str().unwrap(), "--in", ".", "--out", out.to_str().unwrap()])), 2);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "data_root = nowhere\ncrop = 16\n").unwrap();
    assert_eq!(code(&cli(&["train", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn identity_inference_reproduces_inputs_and_reports_means() {
    let dir = tempfile::tempdir().unwrap();
    let (input, reference, out) = (dir.path().join("in"), dir.path().join("ref"), dir.path().join("out"));
    for k in 0..3 {
        let img = pattern(16 + 4 * k, 20, k);
        write_image(&input.join(format!("img{k}.png")), &img).unwrap();
        write_image(&reference.join(format!("img{k}.png")), &img).unwrap();
    }
    // A reference that differs, so the mean is not trivially the cap.
    write_image(&reference.join("img2.png"), &pattern(24, 20, 5)).unwrap();
    let ckpt = dir.path().join("id.wcc");
    identity_checkpoint(&ckpt);
    let o = cli(&[
        "infer",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--ref",
        reference.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for k in 0..2 {
        let name = format!("img{k}.png");
        assert_eq!(fs::read(out.join(&name)).unwrap(), fs::read(input.join(&name)).unwrap());
    }
    let rows = parse_csv(&fs::read_to_string(out.join("report.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].psnr, 100.0);
    let report: MetricReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let mean = rows.iter().map(|r| r.psnr).sum::<f64>() / 3.0;
    assert!((report.mean_psnr.unwrap() - mean).abs() < 1e-5);
    assert!(report.mean_psnr.unwrap() < 100.0);
    assert_eq!((report.count, report.restored, report.failed), (3, 3, 0));
}

#[test]
fn empty_input_dir_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty");
    fs::create_dir_all(&input).unwrap();
    let ckpt = dir.path().join("id.wcc");
    identity_checkpoint(&ckpt);
    let out = dir.path().join("out");
    let o = cli(&["infer", "--ckpt", ckpt.to_str().unwrap(), "--in", input.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("restored 0 images"));
}

#[test]
fn train_then_resume_via_config() {
    let dir = tempfile::tempdir().unwrap();
    for k in 0..3 {
        write_image(&dir.path().join(format!("data/clean/c{k}.png")), &pattern(16, 16, k)).unwrap();
        write_image(&dir.path().join(format!("data/degraded/d{k}.png")), &pattern(16, 16, k + 7)).unwrap();
    }
    let mut c = tiny_config();
    c.iterations = 3;
    let mut text = c.to_text();
    text.push_str("data_root = data\nout_dir = run\nsave_every = 0\n");
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, &text).unwrap();
    let o = cli(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(dir.path().join("run/losses.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let resumed = text.replace("iterations = 3", "iterations = 5") + "resume = run/last.wcc\n";
    fs::write(&cfg, resumed).unwrap();
    let o = cli(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("step 5"));
    assert_eq!(fs::read_to_string(dir.path().join("run/losses.csv")).unwrap().lines().count(), 6);
}

#[test]
fn analyze_and_classify() {
    let dir = tempfile::tempdir().unwrap();
    let clean = pattern(16, 16, 1);
    let hazy = RgbImage::from_fn(16, 16, |y, x| clean.pixel(y, x).map(|v| 0.5 * v + 0.45));
    let (c, d) = (dir.path().join("imgs/c.png"), dir.path().join("imgs/d.png"));
    write_image(&c, &clean).unwrap();
    write_image(&d, &hazy).unwrap();
    let out = dir.path().join("swap");
    let o = cli(&["analyze-swap", "--degraded", d.to_str().unwrap(), "--clean", c.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_image(&out.join("swap_luma.png")).unwrap().dims(), (16, 16));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("swap.json")).unwrap()).unwrap();
    assert!(summary["psnr_swap_luma"].as_f64().unwrap() > summary["psnr_raw"].as_f64().unwrap());

    let o = cli(&["classify", "--in", dir.path().join("imgs").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
    assert_eq!(code(&cli(&["classify", "--in", ".", "--backend", "nope"])), 1);
}
