use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use allweather_core::metrics::ssim;
use allweather_core::synthetic::{synthetic_pair, write_dataset};
use allweather_core::trainer::{run, RunOptions};
use allweather_core::{HierarchySpec, ImageBuffer, SearchSpec, TrainConfig};

fn allweather(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_allweather"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let hierarchy = HierarchySpec {
        scene_size: 32,
        objects_per_scene: 2,
        ..Default::default()
    };
    let mut cfg = TrainConfig {
        steps: 3,
        batch_size: 2,
        search: SearchSpec::for_window(hierarchy.object_side()),
        hierarchy,
        ..Default::default()
    };
    cfg.generator.base_channels = 4;
    cfg.generator.depth = 2;
    cfg.discriminator.base_channels = 4;
    cfg.discriminator.layers = 2;
    let path = dir.join("small.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = allweather(&["attention", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(allweather(&[]).status.code(), Some(2));
}

#[test]
fn attention_maps_are_written_per_stem() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 2, 48, 0).unwrap();
    let src = dir.path().join("night/source");
    let out = dir.path().join("att");
    let o = allweather(&["attention", "--input", p(&src), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for stem in ["synth_000", "synth_001"] {
        for tag in ["illum", "naive", "scaled"] {
            let img = ImageBuffer::load(out.join(format!("{stem}.{tag}.png"))).unwrap();
            assert_eq!((img.height(), img.width()), (48, 48));
        }
    }
}

#[test]
fn train_resume_and_identity_enhance() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, 3, 40, 1).unwrap();
    let cfg = small_config(dir.path());
    let run_dir = dir.path().join("run");

    // Zero steps: the saved model is the identity.
    let o = allweather(&["train", "--data", p(&data), "--config", p(&cfg), "--steps", "0", "--out", p(&run_dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt0 = run_dir.join("step-000000.ckpt");
    let enhanced = dir.path().join("enh");
    let src = data.join("night/source");
    let o = allweather(&[
        "enhance",
        "--checkpoint",
        p(&ckpt0),
        "--input",
        p(&src),
        "--out",
        p(&enhanced),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for stem in ["synth_000", "synth_001", "synth_002"] {
        let a = fs::read(src.join(format!("{stem}.png"))).unwrap();
        let b = ImageBuffer::load(enhanced.join(format!("{stem}.png"))).unwrap();
        assert_eq!(ImageBuffer::load(src.join(format!("{stem}.png"))).unwrap(), b);
        assert!(!a.is_empty());
    }

    // Two steps, then resume to four; the log has four lines.
    let o = allweather(&["train", "--data", p(&data), "--config", p(&cfg), "--steps", "2", "--out", p(&run_dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = allweather(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--steps",
        "4",
        "--out",
        p(&run_dir),
        "--checkpoint",
        p(&run_dir.join("step-000002.ckpt")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(run_dir.join("losses.ndjson")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .map(serde_step)
        .collect();
    assert_eq!(steps, [0, 1, 2, 3]);
    assert!(run_dir.join("step-000004.ckpt").exists());

    // Resuming under a different seed is refused with a config error.
    let o = allweather(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--seed",
        "9",
        "--steps",
        "5",
        "--out",
        p(&run_dir),
        "--checkpoint",
        p(&run_dir.join("step-000004.ckpt")),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

fn serde_step(line: &str) -> u64 {
    let start = line.find("\"step\":").expect("step field") + 7;
    line[start..]
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect::<String>()
        .parse()
        .unwrap()
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = dir.path().join("o");
    assert_eq!(
        allweather(&["train", "--data", p(&missing), "--out", p(&out)]).status.code(),
        Some(3)
    );
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "batch_size = 0\n").unwrap();
    write_dataset(dir.path().join("d"), 1, 64, 0).unwrap();
    assert_eq!(
        allweather(&["train", "--data", p(&dir.path().join("d")), "--config", p(&bad), "--out", p(&out)])
            .status
            .code(),
        Some(4)
    );
    let o = allweather(&[
        "enhance",
        "--checkpoint",
        p(&dir.path().join("none.ckpt")),
        "--input",
        p(&dir.path().join("d")),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let junk = dir.path().join("junk.png");
    fs::write(&junk, b"not an image").unwrap();
    let o = allweather(&["attention", "--input", p(&junk), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("junk.png"));
}

#[test]
fn rawp_writes_heatmap_and_match() {
    let dir = tempfile::tempdir().unwrap();
    let pair = synthetic_pair(64, 3, 0);
    let target = dir.path().join("t.png");
    let source = dir.path().join("s.png");
    pair.target.save(&target).unwrap();
    // Source is the target shifted right by 4 pixels.
    let shifted = ImageBuffer::from_fn(64, 64, 3, |y, x, c| pair.target.get(y, x.saturating_sub(4), c)).unwrap();
    shifted.save(&source).unwrap();
    let out = dir.path().join("r");
    let o = allweather(&[
        "rawp",
        "--source",
        p(&source),
        "--target",
        p(&target),
        "--anchor",
        "16,16",
        "--window",
        "16",
        "--stride",
        "4",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("best (top=16, left=20, 16x16) score 0.000000"), "{text}");
    let heat = ImageBuffer::load(out.join("scores.png")).unwrap();
    // 24px area, 16px window, stride 4: 3x3 candidates drawn as 4px cells
    assert_eq!((heat.height(), heat.width()), (12, 12));
    assert!(out.join("match.png").exists());
}

#[test]
fn evaluate_prints_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 2, 32, 2).unwrap();
    let csv = dir.path().join("m.csv");
    let o = allweather(&[
        "evaluate",
        "--input",
        p(&dir.path().join("night/source")),
        "--reference",
        p(&dir.path().join("night/reference")),
        "--out",
        p(&csv),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("synth_001"));
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("image,ssim,psnr"));
}

#[test]
fn ablate_two_variants_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, 2, 40, 4).unwrap();
    let cfg = small_config(dir.path());
    let table = |name: &str| {
        let csv = dir.path().join(name);
        let o = allweather(&[
            "ablate",
            "--data",
            p(&data),
            "--config",
            p(&cfg),
            "--steps",
            "2",
            "--variants",
            "M1,M5",
            "--out",
            p(&csv),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(csv).unwrap()
    };
    let a = table("a.csv");
    let rows: Vec<_> = a.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("M1,") && rows[1].starts_with("M5,"));
    for r in &rows {
        let ssim: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        assert!(ssim.is_finite());
    }
    assert_eq!(a, table("b.csv"));
    let o = allweather(&["ablate", "--data", p(&data), "--variants", "M1"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn trained_checkpoint_improves_held_out_image() {
    let dir = tempfile::tempdir().unwrap();
    let train: Vec<_> = (0..8).map(|i| synthetic_pair(128, 21, i)).collect();
    let config = TrainConfig {
        seed: 21,
        steps: 60,
        ..Default::default()
    };
    let ckpts = dir.path().join("ck");
    let out = run(
        &config,
        &train,
        None,
        RunOptions {
            checkpoint_dir: Some(ckpts.clone()),
            log: None,
        },
    )
    .unwrap();
    let (_, ckpt) = out.checkpoints.last().unwrap();
    let held_out = synthetic_pair(128, 21, 50);
    let input = dir.path().join("held.png");
    held_out.source.save(&input).unwrap();
    let refs = dir.path().join("refs");
    fs::create_dir_all(&refs).unwrap();
    held_out.target.save(refs.join("held.png")).unwrap();
    let enh = dir.path().join("enh");
    let o = allweather(&[
        "enhance",
        "--checkpoint",
        p(ckpt),
        "--input",
        p(&input),
        "--out",
        p(&enh),
        "--reference",
        p(&refs),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let result = ImageBuffer::load(enh.join("held.png")).unwrap();
    let before = ssim(&held_out.source, &held_out.target).unwrap();
    let after = ssim(&result, &held_out.target).unwrap();
    assert!(after > before, "SSIM {before:.4} -> {after:.4}");
    assert!(enh.join("metrics.csv").exists());
}
