//! `allweather`: train, apply and inspect the enhancement model.
//!
//! Exit codes: 0 success, 2 usage, 3 data or I/O, 4 configuration,
//! parameter or checkpoint, 5 numeric failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use allweather_core::ablation::{self, Variant};
use allweather_core::dataset::{image_files, load_pairs, scan};
use allweather_core::metrics::MetricReport;
use allweather_core::rawp::find_best_match_with_scores;
use allweather_core::siam::{illumination, naive_attention, scaled_attention};
use allweather_core::trainer::{enhance_image, run, RunOptions};
use allweather_core::{synthetic, Error, ImageBuffer, PatchRegion, Result, SearchSpec, TrainConfig, TrainState};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "allweather", version, about = "Illumination-guided residual image enhancement")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct TrainingArgs {
    /// TOML training config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured step count.
    #[arg(long)]
    steps: Option<u64>,
}

impl TrainingArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on a `<root>/<condition>/{source,reference}` dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        training: TrainingArgs,
        /// Output directory for checkpoints, the loss log and the config echo.
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Enhance an image or every image in a directory.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image file or directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory of references matched by stem; enables metrics.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Write illumination, naive and scaled attention maps of an image.
    Attention {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair a target patch with its best source window.
    Rawp {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Target patch position as `top,left`.
        #[arg(long, value_parser = parse_anchor)]
        anchor: (usize, usize),
        #[arg(long, default_value_t = 32)]
        window: usize,
        #[arg(long, default_value_t = 4)]
        stride: usize,
        /// Search area side; defaults to 1.5x the window.
        #[arg(long)]
        area: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// SSIM and PSNR of images against references matched by stem.
    Evaluate {
        /// Image file or directory.
        #[arg(long)]
        input: PathBuf,
        /// Reference file or directory.
        #[arg(long)]
        reference: PathBuf,
        /// CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train ablation variants with a shared seed and step budget.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        training: TrainingArgs,
        /// Ladder entries to run (M1..M5); all five by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Variant config files, compared in the given order instead of the ladder.
        #[arg(long = "variant-config")]
        variant_configs: Vec<PathBuf>,
        /// CSV destination for the table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a procedural paired dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_anchor(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected top,left")?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    Ok((p(a)?, p(b)?))
}

/// Stem-keyed images from a file or a directory.
fn collect_images(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    if path.is_dir() {
        let files = image_files(path)?;
        if files.is_empty() {
            return Err(Error::EmptyDataset(path.to_path_buf()));
        }
        return Ok(files.into_iter().collect());
    }
    if !path.exists() {
        return Err(Error::Data {
            path: path.to_path_buf(),
            reason: "no such file or directory".into(),
        });
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(vec![(stem, path.to_path_buf())])
}

fn reference_for(reference: &Path, stem: &str) -> Result<PathBuf> {
    if reference.is_file() {
        return Ok(reference.to_path_buf());
    }
    image_files(reference)?.remove(stem).ok_or_else(|| Error::Data {
        path: reference.join(stem),
        reason: "no reference image with this stem".into(),
    })
}

fn train(data: &Path, training: &TrainingArgs, out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let config = training.resolve()?;
    let manifest = scan(data)?;
    log::info!("{} pairs, {} unmatched files", manifest.entries.len(), manifest.unmatched.len());
    let pairs = load_pairs(&manifest, config.hierarchy.scene_size)?;
    let resume = checkpoint.map(TrainState::load).transpose()?;
    if let Some(s) = &resume {
        log::info!("resuming at step {}", s.step);
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), config.to_toml())?;
    // A resumed run continues the existing log.
    let log_path = out.join("losses.ndjson");
    let file = if resume.is_some() {
        File::options().create(true).append(true).open(&log_path)?
    } else {
        File::create(&log_path)?
    };
    let mut log_file = BufWriter::new(file);
    let outcome = run(
        &config,
        &pairs,
        resume,
        RunOptions {
            checkpoint_dir: Some(out.to_path_buf()),
            log: Some(&mut log_file),
        },
    )?;
    log_file.flush()?;
    if let Some(last) = outcome.log.last() {
        log::info!("step {} total loss {:.5}", last.step + 1, last.total);
    }
    for (step, path) in &outcome.checkpoints {
        log::info!("checkpoint {step}: {}", path.display());
    }
    Ok(())
}

fn enhance(checkpoint: &Path, input: &Path, out: &Path, reference: Option<&Path>) -> Result<()> {
    let state = TrainState::load(checkpoint)?;
    let images = collect_images(input)?;
    fs::create_dir_all(out)?;
    let mut before = MetricReport::default();
    let mut after = MetricReport::default();
    for (stem, path) in &images {
        let img = ImageBuffer::load(path)?;
        let result = enhance_image(state.generator(), state.config.attention, &img)?;
        let dest = out.join(format!("{stem}.png"));
        result.save(&dest)?;
        log::info!("{} -> {}", path.display(), dest.display());
        if let Some(r) = reference {
            let target = ImageBuffer::load(reference_for(r, stem)?)?;
            before.push(stem.as_str(), &img, &target)?;
            after.push(stem.as_str(), &result, &target)?;
        }
    }
    if reference.is_some() {
        println!("input\n{}", before.to_table());
        println!("enhanced\n{}", after.to_table());
        fs::write(out.join("metrics.csv"), after.to_csv())?;
    }
    Ok(())
}

fn attention(input: &Path, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    for (stem, path) in collect_images(input)? {
        let img = ImageBuffer::load(&path)?;
        let illum = illumination(&img)?;
        let maps = [
            ("illum", illum.clone()),
            ("naive", naive_attention(&illum)?),
            ("scaled", scaled_attention(&illum)?),
        ];
        for (tag, map) in maps {
            map.to_image().save(out.join(format!("{stem}.{tag}.png")))?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rawp(
    source: &Path,
    target: &Path,
    anchor: (usize, usize),
    window: usize,
    stride: usize,
    area: Option<usize>,
    out: &Path,
) -> Result<()> {
    let src = ImageBuffer::load(source)?;
    let tgt = ImageBuffer::load(target)?;
    let mut spec = SearchSpec::for_window(window);
    spec.stride = stride;
    if let Some(a) = area {
        spec.area_h = a;
        spec.area_w = a;
    }
    spec.validate()?;
    let anchor = PatchRegion::square(anchor.0, anchor.1, window);
    let patch = tgt.crop(anchor)?;
    let m = find_best_match_with_scores(&src, &patch, anchor, &spec)?;
    let table = m.all_scores.as_ref().expect("scores requested");
    fs::create_dir_all(out)?;
    // Low scores bright; each candidate drawn as a stride-sized cell.
    let (lo, hi) = table
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let cell = stride.max(1);
    let heat = ImageBuffer::from_fn(table.rows * cell, table.cols * cell, 1, |y, x, _| {
        1.0 - (table.values[(y / cell) * table.cols + x / cell] - lo) / span
    })?;
    heat.save(out.join("scores.png"))?;
    src.crop(m.best_region)?.save(out.join("match.png"))?;
    patch.save(out.join("target.png"))?;
    println!("anchor {anchor} search area {} best {} score {:.6}", table.area, m.best_region, m.score);
    Ok(())
}

fn evaluate(input: &Path, reference: &Path, out: Option<&Path>) -> Result<()> {
    let mut report = MetricReport::default();
    for (stem, path) in collect_images(input)? {
        let img = ImageBuffer::load(&path)?;
        let target = ImageBuffer::load(reference_for(reference, &stem)?)?;
        report.push(stem, &img, &target)?;
    }
    print!("{}", report.to_table());
    if let Some(p) = out {
        fs::write(p, report.to_csv())?;
    }
    Ok(())
}

fn ablate(
    data: &Path,
    training: &TrainingArgs,
    names: &[String],
    variant_configs: &[PathBuf],
    out: Option<&Path>,
) -> Result<()> {
    let base = training.resolve()?;
    let variants = if variant_configs.is_empty() {
        if names.is_empty() {
            ablation::ladder(&base)
        } else {
            ablation::select(&base, names)?
        }
    } else {
        variant_configs
            .iter()
            .map(|p| {
                let mut config = TrainConfig::load(p)?;
                config.seed = base.seed;
                config.steps = base.steps;
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Ok(Variant { name, config })
            })
            .collect::<Result<Vec<_>>>()?
    };
    if variants.len() < 2 {
        return Err(Error::Config("an ablation needs at least two variants".into()));
    }
    let pairs = load_pairs(&scan(data)?, base.hierarchy.scene_size)?;
    let table = ablation::run_ablation(&variants, &pairs, &pairs)?;
    print!("{}", table.to_table());
    if let Some(p) = out {
        let mut csv = String::from("variant,ssim,psnr,error\n");
        for r in &table.rows {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{},{}\n",
                r.name,
                f(r.ssim),
                f(r.psnr),
                r.error.as_deref().unwrap_or("").replace(',', ";")
            ));
        }
        fs::write(p, csv)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            data,
            training,
            out,
            checkpoint,
        } => train(&data, &training, &out, checkpoint.as_deref()),
        Command::Enhance {
            checkpoint,
            input,
            out,
            reference,
        } => enhance(&checkpoint, &input, &out, reference.as_deref()),
        Command::Attention { input, out } => attention(&input, &out),
        Command::Rawp {
            source,
            target,
            anchor,
            window,
            stride,
            area,
            out,
        } => rawp(&source, &target, anchor, window, stride, area, &out),
        Command::Evaluate { input, reference, out } => evaluate(&input, &reference, out.as_deref()),
        Command::Ablate {
            data,
            training,
            variants,
            variant_configs,
            out,
        } => ablate(&data, &training, &variants, &variant_configs, out.as_deref()),
        Command::Synth { out, count, size, seed } => {
            synthetic::write_dataset(&out, count, size, seed)?;
            log::info!("wrote {count} pairs to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
