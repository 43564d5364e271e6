//! Alternating adversarial training.
//!
//! Per pair: crop the same scene region from source and target, build the
//! attention pyramid from the source scene, generate the residual mask and
//! the enhanced scene, sample target object patches, pair each with its best
//! source window, read the counterpart from the enhanced scene and take the
//! centered texture crops. Each step makes one discriminator update (all
//! three critics, generator frozen) followed by one generator update
//! (critics frozen).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{BatchStream, TrainingPair};
use crate::error::{Error, Result};
use crate::hierarchy::{sample_hierarchy, HierarchySpec, PatchPair, PatchPairSet};
use crate::image::ImageBuffer;
use crate::losses::{discriminator_loss, generator_loss, LossReport, LossWeights};
use crate::metrics::MetricReport;
use crate::model::{
    enhance, image_to_tensor, pyramid_values, Discriminator, DiscriminatorConfig, Generator,
    GeneratorConfig, GeneratorTape, Level, Networks,
};
use crate::nn::{zero_grads, AdamConfig, AdamState, ConvParams, Real, Tensor};
use crate::rawp::{find_best_match, SearchSpec};
use crate::rng::RandomState;
use crate::siam::{attention, build_pyramid, AttentionMode, AttentionPyramid};

/// How object patches of the enhanced scene are paired with target patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Ranked window search around each target patch.
    #[default]
    Ranked,
    /// Same coordinates on both sides.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Save a checkpoint every this many steps (0 = final only).
    pub checkpoint_every: u64,
    pub attention: AttentionMode,
    pub pairing: Pairing,
    pub weights: LossWeights,
    pub hierarchy: HierarchySpec,
    pub search: SearchSpec,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hierarchy = HierarchySpec::default();
        let search = SearchSpec::for_window(hierarchy.object_side());
        Self {
            seed: 0,
            steps: 500,
            batch_size: 4,
            lr_generator: 1e-4,
            lr_discriminator: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            checkpoint_every: 0,
            attention: AttentionMode::Scaled,
            pairing: Pairing::Ranked,
            weights: LossWeights::default(),
            hierarchy,
            search,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_generator >= 0.0 && self.lr_discriminator >= 0.0)
            || !self.lr_generator.is_finite()
            || !self.lr_discriminator.is_finite()
        {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        self.weights.validate()?;
        self.hierarchy.validate()?;
        self.search.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.search.window != self.hierarchy.object_side() {
            return Err(Error::Config(format!(
                "search window {} must equal the object patch side {}",
                self.search.window,
                self.hierarchy.object_side()
            )));
        }
        let min = self.discriminator.min_patch();
        if self.hierarchy.texture_side() < min {
            return Err(Error::Config(format!(
                "texture patches ({}px) are smaller than the critic minimum {min}px",
                self.hierarchy.texture_side()
            )));
        }
        Ok(())
    }

    /// Keys whose values differ between two configs, ignoring run length and
    /// checkpoint cadence.
    pub fn diff(&self, other: &TrainConfig) -> Vec<String> {
        fn walk(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
            match (a, b) {
                (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
                    for (k, va) in x {
                        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        match y.get(k) {
                            Some(vb) => walk(&key, va, vb, out),
                            None => out.push(format!("{key}: {va} vs <missing>")),
                        }
                    }
                }
                _ if a != b => out.push(format!("{prefix}: {a} vs {b}")),
                _ => {}
            }
        }
        let strip = |c: &TrainConfig| {
            let mut v = serde_json::to_value(c).expect("config serializes");
            if let Some(o) = v.as_object_mut() {
                o.remove("steps");
                o.remove("checkpoint_every");
            }
            v
        };
        let mut out = Vec::new();
        walk("", &strip(self), &strip(other), &mut out);
        out
    }

    pub fn adam_generator(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_generator,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }

    pub fn adam_discriminator(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_discriminator,
            ..self.adam_generator()
        }
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub nets: Networks<f32>,
    pub generator_opt: AdamState<f32>,
    pub critic_opts: [AdamState<f32>; 3],
    pub step: u64,
    pub rng: RandomState,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = RandomState::new(config.seed);
        let nets = Networks::new(config.generator.clone(), config.discriminator.clone(), &mut rng)?;
        let generator_opt = AdamState::new(&nets.generator.convs);
        let critic_opts = [
            AdamState::new(&nets.critics[0].convs),
            AdamState::new(&nets.critics[1].convs),
            AdamState::new(&nets.critics[2].convs),
        ];
        Ok(Self {
            config: config.clone(),
            nets,
            generator_opt,
            critic_opts,
            step: 0,
            rng,
        })
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.nets.generator
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        checkpoint::load(path)
    }
}

/// One pair cropped and prepared for the networks.
#[derive(Debug, Clone)]
pub struct PreparedSample<T> {
    pub source: Tensor<T>,
    pub target: Tensor<T>,
    pub attention: Vec<Vec<T>>,
    pub patches: PatchPairSet,
}

/// Attention pyramid of `image` for a generator of `depth` scales.
pub fn attention_pyramid(image: &ImageBuffer, mode: AttentionMode, depth: usize) -> Result<AttentionPyramid> {
    build_pyramid(&attention(image, mode)?, depth)
}

/// Samples the patch hierarchy for one pair and runs window pairing.
pub fn prepare_sample<T: Real>(
    pair: &TrainingPair,
    config: &TrainConfig,
    rng: &mut RandomState,
) -> Result<PreparedSample<T>> {
    let s = config.hierarchy.scene_size;
    let (h, w) = (pair.source.height(), pair.source.width());
    if h < s || w < s || !pair.source.same_shape(&pair.target) {
        return Err(Error::data(
            &pair.name,
            format!(
                "pair is {h}x{w} (reference {}x{}); training needs matching images of at least {s}x{s}",
                pair.target.height(),
                pair.target.width()
            ),
        ));
    }
    let mut patches = sample_hierarchy(h, w, &config.hierarchy, rng)?;
    let src_scene = pair.source.crop(patches.scene_src())?;
    let tgt_scene = pair.target.crop(patches.scene_tgt())?;
    if config.pairing == Pairing::Ranked {
        for i in 0..patches.objects.len() {
            let anchor = patches.objects[i].target;
            let target_patch = tgt_scene.crop(anchor)?;
            let found = find_best_match(&src_scene, &target_patch, anchor, &config.search)?;
            patches.set_object_source(i, found.best_region)?;
        }
    }
    let pyramid = attention_pyramid(&src_scene, config.attention, config.generator.depth)?;
    Ok(PreparedSample {
        source: image_to_tensor(&src_scene),
        target: image_to_tensor(&tgt_scene),
        attention: pyramid_values(&pyramid),
        patches,
    })
}

fn level_pairs(set: &PatchPairSet, level: Level) -> Vec<PatchPair> {
    match level {
        Level::Scene => vec![PatchPair {
            source: set.scene_frame(),
            target: set.scene_frame(),
        }],
        Level::Object => set.objects.clone(),
        Level::Texture => set.textures.clone(),
    }
}

/// Generator output for one sample: the unclamped enhanced scene and its tape.
pub struct Generated<T> {
    pub enhanced: Tensor<T>,
    pub tape: GeneratorTape<T>,
}

pub fn run_generator<T: Real>(gen: &Generator<T>, samples: &[PreparedSample<T>]) -> Result<Vec<Generated<T>>> {
    samples
        .iter()
        .map(|s| {
            let (mask, tape) = gen.forward(&s.source, s.attention.clone())?;
            let mut enhanced = s.source.clone();
            enhanced.add_assign(&mask);
            Ok(Generated { enhanced, tape })
        })
        .collect()
}

struct CriticPass<T> {
    logits: Vec<T>,
    tapes: Vec<(crate::model::CriticTape<T>, usize, usize, usize)>,
}

fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

fn critic_pass<T: Real>(
    critic: &Discriminator<T>,
    patches: impl Iterator<Item = (usize, Tensor<T>)>,
) -> Result<CriticPass<T>> {
    let mut logits = Vec::new();
    let mut tapes = Vec::new();
    for (sample, patch) in patches {
        let (y, tape) = critic.forward(&patch)?;
        logits.extend_from_slice(&y.data);
        tapes.push((tape, sample, y.h, y.w));
    }
    Ok(CriticPass { logits, tapes })
}

fn real_patches<'a, T: Real>(
    samples: &'a [PreparedSample<T>],
    level: Level,
) -> impl Iterator<Item = (usize, Tensor<T>)> + 'a {
    samples.iter().enumerate().flat_map(move |(i, s)| {
        level_pairs(&s.patches, level).into_iter().map(move |p| {
            let r = p.target;
            (i, s.target.crop(r.top, r.left, r.height, r.width))
        })
    })
}

fn fake_patches<'a, T: Real>(
    samples: &'a [PreparedSample<T>],
    generated: &'a [Generated<T>],
    level: Level,
) -> impl Iterator<Item = (usize, Tensor<T>)> + 'a {
    samples.iter().zip(generated).enumerate().flat_map(move |(i, (s, g))| {
        level_pairs(&s.patches, level).into_iter().map(move |p| {
            let r = p.source;
            (i, g.enhanced.crop(r.top, r.left, r.height, r.width))
        })
    })
}

/// Discriminator losses per level (unweighted) and weighted parameter
/// gradients for each critic.
pub fn discriminator_objective<T: Real>(
    critics: &[Discriminator<T>; 3],
    samples: &[PreparedSample<T>],
    generated: &[Generated<T>],
    weights: &LossWeights,
) -> Result<([f64; 3], [Vec<ConvParams<T>>; 3])> {
    let mut values = [0.0; 3];
    let mut grads = [
        zero_grads(&critics[0].convs),
        zero_grads(&critics[1].convs),
        zero_grads(&critics[2].convs),
    ];
    for level in Level::ALL {
        let critic = &critics[level.index()];
        let real = critic_pass(critic, real_patches(samples, level))?;
        let fake = critic_pass(critic, fake_patches(samples, generated, level))?;
        let terms = discriminator_loss(level, &real.logits, &fake.logits)?;
        values[level.index()] = to_f64(terms.value);
        let w = T::lit(weights.get(level));
        if weights.get(level) == 0.0 {
            continue;
        }
        for (pass, d) in [(&real, &terms.d_real), (&fake, &terms.d_fake)] {
            let mut offset = 0;
            for (tape, _, gh, gw) in &pass.tapes {
                let n = gh * gw;
                let g = Tensor::from_vec(1, *gh, *gw, d[offset..offset + n].iter().map(|&v| v * w).collect());
                critic.backward(tape, &g, Some(&mut grads[level.index()]), false);
                offset += n;
            }
        }
    }
    Ok((values, grads))
}

/// Generator losses per level (unweighted) and the gradient of
/// `sum_l weight_l * L_G^l` with respect to the generator parameters.
pub fn generator_objective<T: Real>(
    nets: &Networks<T>,
    samples: &[PreparedSample<T>],
    generated: &[Generated<T>],
    weights: &LossWeights,
) -> Result<([f64; 3], Vec<ConvParams<T>>)> {
    let mut values = [0.0; 3];
    let mut scene_grads: Vec<Tensor<T>> = generated
        .iter()
        .map(|g| Tensor::zeros(g.enhanced.c, g.enhanced.h, g.enhanced.w))
        .collect();
    for level in Level::ALL {
        let critic = nets.critic(level);
        let real = critic_pass(critic, real_patches(samples, level))?;
        let fake = critic_pass(critic, fake_patches(samples, generated, level))?;
        let terms = generator_loss(level, &real.logits, &fake.logits)?;
        values[level.index()] = to_f64(terms.value);
        if weights.get(level) == 0.0 {
            continue;
        }
        let w = T::lit(weights.get(level));
        let regions: Vec<_> = samples
            .iter()
            .flat_map(|s| level_pairs(&s.patches, level).into_iter().map(|p| p.source))
            .collect();
        let mut offset = 0;
        for ((tape, sample, gh, gw), r) in fake.tapes.iter().zip(regions) {
            let n = gh * gw;
            let g = Tensor::from_vec(1, *gh, *gw, terms.d_fake[offset..offset + n].iter().map(|&v| v * w).collect());
            let gx = critic.backward(tape, &g, None, true).expect("input gradient requested");
            scene_grads[*sample].add_window(r.top, r.left, &gx);
            offset += n;
        }
    }
    let mut grads = zero_grads(&nets.generator.convs);
    for (g, grad) in generated.iter().zip(&scene_grads) {
        nets.generator.backward(&g.tape, grad, &mut grads);
    }
    Ok((values, grads))
}

fn check_finite(report: &LossReport) -> Result<()> {
    for level in Level::ALL {
        let l = report.level(level);
        if !l.generator.is_finite() || !l.discriminator.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite {level} loss at step {}",
                report.step
            )));
        }
    }
    Ok(())
}

/// One discriminator update then one generator update on `batch`.
pub fn train_step(state: &mut TrainState, batch: &[&TrainingPair]) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::param("empty training batch"));
    }
    let config = state.config.clone();
    let samples = batch
        .iter()
        .map(|p| prepare_sample::<f32>(p, &config, &mut state.rng))
        .collect::<Result<Vec<_>>>()?;
    let generated = run_generator(&state.nets.generator, &samples)?;

    let (d_values, d_grads) = discriminator_objective(&state.nets.critics, &samples, &generated, &config.weights)?;
    let adam_d = config.adam_discriminator();
    for ((critic, opt), grads) in state
        .nets
        .critics
        .iter_mut()
        .zip(state.critic_opts.iter_mut())
        .zip(d_grads.iter())
    {
        opt.update(&mut critic.convs, grads, &adam_d);
    }

    let (g_values, g_grads) = generator_objective(&state.nets, &samples, &generated, &config.weights)?;
    state
        .generator_opt
        .update(&mut state.nets.generator.convs, &g_grads, &config.adam_generator());

    let mut report = LossReport {
        step: state.step,
        ..Default::default()
    };
    for level in Level::ALL {
        let l = report.level_mut(level);
        l.discriminator = d_values[level.index()];
        l.generator = g_values[level.index()];
    }
    check_finite(&report)?;
    report.finalize(&config.weights)?;
    state.step += 1;
    Ok(report)
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Directory for `step-<n>.ckpt` files; `None` disables checkpointing.
    pub checkpoint_dir: Option<PathBuf>,
    /// Sink for newline-delimited loss records.
    pub log: Option<&'a mut dyn Write>,
}

pub struct RunOutcome {
    pub state: TrainState,
    pub log: Vec<LossReport>,
    pub checkpoints: Vec<(u64, PathBuf)>,
}

fn save_numbered(state: &TrainState, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(format!("step-{:06}.ckpt", state.step));
    state.save(&path)?;
    Ok(path)
}

/// Trains until `config.steps`, optionally continuing from `resume`.
pub fn run(
    config: &TrainConfig,
    pairs: &[TrainingPair],
    resume: Option<TrainState>,
    mut opts: RunOptions<'_>,
) -> Result<RunOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::param("training needs at least one image pair"));
    }
    let mut state = match resume {
        Some(mut s) => {
            let diff = s.config.diff(config);
            if !diff.is_empty() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint config differs: {}",
                    diff.join("; ")
                )));
            }
            s.config = config.clone();
            s
        }
        None => TrainState::new(config)?,
    };
    let stream = BatchStream::new(pairs.len(), config.batch_size, config.seed)?;
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    if let Some(dir) = &opts.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    while state.step < config.steps {
        let batch: Vec<&TrainingPair> = stream.batch_at(state.step).into_iter().map(|i| &pairs[i]).collect();
        let report = train_step(&mut state, &batch)?;
        if let Some(sink) = opts.log.as_deref_mut() {
            writeln!(sink, "{}", report.to_json_line())?;
        }
        log::debug!("step {} total {:.5}", report.step, report.total);
        log.push(report);
        let due = config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0;
        if let (true, Some(dir)) = (due, &opts.checkpoint_dir) {
            checkpoints.push((state.step, save_numbered(&state, dir)?));
        }
    }
    // The final state is always saved, even when no step ran.
    if let Some(dir) = &opts.checkpoint_dir {
        if checkpoints.last().map(|c| c.0) != Some(state.step) {
            checkpoints.push((state.step, save_numbered(&state, dir)?));
        }
    }
    Ok(RunOutcome {
        state,
        log,
        checkpoints,
    })
}

/// Enhances a whole image with attention computed from the image itself.
pub fn enhance_image(gen: &Generator<f32>, mode: AttentionMode, image: &ImageBuffer) -> Result<ImageBuffer> {
    let pyramid = attention_pyramid(image, mode, gen.config.depth)?;
    let mask = gen.generate_mask(image, &pyramid)?;
    enhance(image, &mask)
}

/// Metrics of enhanced sources against their references.
pub fn evaluate(gen: &Generator<f32>, mode: AttentionMode, pairs: &[TrainingPair]) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for p in pairs {
        let out = enhance_image(gen, mode, &p.source)?;
        report.push(&p.name, &out, &p.target)?;
    }
    Ok(report)
}

/// Metrics of unprocessed sources against their references.
pub fn baseline(pairs: &[TrainingPair]) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for p in pairs {
        report.push(&p.name, &p.source, &p.target)?;
    }
    Ok(report)
}
