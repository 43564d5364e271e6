//! Residual-mask generator and patch critics.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::nn::{
    concat, leaky_relu, leaky_relu_backward, scale_by_map, split, upsample2, upsample2_backward,
    Conv2d, ConvCache, ConvParams, ConvShape, Real, Tensor,
};
use crate::siam::AttentionPyramid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Scene,
    Object,
    Texture,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Scene, Level::Object, Level::Texture];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Scene => "scene",
            Level::Object => "object",
            Level::Texture => "texture",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    LeakyRelu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    /// Number of feature scales; also the number of attention levels consumed.
    pub depth: usize,
    pub activation: Activation,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            depth: 3,
            activation: Activation::LeakyRelu,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.depth == 0 {
            return Err(Error::Config(
                "generator needs base_channels >= 1 and depth >= 1".into(),
            ));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Convolution shapes in execution order: encoders, decoders, head.
    pub fn conv_shapes(&self) -> Vec<ConvShape> {
        let d = self.depth;
        let mut shapes = Vec::with_capacity(2 * d);
        for k in 0..d {
            shapes.push(ConvShape {
                in_c: if k == 0 { 3 } else { self.channels(k - 1) },
                out_c: self.channels(k),
                kernel: 3,
                stride: if k == 0 { 1 } else { 2 },
                pad: 1,
            });
        }
        for k in (0..d.saturating_sub(1)).rev() {
            shapes.push(ConvShape {
                in_c: self.channels(k + 1) + self.channels(k),
                out_c: self.channels(k),
                kernel: 3,
                stride: 1,
                pad: 1,
            });
        }
        shapes.push(ConvShape {
            in_c: self.channels(0),
            out_c: 3,
            kernel: 3,
            stride: 1,
            pad: 1,
        });
        shapes
    }

    pub fn layer_names(&self) -> Vec<String> {
        let d = self.depth;
        let mut names: Vec<String> = (0..d).map(|k| format!("enc{k}")).collect();
        names.extend((0..d.saturating_sub(1)).rev().map(|k| format!("dec{k}")));
        names.push("head".into());
        names
    }

    pub fn param_count(&self) -> usize {
        self.conv_shapes().iter().map(ConvShape::param_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    /// Stride-2 layers before the logit head.
    pub layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            layers: 4,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.layers == 0 {
            return Err(Error::Config(
                "discriminator needs base_channels >= 1 and layers >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn conv_shapes(&self) -> Vec<ConvShape> {
        let width = |i: usize| self.base_channels << i.min(3);
        let mut shapes: Vec<ConvShape> = (0..self.layers)
            .map(|i| ConvShape {
                in_c: if i == 0 { 3 } else { width(i - 1) },
                out_c: width(i),
                kernel: 4,
                stride: 2,
                pad: 1,
            })
            .collect();
        shapes.push(ConvShape {
            in_c: width(self.layers - 1),
            out_c: 1,
            kernel: 3,
            stride: 1,
            pad: 1,
        });
        shapes
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.layers).map(|i| format!("down{i}")).collect();
        names.push("logits".into());
        names
    }

    /// Smallest square patch side the critic accepts.
    pub fn min_patch(&self) -> usize {
        1 << self.layers
    }

    /// Logit grid side for a square patch side.
    pub fn grid_side(&self, side: usize) -> usize {
        (0..self.layers).fold(side, |s, _| s / 2)
    }

    pub fn param_count(&self) -> usize {
        self.conv_shapes().iter().map(ConvShape::param_count).sum()
    }
}

/// Enhancement mask, values in `[-1, 1]`, interleaved RGB like [`ImageBuffer`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// Residual enhancement `source + mask`, clamped to `[0, 1]`.
pub fn enhance(source: &ImageBuffer, mask: &Mask) -> Result<ImageBuffer> {
    let raw = enhance_unclamped(source, mask)?;
    ImageBuffer::new(
        source.height(),
        source.width(),
        3,
        raw.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
}

/// `source + mask` without clamping; this is what the critics see in training.
pub fn enhance_unclamped(source: &ImageBuffer, mask: &Mask) -> Result<Vec<f64>> {
    if source.channels() != 3 || source.height() != mask.height || source.width() != mask.width {
        return Err(Error::param(format!(
            "mask {}x{} does not match source {}x{}x{}",
            mask.height,
            mask.width,
            source.height(),
            source.width(),
            source.channels()
        )));
    }
    Ok(source.data().iter().zip(&mask.data).map(|(s, m)| s + m).collect())
}

/// `H x W x 3` interleaved image to a `3 x H x W` tensor.
pub fn image_to_tensor<T: Real>(img: &ImageBuffer) -> Tensor<T> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut t = Tensor::zeros(c, h, w);
    for (i, px) in img.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            t.data[ch * h * w + i] = T::lit(v);
        }
    }
    t
}

pub fn tensor_to_interleaved<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    let n = t.plane();
    let mut out = vec![0.0; t.len()];
    for ch in 0..t.c {
        for i in 0..n {
            out[i * t.c + ch] = t.data[ch * n + i].to_f64().unwrap_or(f64::NAN);
        }
    }
    out
}

pub fn pyramid_values<T: Real>(pyramid: &AttentionPyramid) -> Vec<Vec<T>> {
    pyramid
        .levels()
        .iter()
        .map(|l| l.values().iter().map(|&v| T::lit(v)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub convs: Vec<Conv2d<T>>,
}

/// Intermediate values kept for [`Generator::backward`].
#[derive(Debug, Clone)]
pub struct GeneratorTape<T> {
    attention: Vec<Vec<T>>,
    enc_caches: Vec<ConvCache<T>>,
    enc_act: Vec<Tensor<T>>,
    enc_dims: Vec<(usize, usize)>,
    dec_caches: Vec<ConvCache<T>>,
    dec_out: Vec<Tensor<T>>,
    head_cache: ConvCache<T>,
    squashed: Tensor<T>,
}

impl<T: Real> Generator<T> {
    /// Gaussian body, zero head: the fresh generator outputs an all-zero mask.
    pub fn new(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let shapes = config.conv_shapes();
        let last = shapes.len() - 1;
        let convs = shapes
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if i == last {
                    Conv2d::zeros(s)
                } else {
                    Conv2d::gaussian(s, std::f64::consts::SQRT_2, rng)
                }
            })
            .collect();
        Ok(Self { config, convs })
    }

    pub fn head(&self) -> &Conv2d<T> {
        self.convs.last().expect("generator has a head")
    }

    pub fn head_mut(&mut self) -> &mut Conv2d<T> {
        self.convs.last_mut().expect("generator has a head")
    }

    fn check_inputs(&self, h: usize, w: usize, attention: &[Vec<T>]) -> Result<()> {
        if attention.len() != self.config.depth {
            return Err(Error::Config(format!(
                "generator depth {} needs {} attention levels, got {}",
                self.config.depth,
                self.config.depth,
                attention.len()
            )));
        }
        let (mut lh, mut lw) = (h, w);
        for (k, level) in attention.iter().enumerate() {
            if level.len() != lh * lw {
                return Err(Error::Config(format!(
                    "attention level {k} has {} values, expected {lh}x{lw}",
                    level.len()
                )));
            }
            lh = lh.div_ceil(2);
            lw = lw.div_ceil(2);
        }
        Ok(())
    }

    /// Mask tensor (`3 x H x W`) and the tape for backpropagation.
    pub fn forward(&self, input: &Tensor<T>, attention: Vec<Vec<T>>) -> Result<(Tensor<T>, GeneratorTape<T>)> {
        self.check_inputs(input.h, input.w, &attention)?;
        let d = self.config.depth;
        let mut enc_caches = Vec::with_capacity(d);
        let mut enc_act = Vec::with_capacity(d);
        let mut feats: Vec<Tensor<T>> = Vec::with_capacity(d);
        for k in 0..d {
            let x = if k == 0 { input } else { &feats[k - 1] };
            let (mut y, cache) = self.convs[k].forward(x);
            leaky_relu(&mut y);
            enc_act.push(y.clone());
            scale_by_map(&mut y, &attention[k]);
            enc_caches.push(cache);
            feats.push(y);
        }
        let enc_dims = feats.iter().map(|f| (f.h, f.w)).collect();
        let mut u = feats[d - 1].clone();
        let mut dec_caches = Vec::with_capacity(d - 1);
        let mut dec_out = Vec::with_capacity(d - 1);
        for (j, k) in (0..d - 1).rev().enumerate() {
            let up = upsample2(&u, feats[k].h, feats[k].w);
            let cat = concat(&up, &feats[k]);
            let (mut y, cache) = self.convs[d + j].forward(&cat);
            leaky_relu(&mut y);
            dec_caches.push(cache);
            dec_out.push(y.clone());
            u = y;
        }
        let (mut head, head_cache) = self.head().forward(&u);
        for v in head.data.iter_mut() {
            *v = v.tanh();
        }
        let squashed = head.clone();
        scale_by_map(&mut head, &attention[0]);
        Ok((
            head,
            GeneratorTape {
                attention,
                enc_caches,
                enc_act,
                enc_dims,
                dec_caches,
                dec_out,
                head_cache,
                squashed,
            },
        ))
    }

    /// Accumulates parameter gradients for `d(loss)/d(mask)` into `grads`.
    pub fn backward(&self, tape: &GeneratorTape<T>, grad_mask: &Tensor<T>, grads: &mut [ConvParams<T>]) {
        let d = self.config.depth;
        let n_convs = self.convs.len();
        let one = T::one();
        let mut g = grad_mask.clone();
        scale_by_map(&mut g, &tape.attention[0]);
        for (gv, &t) in g.data.iter_mut().zip(&tape.squashed.data) {
            *gv = *gv * (one - t * t);
        }
        let mut g_u = self
            .head()
            .backward(&tape.head_cache, &g, Some(&mut grads[n_convs - 1]), true)
            .expect("input gradient requested");
        let mut g_feat: Vec<Tensor<T>> = tape
            .enc_act
            .iter()
            .map(|a| Tensor::zeros(a.c, a.h, a.w))
            .collect();
        for (j, k) in (0..d - 1).rev().enumerate().collect::<Vec<_>>().into_iter().rev() {
            leaky_relu_backward(&tape.dec_out[j], &mut g_u);
            let g_cat = self.convs[d + j]
                .backward(&tape.dec_caches[j], &g_u, Some(&mut grads[d + j]), true)
                .expect("input gradient requested");
            let up_c = g_cat.c - g_feat[k].c;
            let (g_up, g_skip) = split(&g_cat, up_c);
            g_feat[k].add_assign(&g_skip);
            let (ph, pw) = tape.enc_dims[k + 1];
            g_u = upsample2_backward(&g_up, ph, pw);
        }
        g_feat[d - 1].add_assign(&g_u);
        for k in (0..d).rev() {
            let mut g = std::mem::replace(&mut g_feat[k], Tensor::zeros(0, 0, 0));
            scale_by_map(&mut g, &tape.attention[k]);
            leaky_relu_backward(&tape.enc_act[k], &mut g);
            let gx = self.convs[k].backward(&tape.enc_caches[k], &g, Some(&mut grads[k]), k > 0);
            if let Some(gx) = gx {
                g_feat[k - 1].add_assign(&gx);
            }
        }
    }

    /// Enhancement mask for `source` guided by `pyramid`.
    pub fn generate_mask(&self, source: &ImageBuffer, pyramid: &AttentionPyramid) -> Result<Mask> {
        if source.channels() != 3 {
            return Err(Error::param("generator input must be RGB"));
        }
        let (mask, _) = self.forward(&image_to_tensor(source), pyramid_values(pyramid))?;
        Ok(Mask {
            height: source.height(),
            width: source.width(),
            data: tensor_to_interleaved(&mask),
        })
    }
}

/// Patch critic producing a spatial grid of logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub convs: Vec<Conv2d<T>>,
}

#[derive(Debug, Clone)]
pub struct CriticTape<T> {
    caches: Vec<ConvCache<T>>,
    acts: Vec<Tensor<T>>,
}

/// Logits for one patch, row-major `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let shapes = config.conv_shapes();
        let last = shapes.len() - 1;
        let convs = shapes
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let gain = if i == last { 1.0 } else { std::f64::consts::SQRT_2 };
                Conv2d::gaussian(s, gain, rng)
            })
            .collect();
        Ok(Self { config, convs })
    }

    pub fn check_patch(&self, h: usize, w: usize) -> Result<()> {
        let min = self.config.min_patch();
        if h < min || w < min {
            return Err(Error::Config(format!(
                "critic with {} layers needs patches of at least {min}x{min}, got {h}x{w}",
                self.config.layers
            )));
        }
        Ok(())
    }

    pub fn forward(&self, patch: &Tensor<T>) -> Result<(Tensor<T>, CriticTape<T>)> {
        self.check_patch(patch.h, patch.w)?;
        let last = self.convs.len() - 1;
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut acts = Vec::with_capacity(last);
        let mut x = patch.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let (mut y, cache) = conv.forward(&x);
            caches.push(cache);
            if i < last {
                leaky_relu(&mut y);
                acts.push(y.clone());
            }
            x = y;
        }
        Ok((x, CriticTape { caches, acts }))
    }

    /// Gradient flows from `grad_logits` into `grads` (when given) and, when
    /// `want_input`, back to the patch.
    pub fn backward(
        &self,
        tape: &CriticTape<T>,
        grad_logits: &Tensor<T>,
        mut grads: Option<&mut [ConvParams<T>]>,
        want_input: bool,
    ) -> Option<Tensor<T>> {
        let mut g = grad_logits.clone();
        for i in (0..self.convs.len()).rev() {
            if i < self.convs.len() - 1 {
                leaky_relu_backward(&tape.acts[i], &mut g);
            }
            let pg = grads.as_deref_mut().map(|gs| &mut gs[i]);
            let need_input = i > 0 || want_input;
            g = self.convs[i].backward(&tape.caches[i], &g, pg, need_input)?;
        }
        Some(g)
    }

    /// Logit grid of one RGB patch.
    pub fn critic_forward(&self, patch: &ImageBuffer) -> Result<LogitGrid> {
        if patch.channels() != 3 {
            return Err(Error::param("critic input must be RGB"));
        }
        let (y, _) = self.forward(&image_to_tensor(patch))?;
        Ok(LogitGrid {
            height: y.h,
            width: y.w,
            values: y.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
        })
    }

    pub fn critic_batch(&self, patches: &[ImageBuffer]) -> Result<Vec<LogitGrid>> {
        patches.iter().map(|p| self.critic_forward(p)).collect()
    }
}

/// Generator and the three level critics.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks<T> {
    pub generator: Generator<T>,
    pub critics: [Discriminator<T>; 3],
}

impl<T: Real> Networks<T> {
    pub fn new(gen: GeneratorConfig, disc: DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        let generator = Generator::new(gen, rng)?;
        let critics = [
            Discriminator::new(disc.clone(), rng)?,
            Discriminator::new(disc.clone(), rng)?,
            Discriminator::new(disc, rng)?,
        ];
        Ok(Self { generator, critics })
    }

    pub fn critic(&self, level: Level) -> &Discriminator<T> {
        &self.critics[level.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomState;
    use crate::siam::{attention, build_pyramid, AttentionMode};

    fn noise_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
        let mut rng = RandomState::new(seed);
        ImageBuffer::from_fn(h, w, 3, |_, _, _| rng.random::<f64>()).unwrap()
    }

    fn pyramid_for(img: &ImageBuffer, depth: usize) -> AttentionPyramid {
        build_pyramid(&attention(img, AttentionMode::Scaled).unwrap(), depth).unwrap()
    }

    #[test]
    fn golden_parameter_counts() {
        // enc 448 + 4640 + 18496, dec 27680 + 6928, head 435
        assert_eq!(GeneratorConfig::default().param_count(), 58_627);
        // down 784 + 8224 + 32832 + 131200, logits 1153
        assert_eq!(DiscriminatorConfig::default().param_count(), 174_193);
        let toy = GeneratorConfig {
            base_channels: 4,
            depth: 1,
            ..Default::default()
        };
        // 3*4*9+4 + 4*3*9+3
        assert_eq!(toy.param_count(), 223);
        assert_eq!(toy.conv_shapes().len(), 2);
    }

    #[test]
    fn zero_head_gives_zero_mask() {
        let gen = Generator::<f32>::new(GeneratorConfig::default(), &mut RandomState::new(0)).unwrap();
        let img = noise_image(20, 13, 1);
        let mask = gen.generate_mask(&img, &pyramid_for(&img, 3)).unwrap();
        assert!(mask.data.iter().all(|&v| v == 0.0));
        assert_eq!(enhance(&img, &mask).unwrap(), img);
    }

    #[test]
    fn mask_is_bounded_and_deterministic() {
        let mut gen = Generator::<f32>::new(GeneratorConfig::default(), &mut RandomState::new(0)).unwrap();
        let mut rng = RandomState::new(5);
        *gen.head_mut() = Conv2d::gaussian(gen.head().shape, 20.0, &mut rng);
        let img = noise_image(16, 16, 2);
        let p = pyramid_for(&img, 3);
        let a = gen.generate_mask(&img, &p).unwrap();
        let b = gen.generate_mask(&img, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(a.data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn mask_resolution_follows_input() {
        let gen = Generator::<f32>::new(GeneratorConfig::default(), &mut RandomState::new(0)).unwrap();
        for side in [16, 32] {
            let img = noise_image(side, side, 3);
            let m = gen.generate_mask(&img, &pyramid_for(&img, 3)).unwrap();
            assert_eq!((m.height, m.width, m.data.len()), (side, side, side * side * 3));
        }
    }

    #[test]
    fn pyramid_depth_mismatch_is_config_error() {
        let gen = Generator::<f32>::new(GeneratorConfig::default(), &mut RandomState::new(0)).unwrap();
        let img = noise_image(8, 8, 3);
        assert!(matches!(
            gen.generate_mask(&img, &pyramid_for(&img, 2)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn enhance_examples() {
        let src = ImageBuffer::filled(2, 2, 3, 0.5).unwrap();
        let mask = Mask {
            height: 2,
            width: 2,
            data: vec![0.25; 12],
        };
        assert!(enhance(&src, &mask).unwrap().data().iter().all(|&v| v == 0.75));
        let src = ImageBuffer::filled(2, 2, 3, 0.9).unwrap();
        let mask = Mask {
            height: 2,
            width: 2,
            data: vec![0.5; 12],
        };
        assert!(enhance(&src, &mask).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(enhance_unclamped(&src, &mask).unwrap().iter().all(|&v| (v - 1.4).abs() < 1e-12));
        let bad = Mask {
            height: 1,
            width: 2,
            data: vec![0.0; 6],
        };
        assert!(enhance(&src, &bad).is_err());
    }

    #[test]
    fn critic_grid_follows_stride() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::default(), &mut RandomState::new(1)).unwrap();
        let img = noise_image(64, 64, 4);
        let grid = d.critic_forward(&img).unwrap();
        assert_eq!((grid.height, grid.width), (4, 4));
        assert!(grid.values.iter().all(|v| v.is_finite()));
        assert_eq!(grid, d.critic_forward(&img).unwrap());
        assert_eq!(DiscriminatorConfig::default().grid_side(64), 4);
    }

    #[test]
    fn critic_batch_preserves_order() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::default(), &mut RandomState::new(1)).unwrap();
        let patches: Vec<_> = (0..3).map(|s| noise_image(32, 32, s)).collect();
        let grids = d.critic_batch(&patches).unwrap();
        assert_eq!(grids.len(), 3);
        for (p, g) in patches.iter().zip(&grids) {
            assert_eq!(&d.critic_forward(p).unwrap(), g);
        }
    }

    #[test]
    fn critic_rejects_small_patch() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::default(), &mut RandomState::new(1)).unwrap();
        match d.critic_forward(&noise_image(8, 8, 0)) {
            Err(Error::Config(msg)) => assert!(msg.contains("16x16"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn zero_attention_zeroes_encoder_features_and_keeps_identity() {
        let gen = Generator::<f64>::new(GeneratorConfig::default(), &mut RandomState::new(0)).unwrap();
        let img = noise_image(12, 12, 7);
        let zero = pyramid_for(&img, 3).constant(0.0).unwrap();
        let (mask, tape) = gen.forward(&image_to_tensor(&img), pyramid_values(&zero)).unwrap();
        assert!(mask.data.iter().all(|&v| v == 0.0));
        // every modulated encoder output is zero, so the bottleneck carries no signal
        for (act, att) in tape.enc_act.iter().zip(&tape.attention) {
            let mut y = act.clone();
            scale_by_map(&mut y, att);
            assert!(y.data.iter().all(|&v| v == 0.0));
        }
        assert_eq!(enhance(&img, &gen.generate_mask(&img, &zero).unwrap()).unwrap(), img);
    }

    fn finite_difference_check(config: GeneratorConfig, side: usize) {
        let mut rng = RandomState::new(11);
        let mut gen = Generator::<f64>::new(config, &mut rng).unwrap();
        *gen.head_mut() = Conv2d::gaussian(gen.head().shape, 1.0, &mut rng);
        let img = noise_image(side, side + 1, 12);
        let att = pyramid_values::<f64>(&pyramid_for(&img, gen.config.depth));
        let input = image_to_tensor::<f64>(&img);
        let probe: Vec<f64> = (0..3 * side * (side + 1)).map(|_| rng.random::<f64>() - 0.5).collect();
        let loss = |g: &Generator<f64>| -> f64 {
            let (m, _) = g.forward(&input, att.clone()).unwrap();
            m.data.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let (mask, tape) = gen.forward(&input, att.clone()).unwrap();
        let mut grads = crate::nn::zero_grads(&gen.convs);
        gen.backward(&tape, &Tensor::from_vec(3, mask.h, mask.w, probe.clone()), &mut grads);
        let h = 1e-5;
        for li in 0..gen.convs.len() {
            let n = gen.convs[li].params.weight.len();
            for wi in (0..n).step_by((n / 25).max(1)) {
                let mut p = gen.clone();
                p.convs[li].params.weight[wi] += h;
                let mut m = gen.clone();
                m.convs[li].params.weight[wi] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let an = grads[li].weight[wi];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs().max(an.abs())),
                    "layer {li} weight {wi}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn generator_backward_matches_finite_differences() {
        finite_difference_check(GeneratorConfig { base_channels: 3, depth: 1, ..Default::default() }, 6);
        finite_difference_check(GeneratorConfig { base_channels: 2, depth: 3, ..Default::default() }, 7);
    }

    #[test]
    fn critic_backward_matches_finite_differences() {
        let mut rng = RandomState::new(3);
        let cfg = DiscriminatorConfig { base_channels: 2, layers: 2 };
        let d = Discriminator::<f64>::new(cfg, &mut rng).unwrap();
        let x = image_to_tensor::<f64>(&noise_image(8, 9, 2));
        let (y, tape) = d.forward(&x).unwrap();
        let probe: Vec<f64> = (0..y.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let loss = |d: &Discriminator<f64>, x: &Tensor<f64>| -> f64 {
            d.forward(x).unwrap().0.data.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let mut grads = crate::nn::zero_grads(&d.convs);
        let gx = d
            .backward(&tape, &Tensor::from_vec(y.c, y.h, y.w, probe.clone()), Some(&mut grads), true)
            .unwrap();
        let h = 1e-6;
        for i in (0..x.len()).step_by(7) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&d, &xp) - loss(&d, &xm)) / (2.0 * h);
            assert!((fd - gx.data[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
        for li in 0..d.convs.len() {
            for wi in (0..d.convs[li].params.weight.len()).step_by(5) {
                let mut p = d.clone();
                p.convs[li].params.weight[wi] += h;
                let mut m = d.clone();
                m.convs[li].params.weight[wi] -= h;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                assert!((fd - grads[li].weight[wi]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}
