//! Adversarial objectives.
//!
//! The scene level uses a relativistic least-squares objective: each logit is
//! compared against the mean logit of the opposing batch. Object and texture
//! levels use plain least-squares targets (real 1, fake 0). Expectations are
//! means over every logit of every patch in the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Level;
use crate::nn::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub scene: f64,
    pub object: f64,
    pub texture: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            scene: 1.0,
            object: 1.0,
            texture: 1.0,
        }
    }
}

impl LossWeights {
    pub fn get(&self, level: Level) -> f64 {
        match level {
            Level::Scene => self.scene,
            Level::Object => self.object,
            Level::Texture => self.texture,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for level in Level::ALL {
            let w = self.get(level);
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!(
                    "{level} loss weight must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Generator and discriminator loss at one level.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelLosses {
    pub generator: f64,
    pub discriminator: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub scene: LevelLosses,
    pub object: LevelLosses,
    pub texture: LevelLosses,
    pub total: f64,
}

impl LossReport {
    pub fn level(&self, level: Level) -> LevelLosses {
        match level {
            Level::Scene => self.scene,
            Level::Object => self.object,
            Level::Texture => self.texture,
        }
    }

    pub fn level_mut(&mut self, level: Level) -> &mut LevelLosses {
        match level {
            Level::Scene => &mut self.scene,
            Level::Object => &mut self.object,
            Level::Texture => &mut self.texture,
        }
    }

    /// Recomputes `total` from the six parts.
    pub fn finalize(&mut self, weights: &LossWeights) -> Result<()> {
        self.total = total_loss(self, weights)?;
        Ok(())
    }

    /// One comma-free JSON object per line.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("loss report serializes")
    }
}

/// `sum_l weight_l * (L_G^l + L_D^l)`.
pub fn total_loss(report: &LossReport, weights: &LossWeights) -> Result<f64> {
    let mut total = 0.0;
    for level in Level::ALL {
        let parts = report.level(level);
        for (name, v) in [("generator", parts.generator), ("discriminator", parts.discriminator)] {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("{level} {name} loss is {v}")));
            }
        }
        total += weights.get(level) * (parts.generator + parts.discriminator);
    }
    Ok(total)
}

fn non_empty<T>(name: &str, xs: &[T]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::param(format!("{name} logit batch is empty")));
    }
    Ok(())
}

fn mean<T: Real>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::from_usize(xs.len()).expect("count fits")
}

/// `a - mean(b)` elementwise: how much more realistic each `a` looks than the
/// average `b`.
pub fn relativistic_pair<T: Real>(logits_a: &[T], logits_b: &[T]) -> Result<Vec<T>> {
    non_empty("first", logits_a)?;
    non_empty("second", logits_b)?;
    let mb = mean(logits_b);
    Ok(logits_a.iter().map(|&a| a - mb).collect())
}

/// A loss value with its gradients with respect to both logit batches.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms<T> {
    pub value: T,
    pub d_real: Vec<T>,
    pub d_fake: Vec<T>,
}

/// `mean_i (x_i - mean(y) - c)^2` and its gradients `(d/dx, d/dy)`.
fn relativistic_term<T: Real>(x: &[T], y: &[T], c: T) -> (T, Vec<T>, Vec<T>) {
    let two = T::lit(2.0);
    let nx = T::from_usize(x.len()).expect("count fits");
    let ny = T::from_usize(y.len()).expect("count fits");
    let my = mean(y);
    let resid: Vec<T> = x.iter().map(|&v| v - my - c).collect();
    let value = resid.iter().map(|&r| r * r).sum::<T>() / nx;
    let dx = resid.iter().map(|&r| two * r / nx).collect();
    let gy = -two * mean(&resid) / ny;
    (value, dx, vec![gy; y.len()])
}

fn add_into<T: Real>(acc: &mut [T], other: &[T]) {
    for (a, &b) in acc.iter_mut().zip(other) {
        *a = *a + b;
    }
}

/// `E[(rel(real, fake) - 1)^2] + E[rel(fake, real)^2]`.
pub fn scene_discriminator_loss<T: Real>(real: &[T], fake: &[T]) -> Result<LossTerms<T>> {
    non_empty("real", real)?;
    non_empty("fake", fake)?;
    let (v1, mut d_real, mut d_fake) = relativistic_term(real, fake, T::one());
    let (v2, d_fake2, d_real2) = relativistic_term(fake, real, T::zero());
    add_into(&mut d_real, &d_real2);
    add_into(&mut d_fake, &d_fake2);
    Ok(LossTerms {
        value: v1 + v2,
        d_real,
        d_fake,
    })
}

/// `E[(rel(fake, real) - 1)^2] + E[rel(real, fake)^2]`.
pub fn scene_generator_loss<T: Real>(real: &[T], fake: &[T]) -> Result<LossTerms<T>> {
    non_empty("real", real)?;
    non_empty("fake", fake)?;
    let (v1, mut d_fake, mut d_real) = relativistic_term(fake, real, T::one());
    let (v2, d_real2, d_fake2) = relativistic_term(real, fake, T::zero());
    add_into(&mut d_real, &d_real2);
    add_into(&mut d_fake, &d_fake2);
    Ok(LossTerms {
        value: v1 + v2,
        d_real,
        d_fake,
    })
}

/// `mean((x - target)^2)` and its gradient.
fn squared_target<T: Real>(x: &[T], target: T) -> (T, Vec<T>) {
    let n = T::from_usize(x.len()).expect("count fits");
    let two = T::lit(2.0);
    let value = x.iter().map(|&v| (v - target) * (v - target)).sum::<T>() / n;
    (value, x.iter().map(|&v| two * (v - target) / n).collect())
}

/// `E[(D(real) - 1)^2] + E[D(fake)^2]`.
pub fn lsgan_discriminator_loss<T: Real>(real: &[T], fake: &[T]) -> Result<LossTerms<T>> {
    non_empty("real", real)?;
    non_empty("fake", fake)?;
    let (vr, d_real) = squared_target(real, T::one());
    let (vf, d_fake) = squared_target(fake, T::zero());
    Ok(LossTerms {
        value: vr + vf,
        d_real,
        d_fake,
    })
}

/// `E[(D(fake) - 1)^2]`; independent of the real logits.
pub fn lsgan_generator_loss<T: Real>(real: &[T], fake: &[T]) -> Result<LossTerms<T>> {
    non_empty("real", real)?;
    non_empty("fake", fake)?;
    let (value, d_fake) = squared_target(fake, T::one());
    Ok(LossTerms {
        value,
        d_real: vec![T::zero(); real.len()],
        d_fake,
    })
}

/// `(L_D, L_G)` at the scene level.
pub fn scene_losses(real: &[f64], fake: &[f64]) -> Result<(f64, f64)> {
    Ok((
        scene_discriminator_loss(real, fake)?.value,
        scene_generator_loss(real, fake)?.value,
    ))
}

/// `(L_D, L_G)` at the object or texture level.
pub fn lsgan_losses(level: Level, real: &[f64], fake: &[f64]) -> Result<(f64, f64)> {
    if level == Level::Scene {
        return Err(Error::param("the scene level uses the relativistic objective"));
    }
    Ok((
        lsgan_discriminator_loss(real, fake)?.value,
        lsgan_generator_loss(real, fake)?.value,
    ))
}

/// Discriminator-side objective for `level`.
pub fn discriminator_loss<T: Real>(level: Level, real: &[T], fake: &[T]) -> Result<LossTerms<T>> {
    match level {
        Level::Scene => scene_discriminator_loss(real, fake),
        Level::Object | Level::Texture => lsgan_discriminator_loss(real, fake),
    }
}

/// Generator-side objective for `level`.
pub fn generator_loss<T: Real>(level: Level, real: &[T], fake: &[T]) -> Result<LossTerms<T>> {
    match level {
        Level::Scene => scene_generator_loss(real, fake),
        Level::Object | Level::Texture => lsgan_generator_loss(real, fake),
    }
}
