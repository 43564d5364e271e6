//! Illumination maps and illumination-aware attention.
//!
//! Illumination is the HSV value channel, `I = max(R, G, B)`. The naive
//! attention is `1 - I`; the scaled attention is `-Att * (Att - 2)`, which
//! equals `1 - I^2` and keeps bright regions (fog, snow) in focus while still
//! weighting dark regions most.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Illumination,
    Naive,
    Scaled,
}

/// Which attention variant guides the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    #[default]
    Scaled,
    Naive,
}

/// Scalar field in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    kind: AttentionKind,
}

impl AttentionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, kind: AttentionKind) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::param(format!(
                "attention map {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("attention value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
            kind,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64, kind: AttentionKind) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], kind)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> AttentionKind {
        self.kind
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Single-channel image view, for writing to disk.
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::new(self.height, self.width, 1, self.values.clone())
            .expect("attention values are validated to [0, 1]")
    }

    fn map(&self, kind: AttentionKind, f: impl Fn(f64) -> f64) -> AttentionMap {
        AttentionMap {
            height: self.height,
            width: self.width,
            // Clamp absorbs last-ulp excursions; the formulas stay in [0, 1] exactly in reals.
            values: self.values.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
            kind,
        }
    }
}

/// Per-pixel `max(R, G, B)`.
pub fn illumination(image: &ImageBuffer) -> Result<AttentionMap> {
    if image.channels() != 3 {
        return Err(Error::param(format!(
            "illumination needs an RGB image, got {} channel(s)",
            image.channels()
        )));
    }
    let values = image
        .data()
        .chunks_exact(3)
        .map(|p| p[0].max(p[1]).max(p[2]))
        .collect();
    AttentionMap::new(image.height(), image.width(), values, AttentionKind::Illumination)
}

fn expect_illumination(map: &AttentionMap) -> Result<()> {
    if map.kind != AttentionKind::Illumination {
        return Err(Error::param(format!(
            "attention is derived from an illumination map, got {:?}",
            map.kind
        )));
    }
    Ok(())
}

/// `Att = 1 - I`.
pub fn naive_attention(illum: &AttentionMap) -> Result<AttentionMap> {
    expect_illumination(illum)?;
    Ok(illum.map(AttentionKind::Naive, |i| 1.0 - i))
}

/// `S_Att = -Att * (Att - 2)` with `Att = 1 - I`.
pub fn scaled_attention(illum: &AttentionMap) -> Result<AttentionMap> {
    expect_illumination(illum)?;
    Ok(illum.map(AttentionKind::Scaled, |i| {
        let att = 1.0 - i;
        -att * (att - 2.0)
    }))
}

/// Attention map of `mode` computed from an RGB image.
pub fn attention(image: &ImageBuffer, mode: AttentionMode) -> Result<AttentionMap> {
    let illum = illumination(image)?;
    match mode {
        AttentionMode::Scaled => scaled_attention(&illum),
        AttentionMode::Naive => naive_attention(&illum),
    }
}

/// Attention maps at successively halved resolutions; level `k` is
/// `ceil(H / 2^k) x ceil(W / 2^k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPyramid {
    levels: Vec<AttentionMap>,
}

impl AttentionPyramid {
    pub fn levels(&self) -> &[AttentionMap] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, k: usize) -> &AttentionMap {
        &self.levels[k]
    }

    /// Replaces every level with a constant, keeping shapes. Used to isolate
    /// the attention path in tests and ablations.
    pub fn constant(&self, value: f64) -> Result<AttentionPyramid> {
        let levels = self
            .levels
            .iter()
            .map(|l| AttentionMap::filled(l.height, l.width, value, l.kind))
            .collect::<Result<_>>()?;
        Ok(AttentionPyramid { levels })
    }
}

/// 2x2 mean-pooling pyramid; odd edges are replicated before pooling.
pub fn build_pyramid(map: &AttentionMap, levels: usize) -> Result<AttentionPyramid> {
    if levels < 1 {
        return Err(Error::param("attention pyramid needs at least one level"));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(map.clone());
    for _ in 1..levels {
        let prev = out.last().expect("pyramid starts non-empty");
        out.push(downsample(prev));
    }
    Ok(AttentionPyramid { levels: out })
}

fn downsample(map: &AttentionMap) -> AttentionMap {
    let h = map.height.div_ceil(2);
    let w = map.width.div_ceil(2);
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        let y0 = 2 * y;
        let y1 = (2 * y + 1).min(map.height - 1);
        for x in 0..w {
            let x0 = 2 * x;
            let x1 = (2 * x + 1).min(map.width - 1);
            let s = map.get(y0, x0) + map.get(y0, x1) + map.get(y1, x0) + map.get(y1, x1);
            values.push((s * 0.25).clamp(0.0, 1.0));
        }
    }
    AttentionMap {
        height: h,
        width: w,
        values,
        kind: map.kind,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn illum_of(v: f64) -> AttentionMap {
        AttentionMap::filled(1, 1, v, AttentionKind::Illumination).unwrap()
    }

    #[test]
    fn illumination_extremes() {
        let black = ImageBuffer::filled(3, 4, 3, 0.0).unwrap();
        let white = ImageBuffer::filled(3, 4, 3, 1.0).unwrap();
        assert!(illumination(&black).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(illumination(&white).unwrap().values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn illumination_is_channel_max() {
        let img = ImageBuffer::new(1, 1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(illumination(&img).unwrap().values(), &[0.5]);
    }

    #[test]
    fn illumination_rejects_gray() {
        let img = ImageBuffer::filled(2, 2, 1, 0.4).unwrap();
        assert!(matches!(illumination(&img), Err(Error::Parameter(_))));
    }

    #[test]
    fn naive_examples() {
        for (i, want) in [(0.0, 1.0), (1.0, 0.0), (0.5, 0.5)] {
            assert_eq!(naive_attention(&illum_of(i)).unwrap().values()[0], want);
        }
    }

    #[test]
    fn scaled_examples() {
        for (i, want) in [(0.0, 1.0), (1.0, 0.0), (0.5, 0.75)] {
            assert_eq!(scaled_attention(&illum_of(i)).unwrap().values()[0], want);
        }
    }

    #[test]
    fn attention_requires_illumination_kind() {
        let naive = naive_attention(&illum_of(0.3)).unwrap();
        assert!(matches!(scaled_attention(&naive), Err(Error::Parameter(_))));
        assert!(matches!(naive_attention(&naive), Err(Error::Parameter(_))));
    }

    #[test]
    fn pyramid_of_constant() {
        let m = AttentionMap::filled(8, 6, 0.75, AttentionKind::Scaled).unwrap();
        let p = build_pyramid(&m, 3).unwrap();
        let dims: Vec<_> = p.levels().iter().map(|l| (l.height(), l.width())).collect();
        assert_eq!(dims, vec![(8, 6), (4, 3), (2, 2)]);
        for l in p.levels() {
            assert!(l.values().iter().all(|&v| v == 0.75));
        }
    }

    #[test]
    fn pyramid_mean_of_checkerboard() {
        let m = AttentionMap::new(2, 2, vec![0.0, 1.0, 1.0, 0.0], AttentionKind::Scaled).unwrap();
        let p = build_pyramid(&m, 2).unwrap();
        assert_eq!(p.level(1).values(), &[0.5]);
    }

    #[test]
    fn pyramid_degenerate_and_odd() {
        let m = AttentionMap::filled(1, 1, 0.3, AttentionKind::Scaled).unwrap();
        let p = build_pyramid(&m, 2).unwrap();
        assert_eq!(p.level(0), p.level(1));

        // 3x1 column [0, 0.2, 1]: second pair replicates the last row.
        let m = AttentionMap::new(3, 1, vec![0.0, 0.2, 1.0], AttentionKind::Naive).unwrap();
        let p = build_pyramid(&m, 2).unwrap();
        assert_eq!(p.level(1).values(), &[0.1, 1.0]);
        assert!(build_pyramid(&m, 0).is_err());
    }
}
