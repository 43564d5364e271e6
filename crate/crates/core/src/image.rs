//! Image containers, patch geometry and file I/O.

use std::fmt;
use std::path::Path;

use image::imageops::FilterType;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Edge, Error, Result};
use crate::rng::RandomState;

/// Floating-point image with values in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Axis-aligned rectangle inside a parent image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRegion {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl fmt::Display for PatchRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(top={}, left={}, {}x{})",
            self.top, self.left, self.height, self.width
        )
    }
}

impl PatchRegion {
    pub const fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    pub const fn square(top: usize, left: usize, side: usize) -> Self {
        Self::new(top, left, side, side)
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, other: &PatchRegion) -> bool {
        other.top >= self.top
            && other.left >= self.left
            && other.bottom() <= self.bottom()
            && other.right() <= self.right()
    }

    /// Interprets `self` as relative to `parent` and returns absolute coordinates.
    pub fn within(&self, parent: &PatchRegion) -> PatchRegion {
        PatchRegion::new(
            parent.top + self.top,
            parent.left + self.left,
            self.height,
            self.width,
        )
    }

    /// Checks that the region is non-empty and fits in a `height x width` parent.
    pub fn check_inside(&self, height: usize, width: usize) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::param(format!("region {self} is empty")));
        }
        if self.bottom() > height {
            return Err(Error::Bounds {
                region: *self,
                edge: Edge::Bottom,
                height,
                width,
            });
        }
        if self.right() > width {
            return Err(Error::Bounds {
                region: *self,
                edge: Edge::Right,
                height,
                width,
            });
        }
        Ok(())
    }
}

/// Centered sub-region covering `fraction` of the parent's area.
///
/// Each side is scaled by `sqrt(fraction)` and floored (minimum 1). When the
/// leftover margin is odd the extra pixel goes to the top/left side.
pub fn center_crop_region(parent: PatchRegion, fraction: f64) -> Result<PatchRegion> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param(format!(
            "center crop fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let scale = fraction.sqrt();
    // The epsilon absorbs sqrt rounding for fractions like 1/9.
    let side = |len: usize| (((len as f64) * scale + 1e-9).floor() as usize).clamp(1, len);
    let h = side(parent.height);
    let w = side(parent.width);
    let top = parent.top + (parent.height - h).div_ceil(2);
    let left = parent.left + (parent.width - w).div_ceil(2);
    Ok(PatchRegion::new(top, left, h, w))
}

/// Uniformly random placement of a `patch_h x patch_w` window in an image.
pub fn random_region(
    image_h: usize,
    image_w: usize,
    patch_h: usize,
    patch_w: usize,
    rng: &mut RandomState,
) -> Result<PatchRegion> {
    if patch_h == 0 || patch_w == 0 {
        return Err(Error::param("patch dimensions must be at least 1"));
    }
    if patch_h > image_h || patch_w > image_w {
        return Err(Error::param(format!(
            "patch {patch_h}x{patch_w} does not fit in image {image_h}x{image_w}"
        )));
    }
    let top = rng.random_range(0..=image_h - patch_h);
    let left = rng.random_range(0..=image_w - patch_w);
    Ok(PatchRegion::new(top, left, patch_h, patch_w))
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::param(format!(
                "images carry 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::param(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Constant image.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn full_region(&self) -> PatchRegion {
        PatchRegion::new(0, 0, self.height, self.width)
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn crop(&self, region: PatchRegion) -> Result<ImageBuffer> {
        region.check_inside(self.height, self.width)?;
        let row = region.width * self.channels;
        let mut data = Vec::with_capacity(region.height * row);
        for y in region.top..region.bottom() {
            let start = (y * self.width + region.left) * self.channels;
            data.extend_from_slice(&self.data[start..start + row]);
        }
        Ok(ImageBuffer {
            height: region.height,
            width: region.width,
            channels: self.channels,
            data,
        })
    }

    /// Rec. 601 luma plane.
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.clone(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        ImageBuffer {
            height: h as usize,
            width: w as usize,
            channels: 3,
            data,
        }
    }

    /// Clamps to `[0, 1]` and quantizes with round-half-up.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::data(path, e))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = (self.width as u32, self.height as u32);
        let bytes = self.to_u8();
        let res = if self.channels == 3 {
            image::RgbImage::from_raw(w, h, bytes).map(|i| i.save(path))
        } else {
            image::GrayImage::from_raw(w, h, bytes).map(|i| i.save(path))
        };
        match res {
            Some(Ok(())) => Ok(()),
            Some(Err(image::ImageError::IoError(e))) => Err(Error::Io(e)),
            Some(Err(e)) => Err(Error::data(path, e)),
            None => unreachable!("buffer length is validated at construction"),
        }
    }

    /// Bicubic upscale so that the shorter side is at least `min_side`,
    /// preserving aspect ratio. Returns a clone when already large enough.
    pub fn ensure_min_side(&self, min_side: usize) -> ImageBuffer {
        let short = self.height.min(self.width);
        if short >= min_side || self.channels != 3 {
            return self.clone();
        }
        let scale = min_side as f64 / short as f64;
        let nh = ((self.height as f64 * scale).ceil() as usize).max(min_side);
        let nw = ((self.width as f64 * scale).ceil() as usize).max(min_side);
        let raw: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        let src = image::Rgb32FImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length is validated at construction");
        let out = image::imageops::resize(&src, nw as u32, nh as u32, FilterType::CatmullRom);
        ImageBuffer {
            height: nh,
            width: nw,
            channels: 3,
            data: out
                .into_raw()
                .into_iter()
                .map(|v| f64::from(v).clamp(0.0, 1.0))
                .collect(),
        }
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}
