//! Full-reference quality metrics.
//!
//! SSIM is computed on Rec. 601 luma with an 11-tap Gaussian window
//! (sigma 1.5) over valid window positions, with `C1 = 0.01^2` and
//! `C2 = 0.03^2` for a unit dynamic range. Images smaller than 11 pixels on a
//! side use the largest odd window that fits. PSNR is taken over all RGB
//! samples jointly and capped at [`PSNR_CAP`] for identical images.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const PSNR_CAP: f64 = 100.0;

fn check_shapes(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::param(format!(
            "images differ in shape: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

/// Normalized Gaussian taps of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Window side used for an `h x w` image.
pub fn ssim_window(h: usize, w: usize) -> usize {
    let fit = h.min(w).min(SSIM_WINDOW);
    if fit.is_multiple_of(2) {
        fit - 1
    } else {
        fit
    }
}

/// Valid-mode separable filtering of a row-major plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity of two images (luma).
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = (a.height(), a.width());
    let la = a.luma();
    let lb = b.luma();
    let kernel = gaussian_kernel(ssim_window(h, w), SSIM_SIGMA);
    let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&la, h, w, &kernel);
    let mu_b = filter_valid(&lb, h, w, &kernel);
    let e_aa = filter_valid(&sq(&la, &la), h, w, &kernel);
    let e_bb = filter_valid(&sq(&lb, &lb), h, w, &kernel);
    let e_ab = filter_valid(&sq(&la, &lb), h, w, &kernel);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB for unit peak, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / e).log10()).min(PSNR_CAP))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub ssim: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
        self.images.push(ImageMetrics {
            name: name.into(),
            ssim: ssim(a, b)?,
            psnr: psnr(a, b)?,
        });
        Ok(())
    }

    pub fn mean_ssim(&self) -> f64 {
        self.images.iter().map(|m| m.ssim).sum::<f64>() / self.images.len().max(1) as f64
    }

    pub fn mean_psnr(&self) -> f64 {
        self.images.iter().map(|m| m.psnr).sum::<f64>() / self.images.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,ssim,psnr\n");
        for m in &self.images {
            let _ = writeln!(s, "{},{:.6},{:.4}", m.name, m.ssim, m.psnr);
        }
        let _ = writeln!(s, "mean,{:.6},{:.4}", self.mean_ssim(), self.mean_psnr());
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.images.iter().map(|m| m.name.len()).max().unwrap_or(4).max(5);
        let mut s = format!("{:<width$}  {:>8}  {:>9}\n", "image", "SSIM", "PSNR(dB)");
        for m in &self.images {
            let _ = writeln!(s, "{:<width$}  {:>8.4}  {:>9.3}", m.name, m.ssim, m.psnr);
        }
        let _ = writeln!(s, "{:<width$}  {:>8.4}  {:>9.3}", "mean", self.mean_ssim(), self.mean_psnr());
        s
    }
}
