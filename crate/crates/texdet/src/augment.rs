//! Augmented input channels: background removal via top-K similar
//! horizontal slices, wavelet reconstruction, and 3-channel composition
//! for external detectors.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{normalize_luminance, GrayImage};
use crate::texfeat::wavelet::haar_dwt2;
use crate::texfeat::haar_idwt2;
use crate::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Band heights in pixels; the passes are fused by mean.
    pub slice_heights: Vec<usize>,
    /// How many most-similar bands are averaged per query band.
    pub k: usize,
    /// Bands within this index distance of the query are never matched,
    /// so a defect band cannot cancel against its immediate neighbors.
    pub exclusion: usize,
    /// Residual enhancement power.
    pub exponent: f64,
    pub wavelet_levels: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            slice_heights: vec![8, 16, 32],
            k: 5,
            exclusion: 1,
            exponent: 2.0,
            wavelet_levels: 3,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Argument("slice neighbor count k must be >= 1".into()));
        }
        if self.slice_heights.is_empty() || self.slice_heights.contains(&0) {
            return Err(Error::Argument(
                "slice heights must be a non-empty list of positive heights".into(),
            ));
        }
        if self.exponent <= 0.0 {
            return Err(Error::Argument("enhancement exponent must be positive".into()));
        }
        if self.wavelet_levels == 0 {
            return Err(Error::Argument("wavelet depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// Consecutive horizontal bands of height `h`; the last band may be
/// shorter.
fn band_ranges(height: usize, h: usize) -> Vec<(usize, usize)> {
    (0..height.div_ceil(h))
        .map(|i| (i * h, h.min(height - i * h)))
        .collect()
}

/// Mean squared difference over the overlapping rows of two bands.
fn band_mse<F: Real>(img: &GrayImage<F>, a: (usize, usize), b: (usize, usize)) -> f64 {
    let rows = a.1.min(b.1);
    let mut sum = 0.0;
    for r in 0..rows {
        for x in 0..img.width() {
            let d = img.get(x, a.0 + r).to_f64_lossy() - img.get(x, b.0 + r).to_f64_lossy();
            sum += d * d;
        }
    }
    sum / (rows * img.width()) as f64
}

fn background_pass<F: Real>(img: &GrayImage<F>, h: usize, cfg: &AugmentConfig) -> Vec<f64> {
    let bands = band_ranges(img.height(), h);
    // bands are independent and write disjoint row ranges
    let per_band: Vec<Vec<f64>> = bands
        .par_iter()
        .enumerate()
        .map(|(i, &band)| {
            let mut candidates: Vec<usize> = (0..bands.len())
                .filter(|&j| j.abs_diff(i) > cfg.exclusion)
                .collect();
            if candidates.is_empty() {
                // degenerate band count: fall back to excluding only the query
                candidates = (0..bands.len()).filter(|&j| j != i).collect();
            }
            let mut scored: Vec<(f64, usize)> = candidates
                .into_iter()
                .map(|j| (band_mse(img, band, bands[j]), j))
                .collect();
            scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let chosen: Vec<(usize, usize)> = scored
                .iter()
                .take(cfg.k)
                .map(|&(_, j)| bands[j])
                .collect();
            let mut rows = vec![0.0f64; band.1 * img.width()];
            for r in 0..band.1 {
                for x in 0..img.width() {
                    let mean: f64 = chosen
                        .iter()
                        .map(|&(start, len)| img.get(x, start + r.min(len - 1)).to_f64_lossy())
                        .sum::<f64>()
                        / chosen.len() as f64;
                    let v = img.get(x, band.0 + r).to_f64_lossy() - mean;
                    rows[r * img.width() + x] = v.max(0.0);
                }
            }
            rows
        })
        .collect();
    let mut residual = Vec::with_capacity(img.width() * img.height());
    for rows in per_band {
        residual.extend(rows);
    }
    // normalize to [0,1], enhance, rescale to [0,255]; a peak at rounding
    // scale means the bands cancelled and must not be amplified
    let peak = residual.iter().cloned().fold(0.0f64, f64::max);
    if peak > 1e-9 {
        for v in &mut residual {
            *v = (*v / peak).powf(cfg.exponent) * 255.0;
        }
    } else {
        residual.fill(0.0);
    }
    residual
}

/// Subtracts, per horizontal band, the mean of its top-K most similar
/// bands; the rectified, enhanced residuals of all configured band
/// heights are fused by per-pixel mean.
pub fn remove_background<F: Real>(img: &GrayImage<F>, cfg: &AugmentConfig) -> Result<GrayImage<F>> {
    cfg.validate()?;
    for &h in &cfg.slice_heights {
        if img.height() < h * (cfg.k + 1) {
            return Err(Error::Argument(format!(
                "image height {} is too short for {}-pixel slices with k = {}",
                img.height(),
                h,
                cfg.k
            )));
        }
    }
    let passes: Vec<Vec<f64>> = cfg
        .slice_heights
        .par_iter()
        .map(|&h| background_pass(img, h, cfg))
        .collect();
    let n = cfg.slice_heights.len() as f64;
    GrayImage::new(
        img.width(),
        img.height(),
        (0..img.width() * img.height())
            .map(|i| F::from_f64_lossy(passes.iter().map(|p| p[i]).sum::<f64>() / n))
            .collect(),
    )
}

/// Haar decomposition with the approximation zeroed; the coarsest detail
/// level is kept at full strength and each finer level is attenuated by
/// a further 0.5. Inverse transform, magnitude, min-max rescale to
/// `[0, 255]`.
pub fn wavelet_reconstruction<F: Real>(img: &GrayImage<F>, levels: usize) -> Result<GrayImage<F>> {
    let mut pyramid = haar_dwt2(img, levels)?;
    pyramid.approx =
        GrayImage::constant(pyramid.approx.width(), pyramid.approx.height(), F::zero());
    let n = pyramid.levels.len();
    for (i, level) in pyramid.levels.iter_mut().enumerate() {
        // index 0 is the finest level
        let factor = F::from_f64_lossy(0.5f64.powi((n - 1 - i) as i32));
        for band in [&mut level.lh, &mut level.hl, &mut level.hh] {
            *band = GrayImage::from_fn(band.width(), band.height(), |x, y| band.get(x, y) * factor);
        }
    }
    let recon = haar_idwt2(&pyramid);
    let magnitude = GrayImage::from_fn(recon.width(), recon.height(), |x, y| recon.get(x, y).abs());
    Ok(normalize_luminance(&magnitude))
}

/// The three augmented channels: normalized original, background
/// removal, wavelet reconstruction. All on the `[0, 255]` scale.
pub fn augment_channels<F: Real>(
    img: &GrayImage<F>,
    cfg: &AugmentConfig,
) -> Result<[GrayImage<F>; 3]> {
    Ok([
        normalize_luminance(img),
        remove_background(img, cfg)?,
        wavelet_reconstruction(img, cfg.wavelet_levels)?,
    ])
}

/// Writes the 3-channel composite as an 8-bit RGB PNG.
pub fn compose_channels<F: Real>(img: &GrayImage<F>, cfg: &AugmentConfig, out: &Path) -> Result<()> {
    let channels = augment_channels(img, cfg)?;
    let mut rgb = image::RgbImage::new(img.width() as u32, img.height() as u32);
    for (x, y, px) in rgb.enumerate_pixels_mut() {
        for (c, chan) in channels.iter().enumerate() {
            px.0[c] = chan
                .get(x as usize, y as usize)
                .to_f64_lossy()
                .round()
                .clamp(0.0, 255.0) as u8;
        }
    }
    rgb.save(out).map_err(|e| Error::Format {
        path: out.to_path_buf(),
        reason: e.to_string(),
    })
}
