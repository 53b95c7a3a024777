//! Separable orthonormal 2-D Haar analysis and synthesis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::GrayImage;
use crate::texfeat::stats::StatsSummary;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveletConfig {
    pub levels: usize,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self { levels: 3 }
    }
}

/// Detail subbands of one decomposition level. `orig_w`/`orig_h` record
/// the level's input size before replicate-padding to even, so synthesis
/// can crop back.
#[derive(Debug, Clone)]
pub struct WaveletLevel<F> {
    pub lh: GrayImage<F>,
    pub hl: GrayImage<F>,
    pub hh: GrayImage<F>,
    pub orig_w: usize,
    pub orig_h: usize,
}

/// Haar pyramid: per-level details (index 0 is the finest level) plus the
/// final approximation subband.
#[derive(Debug, Clone)]
pub struct WaveletPyramid<F> {
    pub levels: Vec<WaveletLevel<F>>,
    pub approx: GrayImage<F>,
}

fn pad_to_even<F: Real>(img: &GrayImage<F>) -> GrayImage<F> {
    let w = img.width() + img.width() % 2;
    let h = img.height() + img.height() % 2;
    if w == img.width() && h == img.height() {
        return img.clone();
    }
    GrayImage::from_fn(w, h, |x, y| {
        img.get(x.min(img.width() - 1), y.min(img.height() - 1))
    })
}

/// One analysis level: low-pass `(a+b)/√2`, high-pass `(a−b)/√2` applied
/// separably. Input is replicate-padded to even first.
fn analyze_level<F: Real>(img: &GrayImage<F>) -> (GrayImage<F>, WaveletLevel<F>) {
    let orig_w = img.width();
    let orig_h = img.height();
    let padded = pad_to_even(img);
    let (w, h) = (padded.width(), padded.height());
    let (hw, hh_dim) = (w / 2, h / 2);
    let inv_sqrt2 = F::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);

    // rows
    let mut low = GrayImage::constant(hw, h, F::zero());
    let mut high = GrayImage::constant(hw, h, F::zero());
    for y in 0..h {
        for x in 0..hw {
            let a = padded.get(2 * x, y);
            let b = padded.get(2 * x + 1, y);
            low.set(x, y, (a + b) * inv_sqrt2);
            high.set(x, y, (a - b) * inv_sqrt2);
        }
    }
    // columns
    let mut ll = GrayImage::constant(hw, hh_dim, F::zero());
    let mut lh = GrayImage::constant(hw, hh_dim, F::zero());
    let mut hl = GrayImage::constant(hw, hh_dim, F::zero());
    let mut hh = GrayImage::constant(hw, hh_dim, F::zero());
    for y in 0..hh_dim {
        for x in 0..hw {
            let la = low.get(x, 2 * y);
            let lb = low.get(x, 2 * y + 1);
            ll.set(x, y, (la + lb) * inv_sqrt2);
            lh.set(x, y, (la - lb) * inv_sqrt2);
            let ha = high.get(x, 2 * y);
            let hb = high.get(x, 2 * y + 1);
            hl.set(x, y, (ha + hb) * inv_sqrt2);
            hh.set(x, y, (ha - hb) * inv_sqrt2);
        }
    }
    (
        ll,
        WaveletLevel {
            lh,
            hl,
            hh,
            orig_w,
            orig_h,
        },
    )
}

fn synthesize_level<F: Real>(approx: &GrayImage<F>, level: &WaveletLevel<F>) -> GrayImage<F> {
    let (hw, hh_dim) = (approx.width(), approx.height());
    let inv_sqrt2 = F::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);

    // columns first (inverse of the analysis order)
    let mut low = GrayImage::constant(hw, hh_dim * 2, F::zero());
    let mut high = GrayImage::constant(hw, hh_dim * 2, F::zero());
    for y in 0..hh_dim {
        for x in 0..hw {
            let ll = approx.get(x, y);
            let lh = level.lh.get(x, y);
            low.set(x, 2 * y, (ll + lh) * inv_sqrt2);
            low.set(x, 2 * y + 1, (ll - lh) * inv_sqrt2);
            let hl = level.hl.get(x, y);
            let hh = level.hh.get(x, y);
            high.set(x, 2 * y, (hl + hh) * inv_sqrt2);
            high.set(x, 2 * y + 1, (hl - hh) * inv_sqrt2);
        }
    }
    let mut out = GrayImage::constant(hw * 2, hh_dim * 2, F::zero());
    for y in 0..hh_dim * 2 {
        for x in 0..hw {
            let l = low.get(x, y);
            let h = high.get(x, y);
            out.set(2 * x, y, (l + h) * inv_sqrt2);
            out.set(2 * x + 1, y, (l - h) * inv_sqrt2);
        }
    }
    // crop away the replicate padding of this level
    out.crop(0, 0, level.orig_w, level.orig_h)
        .expect("synthesis crop within bounds")
}

/// Forward Haar pyramid of the requested depth, recursing on the
/// approximation subband.
pub fn haar_dwt2<F: Real>(img: &GrayImage<F>, levels: usize) -> Result<WaveletPyramid<F>> {
    if levels == 0 {
        return Err(Error::Argument("wavelet depth must be >= 1".into()));
    }
    let min_dim = 1usize << levels;
    if img.width() < min_dim || img.height() < min_dim {
        return Err(Error::Argument(format!(
            "image {}x{} supports fewer than {} wavelet levels",
            img.width(),
            img.height(),
            levels
        )));
    }
    let mut approx = img.clone();
    let mut out_levels = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (next, level) = analyze_level(&approx);
        out_levels.push(level);
        approx = next;
    }
    Ok(WaveletPyramid {
        levels: out_levels,
        approx,
    })
}

/// Inverse of [`haar_dwt2`]; exact on the original raster.
pub fn haar_idwt2<F: Real>(pyramid: &WaveletPyramid<F>) -> GrayImage<F> {
    let mut approx = pyramid.approx.clone();
    for level in pyramid.levels.iter().rev() {
        approx = synthesize_level(&approx, level);
    }
    approx
}

/// Statistical summary of each detail subband (LH, HL, HH) at each level,
/// finest level first: `3 · levels · 6` values.
pub fn wavelet_features<F: Real>(img: &GrayImage<F>, cfg: &WaveletConfig) -> Result<Vec<F>> {
    let pyramid = haar_dwt2(img, cfg.levels)?;
    let mut out = Vec::with_capacity(cfg.levels * 18);
    for level in &pyramid.levels {
        for band in [&level.lh, &level.hl, &level.hh] {
            out.extend(StatsSummary::of(band.pixels()).values());
        }
    }
    Ok(out)
}

pub fn wavelet_feature_names(cfg: &WaveletConfig) -> Vec<String> {
    let mut names = Vec::new();
    for level in 1..=cfg.levels {
        for band in ["lh", "hl", "hh"] {
            for s in StatsSummary::<f64>::NAMES {
                names.push(format!("wav_l{}_{}_{}", level, band, s));
            }
        }
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn energy(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum()
    }

    fn pyramid_energy(p: &WaveletPyramid<f64>) -> f64 {
        let mut e = energy(p.approx.pixels());
        for l in &p.levels {
            e += energy(l.lh.pixels()) + energy(l.hl.pixels()) + energy(l.hh.pixels());
        }
        e
    }

    #[test]
    fn two_by_two_hand_computed() {
        let (a, b, c, d) = (3.0, 7.0, 11.0, 5.0);
        let img = GrayImage::new(2, 2, vec![a, b, c, d]).unwrap();
        let p = haar_dwt2(&img, 1).unwrap();
        assert_relative_eq!(p.approx.get(0, 0), (a + b + c + d) / 2.0);
        assert_relative_eq!(p.levels[0].hl.get(0, 0), (a - b + c - d) / 2.0);
        assert_relative_eq!(p.levels[0].lh.get(0, 0), (a + b - c - d) / 2.0);
        assert_relative_eq!(p.levels[0].hh.get(0, 0), (a - b - c + d) / 2.0);
    }

    #[test]
    fn constant_image_has_zero_details() {
        let img = GrayImage::constant(16, 16, 42.0f64);
        let p = haar_dwt2(&img, 3).unwrap();
        for l in &p.levels {
            assert!(l.lh.pixels().iter().all(|&v| v.abs() < 1e-12));
            assert!(l.hl.pixels().iter().all(|&v| v.abs() < 1e-12));
            assert!(l.hh.pixels().iter().all(|&v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn parseval_on_even_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let img = GrayImage::from_fn(16, 12, |_, _| rng.gen_range(0..256) as f64);
            let p = haar_dwt2(&img, 2).unwrap();
            let e_img = energy(img.pixels());
            let e_pyr = pyramid_energy(&p);
            assert_relative_eq!(e_img, e_pyr, max_relative = 1e-6);
        }
    }

    #[test]
    fn perfect_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (w, h) in [(16, 16), (15, 13), (20, 9)] {
            let img = GrayImage::from_fn(w, h, |_, _| rng.gen_range(0..256) as f64);
            let p = haar_dwt2(&img, 3).unwrap();
            let back = haar_idwt2(&p);
            assert_eq!((back.width(), back.height()), (w, h));
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                assert_relative_eq!(a, b, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn feature_count() {
        let img = GrayImage::constant(32, 32, 5.0f64);
        let cfg = WaveletConfig { levels: 3 };
        let feats: Vec<f64> = wavelet_features(&img, &cfg).unwrap();
        assert_eq!(feats.len(), 54);
        assert!(feats.iter().all(|&v| v == 0.0));
        assert_eq!(wavelet_feature_names(&cfg).len(), 54);
    }

    #[test]
    fn vertical_stripes_put_energy_in_hl() {
        let img = GrayImage::from_fn(32, 32, |x, _| if x % 2 == 0 { 0.0 } else { 255.0 });
        let p = haar_dwt2(&img, 1).unwrap();
        let e_hl = energy(p.levels[0].hl.pixels());
        let e_lh = energy(p.levels[0].lh.pixels());
        assert!(e_hl > 10.0 * e_lh.max(1e-12));
    }

    #[test]
    fn too_small_image_rejected() {
        let img = GrayImage::constant(4, 4, 0.0f64);
        assert!(haar_dwt2(&img, 3).is_err());
    }
}
