//! Gray-level co-occurrence matrices and the five Haralick statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::GrayImage;
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlcmConfig {
    pub distances: Vec<usize>,
    /// Angles in radians; the displacement is
    /// `(round(d·cos θ), round(−d·sin θ))`.
    pub angles: Vec<f64>,
    pub levels: usize,
    pub symmetric: bool,
    pub normalized: bool,
}

impl Default for GlcmConfig {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            distances: vec![1, 3, 5],
            angles: vec![0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0],
            levels: 32,
            symmetric: true,
            normalized: true,
        }
    }
}

impl GlcmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Argument("GLCM needs at least 2 gray levels".into()));
        }
        if self.distances.iter().any(|&d| d == 0) {
            return Err(Error::Argument("GLCM distances must be >= 1".into()));
        }
        if self.distances.is_empty() || self.angles.is_empty() {
            return Err(Error::Argument(
                "GLCM needs at least one distance and one angle".into(),
            ));
        }
        Ok(())
    }
}

/// Quantizes the image to `levels` gray levels by min-max binning. A
/// constant image collapses to level 0.
pub fn quantize<F: Real>(img: &GrayImage<F>, levels: usize) -> Vec<usize> {
    let (lo, hi) = img.min_max();
    let lo = lo.to_f64_lossy();
    let hi = hi.to_f64_lossy();
    if hi <= lo {
        return vec![0; img.pixels().len()];
    }
    let scale = levels as f64 / (hi - lo);
    img.pixels()
        .iter()
        .map(|&p| {
            let q = ((p.to_f64_lossy() - lo) * scale) as usize;
            q.min(levels - 1)
        })
        .collect()
}

/// Co-occurrence matrix of quantized pixel pairs at one displacement.
pub fn glcm<F: Real>(
    img: &GrayImage<F>,
    distance: usize,
    angle: f64,
    cfg: &GlcmConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if distance == 0 {
        return Err(Error::Argument("GLCM distance must be >= 1".into()));
    }
    let dx = (distance as f64 * angle.cos()).round() as isize;
    let dy = (-(distance as f64) * angle.sin()).round() as isize;
    if dx.unsigned_abs() >= img.width() || dy.unsigned_abs() >= img.height() {
        return Err(Error::Argument(format!(
            "displacement ({dx}, {dy}) larger than {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let q = quantize(img, cfg.levels);
    let n = cfg.levels;
    let mut mat = vec![0.0f64; n * n];
    let (w, h) = (img.width() as isize, img.height() as isize);
    for y in 0..h {
        let ty = y + dy;
        if ty < 0 || ty >= h {
            continue;
        }
        for x in 0..w {
            let tx = x + dx;
            if tx < 0 || tx >= w {
                continue;
            }
            let a = q[(y * w + x) as usize];
            let b = q[(ty * w + tx) as usize];
            mat[a * n + b] += 1.0;
        }
    }
    if cfg.symmetric {
        for i in 0..n {
            for j in (i + 1)..n {
                let s = mat[i * n + j] + mat[j * n + i];
                mat[i * n + j] = s;
                mat[j * n + i] = s;
            }
            mat[i * n + i] *= 2.0;
        }
    }
    if cfg.normalized {
        let total: f64 = mat.iter().sum();
        if total > 0.0 {
            for v in &mut mat {
                *v /= total;
            }
        }
    }
    Ok(mat)
}

/// Five Haralick statistics of a normalized co-occurrence matrix:
/// contrast, dissimilarity, homogeneity, energy, correlation.
/// A zero-variance matrix (constant image) defines correlation as 1.
pub fn haralick(mat: &[f64], levels: usize) -> [f64; 5] {
    let mut contrast = 0.0;
    let mut dissimilarity = 0.0;
    let mut homogeneity = 0.0;
    let mut energy_sq = 0.0;
    let mut mu_i = 0.0;
    let mut mu_j = 0.0;
    for i in 0..levels {
        for j in 0..levels {
            let p = mat[i * levels + j];
            let d = i as f64 - j as f64;
            contrast += p * d * d;
            dissimilarity += p * d.abs();
            homogeneity += p / (1.0 + d * d);
            energy_sq += p * p;
            mu_i += p * i as f64;
            mu_j += p * j as f64;
        }
    }
    let mut var_i = 0.0;
    let mut var_j = 0.0;
    let mut cov = 0.0;
    for i in 0..levels {
        for j in 0..levels {
            let p = mat[i * levels + j];
            var_i += p * (i as f64 - mu_i).powi(2);
            var_j += p * (j as f64 - mu_j).powi(2);
            cov += p * (i as f64 - mu_i) * (j as f64 - mu_j);
        }
    }
    let correlation = if var_i <= 0.0 || var_j <= 0.0 {
        1.0
    } else {
        cov / (var_i.sqrt() * var_j.sqrt())
    };
    [
        contrast,
        dissimilarity,
        homogeneity,
        energy_sq.sqrt(),
        correlation,
    ]
}

/// Haralick statistics for every `(distance, angle)` pair in declared
/// order, from the symmetric normalized matrix.
pub fn glcm_features<F: Real>(img: &GrayImage<F>, cfg: &GlcmConfig) -> Result<Vec<F>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.distances.len() * cfg.angles.len() * 5);
    for &d in &cfg.distances {
        for &a in &cfg.angles {
            let mat = glcm(img, d, a, cfg)?;
            for v in haralick(&mat, cfg.levels) {
                out.push(F::from_f64_lossy(v));
            }
        }
    }
    Ok(out)
}

pub const HARALICK_NAMES: [&str; 5] = [
    "contrast",
    "dissimilarity",
    "homogeneity",
    "energy",
    "correlation",
];

pub fn glcm_feature_names(cfg: &GlcmConfig) -> Vec<String> {
    let mut names = Vec::new();
    for &d in &cfg.distances {
        for &a in &cfg.angles {
            let deg = (a.to_degrees().round() as i64).rem_euclid(360);
            for s in HARALICK_NAMES {
                names.push(format!("glcm_d{}_a{}_{}", d, deg, s));
            }
        }
    }
    names
}
