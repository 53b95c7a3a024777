//! Deterministic synthetic corpus: anisotropic cord textures with
//! injected blister and wire defects plus exact annotations.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{
    save_image, AnnotatedImage, Annotation, AnnotationFile, BoundingBox, DefectClass, GrayImage,
};
use crate::windowing::ioma;
use crate::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal period of the vertical cord stripes, in pixels.
    pub cord_period: f64,
    pub cord_contrast: f64,
    pub noise_std: f64,
    pub n_blisters: usize,
    pub n_wires: usize,
    /// Peak luminance offset of an injected defect.
    pub defect_contrast: f64,
    /// Median blister width in pixels; height scales proportionally.
    pub blister_size_median: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 2048,
            height: 1024,
            cord_period: 12.0,
            cord_contrast: 40.0,
            noise_std: 6.0,
            n_blisters: 2,
            n_wires: 2,
            defect_contrast: 90.0,
            blister_size_median: 48.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Argument("image dimensions must be positive".into()));
        }
        if self.cord_period <= 0.0 {
            return Err(Error::Argument("cord period must be positive".into()));
        }
        if self.cord_contrast < 0.0 || self.noise_std < 0.0 || self.defect_contrast < 0.0 {
            return Err(Error::Argument("contrasts and noise must be non-negative".into()));
        }
        if !self.blister_size_median.is_finite() || self.blister_size_median <= 0.0 {
            return Err(Error::Argument("blister size median must be positive".into()));
        }
        Ok(())
    }
}

/// Vertical sinusoidal cords plus a slow horizontal luminance drift and
/// seeded Gaussian noise. Deterministic per seed.
pub fn generate_texture<F: Real>(cfg: &SynthConfig) -> Result<GrayImage<F>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Argument(e.to_string()))?;
    let mut pixels = Vec::with_capacity(cfg.width * cfg.height);
    for _y in 0..cfg.height {
        for x in 0..cfg.width {
            let cord = 0.5 * cfg.cord_contrast * (2.0 * PI * x as f64 / cfg.cord_period).sin();
            // drift amplitude scales with cord contrast so a zero-contrast
            // config stays constant
            let drift = 0.15
                * cfg.cord_contrast
                * (2.0 * PI * 1.5 * x as f64 / cfg.width as f64 + 0.8).sin();
            let n = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            pixels.push(F::from_f64_lossy(128.0 + cord + drift + n));
        }
    }
    GrayImage::new(cfg.width, cfg.height, pixels)
}

const PLACEMENT_RETRIES: usize = 200;
const PLACEMENT_MARGIN: usize = 8;
/// Box half-extent in units of the blob's Gaussian sigma. At ±1.2σ the
/// mean blob amplitude inside the box is ≈ 0.65 of the peak.
const BLISTER_BOX_SIGMAS: f64 = 1.2;

fn sample_box(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    w: usize,
    h: usize,
    placed: &[BoundingBox],
) -> Result<BoundingBox> {
    let margin = PLACEMENT_MARGIN;
    if cfg.width < w + 2 * margin || cfg.height < h + 2 * margin {
        return Err(Error::Generation(format!(
            "defect {w}x{h} cannot fit a {}x{} image",
            cfg.width, cfg.height
        )));
    }
    for _ in 0..PLACEMENT_RETRIES {
        let b = BoundingBox {
            x: rng.gen_range(margin..=cfg.width - w - margin),
            y: rng.gen_range(margin..=cfg.height - h - margin),
            w,
            h,
        };
        // a small exclusion gap keeps ground-truth matching unambiguous
        let padded = BoundingBox {
            x: b.x.saturating_sub(4),
            y: b.y.saturating_sub(4),
            w: b.w + 8,
            h: b.h + 8,
        };
        if placed.iter().all(|p| !p.intersects(&padded)) {
            return Ok(b);
        }
    }
    Err(Error::Generation(format!(
        "no non-overlapping placement for a {w}x{h} defect after {PLACEMENT_RETRIES} tries"
    )))
}

fn blister_size(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> (usize, usize) {
    // median aspect 48x39 with occasional tall-thin elongation
    let m = cfg.blister_size_median;
    let lw = LogNormal::new(m.ln(), 0.35).unwrap();
    let lh = LogNormal::new((m * 39.0 / 48.0).ln(), 0.35).unwrap();
    let mut w = lw.sample(rng);
    let mut h = lh.sample(rng);
    if rng.gen_bool(0.15) {
        h *= rng.gen_range(3.0..8.0);
        w *= 0.6;
    }
    let cap = (cfg.height / 4).max(17) as f64;
    (
        w.clamp(16.0, cap).round() as usize,
        h.clamp(16.0, cap).round() as usize,
    )
}

fn paint_blister<F: Real>(img: &mut GrayImage<F>, b: &BoundingBox, contrast: f64) {
    let cx = b.x as f64 + (b.w as f64 - 1.0) / 2.0;
    let cy = b.y as f64 + (b.h as f64 - 1.0) / 2.0;
    let sx = b.w as f64 / (2.0 * BLISTER_BOX_SIGMAS);
    let sy = b.h as f64 / (2.0 * BLISTER_BOX_SIGMAS);
    for y in b.y..b.bottom() {
        for x in b.x..b.right() {
            let dx = (x as f64 - cx) / sx;
            let dy = (y as f64 - cy) / sy;
            let bump = contrast * (-(dx * dx + dy * dy) / 2.0).exp();
            img.set(x, y, img.get(x, y) + F::from_f64_lossy(bump));
        }
    }
}

fn wire_size(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> (usize, usize) {
    let cap = (cfg.height / 4).max(17);
    (
        rng.gen_range(64..=220).min(cap.max(64)),
        rng.gen_range(16..=48).min(cap),
    )
}

fn paint_wire<F: Real>(img: &mut GrayImage<F>, b: &BoundingBox, cfg: &SynthConfig, phase: f64) {
    let cy = b.y as f64 + b.h as f64 / 2.0;
    let amp = (b.h as f64 / 2.0 - 3.0).max(0.0);
    let thickness = 1.5;
    for x in b.x..b.right() {
        let t = (x - b.x) as f64 / b.w as f64;
        let path_y = cy + amp * (2.0 * PI * 1.5 * t + phase).sin();
        for y in b.y..b.bottom() {
            let d = y as f64 - path_y;
            let line = cfg.defect_contrast * (-(d * d) / (2.0 * thickness * thickness)).exp();
            // local cord-phase distortion around the wire path
            let distort = 0.3
                * cfg.cord_contrast
                * (-(d * d) / 50.0).exp()
                * (2.0 * PI * x as f64 / cfg.cord_period + PI / 2.0).sin();
            img.set(x, y, img.get(x, y) + F::from_f64_lossy(distort - line));
        }
    }
}

/// Adds the configured defects at non-overlapping positions and records
/// their exact boxes.
pub fn inject_defects<F: Real>(
    img: GrayImage<F>,
    cfg: &SynthConfig,
    source_id: &str,
) -> Result<AnnotatedImage<F>> {
    cfg.validate()?;
    let mut img = img;
    // separate stream from the texture noise
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7F4A_7C15_9E37_79B9);
    let mut placed: Vec<BoundingBox> = Vec::new();
    let mut annotations = Vec::new();
    for _ in 0..cfg.n_blisters {
        let (w, h) = blister_size(&mut rng, cfg);
        let b = sample_box(&mut rng, cfg, w, h, &placed)?;
        paint_blister(&mut img, &b, cfg.defect_contrast);
        placed.push(b);
        annotations.push(Annotation {
            bbox: b,
            label: DefectClass::Blister,
        });
    }
    for _ in 0..cfg.n_wires {
        let (w, h) = wire_size(&mut rng, cfg);
        let b = sample_box(&mut rng, cfg, w, h, &placed)?;
        let phase = rng.gen_range(0.0..2.0 * PI);
        paint_wire(&mut img, &b, cfg, phase);
        placed.push(b);
        annotations.push(Annotation {
            bbox: b,
            label: DefectClass::Wire,
        });
    }
    AnnotatedImage::new(img, annotations, source_id.to_string())
}

fn image_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64)
}

/// One fully generated image for the corpus slot `index`.
pub fn generate_image<F: Real>(template: &SynthConfig, seed: u64, index: usize) -> Result<AnnotatedImage<F>> {
    let cfg = SynthConfig {
        seed: image_seed(seed, index),
        ..template.clone()
    };
    let source_id = format!("{index:04}");
    inject_defects(generate_texture(&cfg)?, &cfg, &source_id)
}

/// In-memory corpus, ordered by index; identical for any worker count.
pub fn generate_corpus_images<F: Real>(
    n_images: usize,
    template: &SynthConfig,
    seed: u64,
) -> Result<Vec<AnnotatedImage<F>>> {
    (0..n_images)
        .into_par_iter()
        .map(|i| generate_image(template, seed, i))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub source_id: String,
    pub image: String,
    pub annotations: String,
    pub n_blisters: usize,
    pub n_wires: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config: SynthConfig,
    pub seed: u64,
    pub n_images: usize,
    pub entries: Vec<CorpusEntry>,
}

/// Writes `images/NNNN.png`, `annotations/NNNN.json`, and
/// `manifest.json` under `out_dir`.
pub fn generate_corpus(
    n_images: usize,
    template: &SynthConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    let images_dir = out_dir.join("images");
    let ann_dir = out_dir.join("annotations");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    fs::create_dir_all(&ann_dir).map_err(|e| Error::io(&ann_dir, e))?;
    let corpus: Vec<AnnotatedImage<f64>> = generate_corpus_images(n_images, template, seed)?;
    let mut entries = Vec::with_capacity(n_images);
    for item in &corpus {
        let image_rel = format!("images/{}.png", item.source_id);
        let ann_rel = format!("annotations/{}.json", item.source_id);
        save_image(&item.image, &out_dir.join(&image_rel))?;
        AnnotationFile {
            source_id: item.source_id.clone(),
            width: item.image.width(),
            height: item.image.height(),
            annotations: item.annotations.clone(),
        }
        .save(&out_dir.join(&ann_rel))?;
        entries.push(CorpusEntry {
            source_id: item.source_id.clone(),
            image: image_rel,
            annotations: ann_rel,
            n_blisters: item
                .annotations
                .iter()
                .filter(|a| a.label == DefectClass::Blister)
                .count(),
            n_wires: item
                .annotations
                .iter()
                .filter(|a| a.label == DefectClass::Wire)
                .count(),
        });
    }
    let manifest = CorpusManifest {
        config: template.clone(),
        seed,
        n_images,
        entries,
    };
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Pairwise annotation overlap check used by tests and the acceptance
/// harness.
pub fn annotations_disjoint(annotations: &[Annotation]) -> bool {
    annotations.iter().enumerate().all(|(i, a)| {
        annotations[i + 1..]
            .iter()
            .all(|b| ioma(&a.bbox, &b.bbox) == 0.0)
    })
}
