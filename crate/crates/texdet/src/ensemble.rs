//! Probability-map ensemble: window-confidence accumulation, power
//! sharpening, background subtraction, quantile thresholding, and
//! detection extraction.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::ForestModel;
use crate::imagecore::{self, BoundingBox, DefectClass, GrayImage};
use crate::texfeat::FeatureExtractor;
use crate::windowing::{slide, WindowSpec};
use crate::Real;

pub const BACKGROUND_CLASS: &str = "background";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Sharpening exponent applied to per-pixel scores.
    pub gamma: f64,
    /// Threshold quantile over a defect plane's positive values.
    pub quantile: f64,
    /// Connected components smaller than this many pixels are dropped.
    pub min_region_area: usize,
    /// Divide accumulated scores by the contributing-window counts before
    /// the power step (the default); off reproduces the raw-sum reading.
    pub normalize_before_power: bool,
    /// Pool positive values across defect classes for a single threshold
    /// instead of one threshold per class.
    pub pooled_quantile: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            gamma: 2.8,
            quantile: 0.98,
            min_region_area: 64,
            normalize_before_power: true,
            pooled_quantile: false,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma <= 0.0 {
            return Err(Error::Argument("gamma must be positive".into()));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::Argument("quantile must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-pixel, per-class accumulated confidences over a sliding pass,
/// with the count of contributing windows per pixel.
#[derive(Debug, Clone)]
pub struct ProbabilityMask<F> {
    pub width: usize,
    pub height: usize,
    /// Ordered class list, background first.
    pub classes: Vec<String>,
    pub accum: Vec<Vec<F>>,
    pub counts: Vec<u32>,
}

impl<F: Real> ProbabilityMask<F> {
    pub fn new(width: usize, height: usize, classes: Vec<String>) -> Result<Self> {
        if classes.first().map(String::as_str) != Some(BACKGROUND_CLASS) {
            return Err(Error::Argument(format!(
                "class list must start with '{BACKGROUND_CLASS}', got {classes:?}"
            )));
        }
        Ok(Self {
            width,
            height,
            accum: vec![vec![F::zero(); width * height]; classes.len()],
            counts: vec![0; width * height],
            classes,
        })
    }

    /// Adds one window's class distribution to every pixel it covers.
    pub fn accumulate(
        &mut self,
        origin: (usize, usize),
        spec: &WindowSpec,
        dist: &[F],
    ) -> Result<()> {
        let (ox, oy) = origin;
        if ox + spec.size > self.width || oy + spec.size > self.height {
            return Err(Error::Argument(format!(
                "window at ({ox}, {oy}) exceeds {}x{} mask",
                self.width, self.height
            )));
        }
        if dist.len() != self.classes.len() {
            return Err(Error::Argument(format!(
                "distribution over {} classes does not match mask's {}",
                dist.len(),
                self.classes.len()
            )));
        }
        for y in oy..oy + spec.size {
            let row = y * self.width;
            for (plane, &d) in self.accum.iter_mut().zip(dist) {
                for v in &mut plane[row + ox..row + ox + spec.size] {
                    *v = *v + d;
                }
            }
            for c in &mut self.counts[row + ox..row + ox + spec.size] {
                *c += 1;
            }
        }
        Ok(())
    }
}

/// Finalized per-class defect heatmap with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Heatmap<F> {
    pub class: DefectClass,
    pub width: usize,
    pub height: usize,
    pub values: Vec<F>,
}

fn quantile_of_sorted(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    sorted[idx]
}

/// Per pixel: mean score per class, sharpened by `gamma`, background
/// subtracted from each defect plane, then each plane thresholded at the
/// configured quantile of its positive values.
pub fn finalize<F: Real>(mask: &ProbabilityMask<F>, cfg: &EnsembleConfig) -> Result<Vec<Heatmap<F>>> {
    cfg.validate()?;
    if mask.counts.iter().any(|&c| c == 0) {
        return Err(Error::Argument(
            "mask has pixels with no contributing window".into(),
        ));
    }
    let n_pixels = mask.width * mask.height;
    let sharpen = |plane: &[F]| -> Vec<f64> {
        plane
            .iter()
            .zip(&mask.counts)
            .map(|(&a, &c)| {
                let score = if cfg.normalize_before_power {
                    a.to_f64_lossy() / c as f64
                } else {
                    a.to_f64_lossy()
                };
                score.powf(cfg.gamma)
            })
            .collect()
    };
    let background = sharpen(&mask.accum[0]);
    let mut planes: Vec<(DefectClass, Vec<f64>)> = Vec::new();
    for (class_name, plane) in mask.classes.iter().zip(&mask.accum).skip(1) {
        let class = DefectClass::from_name(class_name).ok_or_else(|| {
            Error::Argument(format!("unknown defect class '{class_name}' in mask"))
        })?;
        let sharp = sharpen(plane);
        let diff: Vec<f64> = sharp
            .iter()
            .zip(&background)
            .map(|(&d, &b)| (d - b).max(0.0).min(1.0))
            .collect();
        planes.push((class, diff));
    }

    let pooled_threshold = if cfg.pooled_quantile {
        let mut positives: Vec<f64> = planes
            .iter()
            .flat_map(|(_, p)| p.iter().copied().filter(|&v| v > 0.0))
            .collect();
        if positives.is_empty() {
            None
        } else {
            positives.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Some(quantile_of_sorted(&positives, cfg.quantile))
        }
    } else {
        None
    };

    let mut heatmaps = Vec::with_capacity(planes.len());
    for (class, mut plane) in planes {
        let threshold = if cfg.pooled_quantile {
            pooled_threshold
        } else {
            let mut positives: Vec<f64> = plane.iter().copied().filter(|&v| v > 0.0).collect();
            if positives.is_empty() {
                None
            } else {
                positives.sort_by(|a, b| a.partial_cmp(b).unwrap());
                Some(quantile_of_sorted(&positives, cfg.quantile))
            }
        };
        if let Some(t) = threshold {
            for v in &mut plane {
                if *v < t {
                    *v = 0.0;
                }
            }
        }
        debug_assert_eq!(plane.len(), n_pixels);
        heatmaps.push(Heatmap {
            class,
            width: mask.width,
            height: mask.height,
            values: plane.into_iter().map(F::from_f64_lossy).collect(),
        });
    }
    Ok(heatmaps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub bbox: BoundingBox,
    pub label: DefectClass,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionSet {
    pub source_id: String,
    pub detections: Vec<Detection>,
}

/// 8-connected components of nonzero heatmap pixels; each component of
/// sufficient area emits its tight bounding box with the component's
/// maximum value as the score.
pub fn extract_detections<F: Real>(
    heatmaps: &[Heatmap<F>],
    cfg: &EnsembleConfig,
    source_id: &str,
) -> DetectionSet {
    let mut detections = Vec::new();
    for hm in heatmaps {
        let (w, h) = (hm.width, hm.height);
        let mut visited = vec![false; w * h];
        for start in 0..w * h {
            if visited[start] || hm.values[start] <= F::zero() {
                continue;
            }
            // flood fill
            let mut stack = vec![start];
            visited[start] = true;
            let mut min_x = usize::MAX;
            let mut min_y = usize::MAX;
            let mut max_x = 0usize;
            let mut max_y = 0usize;
            let mut area = 0usize;
            let mut peak = F::zero();
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                min_x = min_x.min(x);
                min_y = min_y.min(y);
                max_x = max_x.max(x);
                max_y = max_y.max(y);
                area += 1;
                if hm.values[i] > peak {
                    peak = hm.values[i];
                }
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let ni = ny as usize * w + nx as usize;
                        if !visited[ni] && hm.values[ni] > F::zero() {
                            visited[ni] = true;
                            stack.push(ni);
                        }
                    }
                }
            }
            if area < cfg.min_region_area {
                continue;
            }
            detections.push(Detection {
                bbox: BoundingBox {
                    x: min_x,
                    y: min_y,
                    w: max_x - min_x + 1,
                    h: max_y - min_y + 1,
                },
                label: hm.class,
                score: peak.to_f64_lossy().min(1.0),
            });
        }
    }
    DetectionSet {
        source_id: source_id.to_string(),
        detections,
    }
}

/// Whole-image detection: preprocess, slide, classify every window,
/// accumulate, finalize, extract. Detection boxes are mapped back to
/// original-image coordinates by inverting the grid-fit affine map.
pub fn detect_image<F: Real>(
    img: &GrayImage<F>,
    source_id: &str,
    model: &ForestModel<F>,
    spec: &WindowSpec,
    extractor: &FeatureExtractor,
    ecfg: &EnsembleConfig,
    sigma: f64,
) -> Result<(DetectionSet, Vec<Heatmap<F>>)> {
    if extractor.feature_count() != model.feature_names.len() {
        return Err(Error::Argument(format!(
            "extractor produces {} features but the model expects {}",
            extractor.feature_count(),
            model.feature_names.len()
        )));
    }
    let (prepared, scale) = imagecore::preprocess(img, spec.size, spec.step, sigma)?;
    let origins = slide(prepared.width(), prepared.height(), spec)?;

    // classify windows in parallel, then commit in origin order so the
    // accumulation is identical for any worker count
    let dists: Vec<Vec<F>> = origins
        .par_iter()
        .map(|&(x, y)| {
            let crop = prepared.crop(x, y, spec.size, spec.size)?;
            let features = extractor.extract(&crop)?;
            model_dist_in_mask_order(model, &features.values)
        })
        .collect::<Result<_>>()?;

    let classes = mask_classes(model);
    let mut mask = ProbabilityMask::new(prepared.width(), prepared.height(), classes)?;
    for (&origin, dist) in origins.iter().zip(&dists) {
        mask.accumulate(origin, spec, dist)?;
    }
    let heatmaps = finalize(&mask, ecfg)?;
    let mut detections = extract_detections(&heatmaps, ecfg, source_id);
    for d in &mut detections.detections {
        d.bbox = scale.invert_box(&d.bbox, img.width(), img.height());
    }
    Ok((detections, heatmaps))
}

/// Mask class list: background first, then every defect class in the
/// fixed class order, regardless of which classes the model saw.
fn mask_classes<F>(model: &ForestModel<F>) -> Vec<String> {
    let mut classes = vec![BACKGROUND_CLASS.to_string()];
    classes.extend(DefectClass::ALL.iter().map(|c| c.name().to_string()));
    let _ = model;
    classes
}

/// Reorders a model distribution into mask class order, inserting zero
/// mass for classes the model was not trained on.
fn model_dist_in_mask_order<F: Real>(model: &ForestModel<F>, features: &[F]) -> Result<Vec<F>> {
    let dist = model.predict_proba(features)?;
    let mut out = vec![F::zero(); 1 + DefectClass::ALL.len()];
    for (name, &p) in model.classes.iter().zip(&dist) {
        let slot = if name == BACKGROUND_CLASS {
            0
        } else {
            1 + DefectClass::ALL
                .iter()
                .position(|c| c.name() == name)
                .ok_or_else(|| Error::Argument(format!("model class '{name}' unknown")))?
        };
        out[slot] = p;
    }
    Ok(out)
}

/// Writes one 8-bit PNG per defect-class heatmap
/// (`value = round(255 · heatmap)`).
pub fn write_heatmap_pngs<F: Real>(heatmaps: &[Heatmap<F>], dir: &Path, stem: &str) -> Result<()> {
    for hm in heatmaps {
        let img = GrayImage::new(
            hm.width,
            hm.height,
            hm.values
                .iter()
                .map(|&v| F::from_f64_lossy(v.to_f64_lossy() * 255.0))
                .collect(),
        )?;
        let path = dir.join(format!("{stem}_{}.png", hm.class.name()));
        imagecore::save_image(&img, &path)?;
    }
    Ok(())
}
