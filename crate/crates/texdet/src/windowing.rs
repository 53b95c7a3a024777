//! Sliding-window enumeration, IoMA ground-truth assignment, and
//! window-level dataset construction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imagecore::{AnnotatedImage, Annotation, BoundingBox, DefectClass};
use crate::texfeat::{FeatureExtractor, FeatureFlags, FeatureParams, FeatureVector};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub size: usize,
    pub step: usize,
}

impl WindowSpec {
    pub fn new(size: usize, step: usize) -> Result<Self> {
        if step < 1 || step > size {
            return Err(Error::Argument(format!(
                "window spec needs 1 <= step <= size, got size {size} step {step}"
            )));
        }
        Ok(Self { size, step })
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { size: 128, step: 32 }
    }
}

/// Class label of a window: background or one of the defect classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowLabel {
    Background,
    Blister,
    Wire,
}

impl WindowLabel {
    /// Class order used everywhere: background first.
    pub const ALL: [WindowLabel; 3] = [
        WindowLabel::Background,
        WindowLabel::Blister,
        WindowLabel::Wire,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            WindowLabel::Background => "background",
            WindowLabel::Blister => "blister",
            WindowLabel::Wire => "wire",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "background" => Some(WindowLabel::Background),
            "blister" => Some(WindowLabel::Blister),
            "wire" => Some(WindowLabel::Wire),
            _ => None,
        }
    }

    pub fn from_defect(class: DefectClass) -> Self {
        match class {
            DefectClass::Blister => WindowLabel::Blister,
            DefectClass::Wire => WindowLabel::Wire,
        }
    }

    pub fn as_defect(&self) -> Option<DefectClass> {
        match self {
            WindowLabel::Background => None,
            WindowLabel::Blister => Some(DefectClass::Blister),
            WindowLabel::Wire => Some(DefectClass::Wire),
        }
    }
}

/// Window origins in row-major order. Origins advance by `step`; the last
/// row/column is clamped so the final window ends exactly at the image
/// edge and no border strip is left uncovered.
pub fn slide(width: usize, height: usize, spec: &WindowSpec) -> Result<Vec<(usize, usize)>> {
    if width < spec.size || height < spec.size {
        return Err(Error::Argument(format!(
            "image {width}x{height} smaller than window {}",
            spec.size
        )));
    }
    let axis = |extent: usize| -> Vec<usize> {
        let mut origins = Vec::new();
        let mut o = 0;
        while o + spec.size <= extent {
            origins.push(o);
            o += spec.step;
        }
        let last = extent - spec.size;
        if *origins.last().unwrap() != last {
            origins.push(last);
        }
        origins
    };
    let xs = axis(width);
    let ys = axis(height);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            out.push((x, y));
        }
    }
    Ok(out)
}

/// Intersection over minimum area of two positive-area boxes.
pub fn ioma(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b) as f64;
    inter / a.area().min(b.area()) as f64
}

/// Label of the annotation with the highest IoMA against the window, if
/// that maximum reaches the threshold; ties break toward the earliest
/// annotation in file order.
pub fn label_window(
    window_box: &BoundingBox,
    annotations: &[Annotation],
    threshold: f64,
) -> WindowLabel {
    let mut best: Option<(f64, DefectClass)> = None;
    for a in annotations {
        let v = ioma(window_box, &a.bbox);
        if v > best.map_or(0.0, |(b, _)| b) {
            best = Some((v, a.label));
        }
    }
    match best {
        Some((v, class)) if v >= threshold => WindowLabel::from_defect(class),
        _ => WindowLabel::Background,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub window: WindowSpec,
    pub ioma_threshold: f64,
    pub background_keep_fraction: f64,
    pub flags: FeatureFlags,
    #[serde(default)]
    pub features: FeatureParams,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            window: WindowSpec::default(),
            ioma_threshold: 0.1,
            background_keep_fraction: 0.15,
            flags: FeatureFlags::from_letters("GFW").unwrap(),
            features: FeatureParams::default(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ioma_threshold > 0.0 && self.ioma_threshold <= 1.0) {
            return Err(Error::Argument(format!(
                "ioma_threshold must be in (0, 1], got {}",
                self.ioma_threshold
            )));
        }
        if !(self.background_keep_fraction > 0.0 && self.background_keep_fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "background_keep_fraction must be in (0, 1], got {}",
                self.background_keep_fraction
            )));
        }
        WindowSpec::new(self.window.size, self.window.step)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LabeledWindow<F> {
    pub source_id: String,
    pub x: usize,
    pub y: usize,
    pub label: WindowLabel,
    pub features: FeatureVector<F>,
}

/// Per-image subsampling generator derived from the run seed and the
/// source id, so worker scheduling cannot change the output.
fn image_rng(seed: u64, source_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(source_id.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Builds the labeled-window table for one preprocessed image. Every
/// window is labeled; defect windows are always kept, background windows
/// independently with probability `background_keep_fraction`.
pub fn build_image_dataset<F: Real>(
    image: &AnnotatedImage<F>,
    cfg: &DatasetConfig,
    extractor: &FeatureExtractor,
) -> Result<Vec<LabeledWindow<F>>> {
    cfg.validate()?;
    let origins = slide(image.image.width(), image.image.height(), &cfg.window)?;
    let mut rng = image_rng(cfg.seed, &image.source_id);
    let mut kept: Vec<(usize, usize, WindowLabel)> = Vec::new();
    for (x, y) in origins {
        let window_box = BoundingBox {
            x,
            y,
            w: cfg.window.size,
            h: cfg.window.size,
        };
        let label = label_window(&window_box, &image.annotations, cfg.ioma_threshold);
        // the draw happens for every background window so the kept set is
        // independent of how many windows precede it
        if label == WindowLabel::Background {
            let draw: f64 = rng.gen();
            if draw >= cfg.background_keep_fraction {
                continue;
            }
        }
        kept.push((x, y, label));
    }
    kept.into_par_iter()
        .map(|(x, y, label)| {
            let crop = image
                .image
                .crop(x, y, cfg.window.size, cfg.window.size)?;
            Ok(LabeledWindow {
                source_id: image.source_id.clone(),
                x,
                y,
                label,
                features: extractor.extract(&crop)?,
            })
        })
        .collect()
}

/// Preprocesses a raw annotated image for a given grid: normalize, fit,
/// blur, and rescale the annotations into the fitted coordinates.
pub fn prepare_image<F: Real>(
    img: &AnnotatedImage<F>,
    window: usize,
    step: usize,
    sigma: f64,
) -> Result<AnnotatedImage<F>> {
    let (prepared, scale) = crate::imagecore::preprocess(&img.image, window, step, sigma)?;
    let annotations = img
        .annotations
        .iter()
        .map(|a| crate::imagecore::Annotation {
            bbox: scale.apply_box(&a.bbox, prepared.width(), prepared.height()),
            label: a.label,
        })
        .collect();
    AnnotatedImage::new(prepared, annotations, img.source_id.clone())
}

/// Builds the dataset over a whole preprocessed corpus, in image order.
pub fn build_dataset<F: Real>(
    images: &[AnnotatedImage<F>],
    cfg: &DatasetConfig,
) -> Result<Vec<LabeledWindow<F>>> {
    let extractor = FeatureExtractor::new(cfg.flags, cfg.features.clone())?;
    let per_image: Vec<Vec<LabeledWindow<F>>> = images
        .par_iter()
        .map(|img| build_image_dataset(img, cfg, &extractor))
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// JSON-lines record for one window of the feature dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowRecord {
    pub source_id: String,
    pub x: usize,
    pub y: usize,
    pub window: usize,
    pub label: WindowLabel,
    pub features: Vec<f64>,
}

impl WindowRecord {
    pub fn from_labeled<F: Real>(w: &LabeledWindow<F>, window: usize) -> Self {
        Self {
            source_id: w.source_id.clone(),
            x: w.x,
            y: w.y,
            window,
            label: w.label,
            features: w.features.values.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }
}

/// Manifest written next to the feature dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub class_counts: Vec<(String, usize)>,
    pub feature_names: Vec<String>,
}
