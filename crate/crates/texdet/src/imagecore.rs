//! Image representation, raster I/O, and the preprocessing chain:
//! luminance normalization, grid fitting, and Gaussian blur.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

/// Two-dimensional luminance raster with values in `[0, 255]`, stored
/// row-major. Immutable after construction as far as the pipeline is
/// concerned; every operation returns a new image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage<F> {
    width: usize,
    height: usize,
    pixels: Vec<F>,
}

impl<F: Real> GrayImage<F> {
    pub fn new(width: usize, height: usize, pixels: Vec<F>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument("image dimensions must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::Argument(format!(
                "pixel count {} does not match {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn constant(width: usize, height: usize, value: F) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[F] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> F {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: F) {
        self.pixels[y * self.width + x] = v;
    }

    /// Clamped access, replicating the border outside the image.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> F {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample at a real-valued coordinate, clamped at borders.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> F {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as isize;
        let y0 = y0 as isize;
        let p00 = self.get_clamped(x0, y0).to_f64_lossy();
        let p10 = self.get_clamped(x0 + 1, y0).to_f64_lossy();
        let p01 = self.get_clamped(x0, y0 + 1).to_f64_lossy();
        let p11 = self.get_clamped(x0 + 1, y0 + 1).to_f64_lossy();
        // nested lerp so a constant patch samples to the exact constant
        let v0 = p00 + fx * (p10 - p00);
        let v1 = p01 + fx * (p11 - p01);
        F::from_f64_lossy(v0 + fy * (v1 - v0))
    }

    /// Copies the rectangle starting at `(x, y)` with size `w`×`h`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::Argument(format!(
                "crop {}x{}+{}+{} outside {}x{} image",
                w, h, x, y, self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            pixels.extend_from_slice(&self.pixels[start..start + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            pixels,
        })
    }

    pub fn min_max(&self) -> (F, F) {
        let mut lo = self.pixels[0];
        let mut hi = self.pixels[0];
        for &p in &self.pixels {
            if p < lo {
                lo = p;
            }
            if p > hi {
                hi = p;
            }
        }
        (lo, hi)
    }

    pub fn mean(&self) -> F {
        let sum: F = self.pixels.iter().copied().sum();
        sum / F::from_f64_lossy(self.pixels.len() as f64)
    }
}

/// Axis-aligned box with top-left corner `(x, y)` and positive extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::Argument("bounding box extent must be positive".into()));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> usize {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 > x0 && y1 > y0 {
            (x1 - x0) * (y1 - y0)
        } else {
            0
        }
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.intersection_area(other) > 0
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.x <= other.x
            && self.y <= other.y
            && self.right() >= other.right()
            && self.bottom() >= other.bottom()
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.right() <= width && self.bottom() <= height
    }
}

/// The closed defect class set of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectClass {
    Blister,
    Wire,
}

impl DefectClass {
    pub const ALL: [DefectClass; 2] = [DefectClass::Blister, DefectClass::Wire];

    pub fn name(&self) -> &'static str {
        match self {
            DefectClass::Blister => "blister",
            DefectClass::Wire => "wire",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "blister" => Some(DefectClass::Blister),
            "wire" => Some(DefectClass::Wire),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(flatten)]
    pub bbox: BoundingBox,
    pub label: DefectClass,
}

#[derive(Debug, Clone)]
pub struct AnnotatedImage<F> {
    pub image: GrayImage<F>,
    pub annotations: Vec<Annotation>,
    pub source_id: String,
}

impl<F: Real> AnnotatedImage<F> {
    pub fn new(image: GrayImage<F>, annotations: Vec<Annotation>, source_id: String) -> Result<Self> {
        for a in &annotations {
            if !a.bbox.fits_in(image.width(), image.height()) {
                return Err(Error::Argument(format!(
                    "annotation {:?} outside {}x{} image {}",
                    a.bbox,
                    image.width(),
                    image.height(),
                    source_id
                )));
            }
        }
        Ok(Self {
            image,
            annotations,
            source_id,
        })
    }
}

/// On-disk annotation document, one per image. Coordinates refer to the
/// original (unpreprocessed) raster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub source_id: String,
    pub width: usize,
    pub height: usize,
    pub annotations: Vec<Annotation>,
}

impl AnnotationFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Loads an 8- or 16-bit PNG or binary PGM as a luminance raster in
/// `[0, 255]`. Multi-channel inputs are reduced by the channel mean and
/// 16-bit samples rescaled so 65535 maps to 255.
pub fn load_image<F: Real>(path: &Path) -> Result<GrayImage<F>> {
    let dynimg = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let pixels: Vec<F> = match dynimg {
        image::DynamicImage::ImageLuma8(img) => img
            .into_raw()
            .into_iter()
            .map(|v| F::from_f64_lossy(v as f64))
            .collect(),
        image::DynamicImage::ImageLuma16(img) => img
            .into_raw()
            .into_iter()
            .map(|v| F::from_f64_lossy(v as f64 * 255.0 / 65535.0))
            .collect(),
        image::DynamicImage::ImageRgb8(img) => img
            .into_raw()
            .chunks_exact(3)
            .map(|c| F::from_f64_lossy((c[0] as f64 + c[1] as f64 + c[2] as f64) / 3.0))
            .collect(),
        image::DynamicImage::ImageRgb16(img) => img
            .into_raw()
            .chunks_exact(3)
            .map(|c| {
                let mean = (c[0] as f64 + c[1] as f64 + c[2] as f64) / 3.0;
                F::from_f64_lossy(mean * 255.0 / 65535.0)
            })
            .collect(),
        image::DynamicImage::ImageRgba8(img) => img
            .into_raw()
            .chunks_exact(4)
            .map(|c| F::from_f64_lossy((c[0] as f64 + c[1] as f64 + c[2] as f64) / 3.0))
            .collect(),
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("unsupported pixel layout {:?}", other.color()),
            })
        }
    };
    GrayImage::new(w, h, pixels)
}

/// Writes an 8-bit grayscale raster, rounding and clamping to `[0, 255]`.
/// PNG or PGM is chosen from the file extension.
pub fn save_image<F: Real>(img: &GrayImage<F>, path: &Path) -> Result<()> {
    let buf: Vec<u8> = img
        .pixels()
        .iter()
        .map(|&p| p.to_f64_lossy().round().clamp(0.0, 255.0) as u8)
        .collect();
    let out = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, buf)
        .expect("buffer size matches dimensions");
    out.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

/// Affine min-max stretch to `[0, 255]`. A constant image maps to all
/// zeros so a featureless region produces no spurious contrast.
pub fn normalize_luminance<F: Real>(img: &GrayImage<F>) -> GrayImage<F> {
    let (lo, hi) = img.min_max();
    if hi == lo {
        return GrayImage::constant(img.width(), img.height(), F::zero());
    }
    let scale = F::from_f64_lossy(255.0) / (hi - lo);
    let pixels = img.pixels().iter().map(|&p| (p - lo) * scale).collect();
    GrayImage {
        width: img.width(),
        height: img.height(),
        pixels,
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

/// Separable Gaussian convolution with kernel radius `ceil(3·sigma)` and
/// replicated borders. `sigma == 0` returns the input unchanged.
pub fn gaussian_blur<F: Real>(img: &GrayImage<F>, sigma: f64) -> Result<GrayImage<F>> {
    if sigma < 0.0 {
        return Err(Error::Argument(format!("negative blur sigma {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());

    // horizontal pass
    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sx = x as isize + ki as isize - radius;
                acc += kv * img.get_clamped(sx, y as isize).to_f64_lossy();
            }
            tmp[y * w + x] = acc;
        }
    }
    // vertical pass
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            out.push(F::from_f64_lossy(acc));
        }
    }
    GrayImage::new(w, h, out)
}

/// Largest width `w' ≤ width` with `(w' − window)` divisible by `step`.
pub fn aligned_width(width: usize, window: usize, step: usize) -> Option<usize> {
    if width < window {
        return None;
    }
    Some(window + (width - window) / step * step)
}

/// Bilinear resize to exactly `(new_w, new_h)` with pixel-center mapping.
pub fn resize_bilinear<F: Real>(img: &GrayImage<F>, new_w: usize, new_h: usize) -> GrayImage<F> {
    if new_w == img.width() && new_h == img.height() {
        return img.clone();
    }
    let sx = img.width() as f64 / new_w as f64;
    let sy = img.height() as f64 / new_h as f64;
    GrayImage::from_fn(new_w, new_h, |x, y| {
        let src_x = (x as f64 + 0.5) * sx - 0.5;
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        img.sample_bilinear(src_x, src_y)
    })
}

/// Shrinks the width to the largest step-aligned value and rescales the
/// height to preserve the aspect ratio, so a sliding window of
/// `(window, step)` covers the full width exactly.
pub fn fit_to_grid<F: Real>(
    img: &GrayImage<F>,
    window: usize,
    step: usize,
) -> Result<GrayImage<F>> {
    if step < 1 || window < step {
        return Err(Error::Argument(format!(
            "window {window} and step {step} must satisfy window >= step >= 1"
        )));
    }
    let new_w = aligned_width(img.width(), window, step).ok_or_else(|| {
        Error::Argument(format!(
            "image width {} narrower than window {}",
            img.width(),
            window
        ))
    })?;
    let new_h = ((img.height() as f64 * new_w as f64 / img.width() as f64).round() as usize).max(1);
    Ok(resize_bilinear(img, new_w, new_h))
}

/// The affine map applied by [`fit_to_grid`], used to carry annotation
/// geometry along with the raster (and to invert detections back).
#[derive(Debug, Clone, Copy)]
pub struct GridScale {
    pub sx: f64,
    pub sy: f64,
}

impl GridScale {
    pub fn for_fit(orig_w: usize, orig_h: usize, new_w: usize, new_h: usize) -> Self {
        Self {
            sx: new_w as f64 / orig_w as f64,
            sy: new_h as f64 / orig_h as f64,
        }
    }

    pub fn identity() -> Self {
        Self { sx: 1.0, sy: 1.0 }
    }

    /// Maps a box into grid-fitted coordinates, keeping at least one pixel
    /// of extent and staying inside `(width, height)`.
    pub fn apply_box(&self, b: &BoundingBox, width: usize, height: usize) -> BoundingBox {
        let x0 = ((b.x as f64 * self.sx).round() as usize).min(width - 1);
        let y0 = ((b.y as f64 * self.sy).round() as usize).min(height - 1);
        let x1 = ((b.right() as f64 * self.sx).round() as usize).clamp(x0 + 1, width);
        let y1 = ((b.bottom() as f64 * self.sy).round() as usize).clamp(y0 + 1, height);
        BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// Maps a box back into original-image coordinates.
    pub fn invert_box(&self, b: &BoundingBox, orig_w: usize, orig_h: usize) -> BoundingBox {
        let inv = GridScale {
            sx: 1.0 / self.sx,
            sy: 1.0 / self.sy,
        };
        inv.apply_box(b, orig_w, orig_h)
    }
}

/// Full preprocessing chain: normalize, fit to the sliding-window grid,
/// then blur. Returns the image together with the grid scale so callers
/// can rescale annotations consistently.
pub fn preprocess<F: Real>(
    img: &GrayImage<F>,
    window: usize,
    step: usize,
    sigma: f64,
) -> Result<(GrayImage<F>, GridScale)> {
    let normalized = normalize_luminance(img);
    let fitted = fit_to_grid(&normalized, window, step)?;
    let scale = GridScale::for_fit(img.width(), img.height(), fitted.width(), fitted.height());
    let blurred = gaussian_blur(&fitted, sigma)?;
    Ok((blurred, scale))
}
