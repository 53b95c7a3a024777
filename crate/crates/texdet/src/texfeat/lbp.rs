//! Uniform local binary patterns over circular neighborhoods.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::GrayImage;
use crate::texfeat::stats::StatsSummary;
use crate::Real;

/// Circular LBP configuration. The neighbor count is tied to the radius
/// (`points = radius × 8`), so a radius-16 circle carries 128 sample
/// points, the maximum a `u128` pattern can hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbpConfig {
    pub radius: usize,
    pub points: usize,
}

impl LbpConfig {
    pub fn with_radius(radius: usize) -> Result<Self> {
        if radius == 0 {
            return Err(Error::Argument("LBP radius must be positive".into()));
        }
        let points = radius * 8;
        if points > 128 {
            return Err(Error::Argument(format!(
                "LBP radius {radius} needs {points} points, more than the 128 supported"
            )));
        }
        Ok(Self { radius, points })
    }

    /// The default multi-scale configuration: radii 2, 8, 16.
    pub fn default_set() -> Vec<LbpConfig> {
        [2, 8, 16]
            .iter()
            .map(|&r| LbpConfig::with_radius(r).unwrap())
            .collect()
    }

    /// `points × (points − 1) + 3` histogram bins: one per rotation of
    /// each uniform run length, plus all-zeros, all-ones, and the shared
    /// non-uniform bin.
    pub fn bins(&self) -> usize {
        self.points * (self.points - 1) + 3
    }

    /// Label of the all-ones pattern.
    pub fn all_ones_code(&self) -> u32 {
        (self.points * (self.points - 1) + 1) as u32
    }

    /// Label shared by every non-uniform pattern.
    pub fn non_uniform_code(&self) -> u32 {
        (self.points * (self.points - 1) + 2) as u32
    }
}

/// Raster of uniform-LBP codes covering the interior of the source image
/// (a `radius`-wide border is excluded).
#[derive(Debug, Clone)]
pub struct CodeMap {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<u32>,
}

struct NeighborSampler {
    // per neighbor: offset of the top-left corner of the 2x2 patch and
    // the fractional position inside it
    taps: Vec<(isize, isize, f64, f64)>,
}

impl NeighborSampler {
    fn new(cfg: &LbpConfig) -> Self {
        let taps = (0..cfg.points)
            .map(|p| {
                let angle = 2.0 * std::f64::consts::PI * p as f64 / cfg.points as f64;
                let dx = cfg.radius as f64 * angle.cos();
                let dy = -(cfg.radius as f64) * angle.sin();
                // snap near-integer coordinates so axis-aligned neighbors
                // are read exactly
                let snap = |v: f64| {
                    let r = v.round();
                    if (v - r).abs() < 1e-9 {
                        r
                    } else {
                        v
                    }
                };
                let dx = snap(dx);
                let dy = snap(dy);
                let x0 = dx.floor();
                let y0 = dy.floor();
                (x0 as isize, y0 as isize, dx - x0, dy - y0)
            })
            .collect();
        Self { taps }
    }

    /// Nested-lerp bilinear read, exact on constant patches.
    #[inline]
    fn sample<F: Real>(&self, img: &GrayImage<F>, x: usize, y: usize, p: usize) -> f64 {
        let (ox, oy, fx, fy) = self.taps[p];
        let bx = (x as isize + ox) as usize;
        let by = (y as isize + oy) as usize;
        let stride = img.width();
        let px = img.pixels();
        let i = by * stride + bx;
        let p00 = px[i].to_f64_lossy();
        if fx == 0.0 && fy == 0.0 {
            return p00;
        }
        let p10 = px[i + 1].to_f64_lossy();
        let p01 = px[i + stride].to_f64_lossy();
        let p11 = px[i + stride + 1].to_f64_lossy();
        let v0 = p00 + fx * (p10 - p00);
        let v1 = p01 + fx * (p11 - p01);
        v0 + fy * (v1 - v0)
    }
}

fn rotate_left(pattern: u128, by: u32, points: usize) -> u128 {
    let mask = if points == 128 {
        u128::MAX
    } else {
        (1u128 << points) - 1
    };
    ((pattern << by) | (pattern >> (points as u32 - by))) & mask
}

/// Maps a raw circular bit pattern to its uniform label.
fn uniform_label(pattern: u128, cfg: &LbpConfig) -> u32 {
    let p = cfg.points;
    let transitions = (pattern ^ rotate_left(pattern, 1, p)).count_ones();
    match transitions {
        0 => {
            if pattern == 0 {
                0
            } else {
                cfg.all_ones_code()
            }
        }
        2 => {
            let ones = pattern.count_ones() as usize;
            // a 2-transition pattern is a single circular run of ones;
            // locate the run start (a 1 preceded by a 0)
            let prev = rotate_left(pattern, 1, p);
            let start_bits = pattern & !prev;
            let start = start_bits.trailing_zeros();
            1 + ((ones - 1) * p) as u32 + start
        }
        _ => cfg.non_uniform_code(),
    }
}

/// Computes one uniform-LBP code per interior pixel. A neighbor sampled
/// by bilinear interpolation on the radius circle sets its bit when it is
/// `≥` the center value.
pub fn lbp_code_map<F: Real>(img: &GrayImage<F>, cfg: &LbpConfig) -> Result<CodeMap> {
    let r = cfg.radius;
    if img.width() <= 2 * r || img.height() <= 2 * r {
        return Err(Error::Argument(format!(
            "image {}x{} too small for LBP radius {}",
            img.width(),
            img.height(),
            r
        )));
    }
    let sampler = NeighborSampler::new(cfg);
    let out_w = img.width() - 2 * r;
    let out_h = img.height() - 2 * r;
    let mut codes = Vec::with_capacity(out_w * out_h);
    for y in r..img.height() - r {
        for x in r..img.width() - r {
            let center = img.get(x, y).to_f64_lossy();
            let mut pattern = 0u128;
            for p in 0..cfg.points {
                if sampler.sample(img, x, y, p) >= center {
                    pattern |= 1u128 << p;
                }
            }
            codes.push(uniform_label(pattern, cfg));
        }
    }
    Ok(CodeMap {
        width: out_w,
        height: out_h,
        codes,
    })
}

/// Normalized code histogram plus the statistical summary of the code
/// raster, for each config in the given order.
pub fn lbp_features<F: Real>(img: &GrayImage<F>, cfgs: &[LbpConfig]) -> Result<Vec<F>> {
    let mut out = Vec::new();
    for cfg in cfgs {
        let map = lbp_code_map(img, cfg)?;
        let mut hist = vec![0usize; cfg.bins()];
        for &c in &map.codes {
            hist[c as usize] += 1;
        }
        let total = F::from_f64_lossy(map.codes.len() as f64);
        out.extend(hist.iter().map(|&c| F::from_f64_lossy(c as f64) / total));
        let codes_f: Vec<F> = map
            .codes
            .iter()
            .map(|&c| F::from_f64_lossy(c as f64))
            .collect();
        out.extend(StatsSummary::of(&codes_f).values());
    }
    Ok(out)
}

pub fn lbp_feature_names(cfgs: &[LbpConfig]) -> Vec<String> {
    let mut names = Vec::new();
    for cfg in cfgs {
        for b in 0..cfg.bins() {
            names.push(format!("lbp_r{}_hist_{:05}", cfg.radius, b));
        }
        for s in StatsSummary::<f64>::NAMES {
            names.push(format!("lbp_r{}_{}", cfg.radius, s));
        }
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: re-evaluates every neighbor comparison with the
    /// image's generic bilinear sampler and classifies the pattern by
    /// directly counting circular transitions and scanning for the run
    /// start.
    fn oracle_code(img: &GrayImage<f64>, x: usize, y: usize, cfg: &LbpConfig) -> u32 {
        let center = img.get(x, y);
        let mut bits = vec![false; cfg.points];
        for (p, bit) in bits.iter_mut().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * p as f64 / cfg.points as f64;
            let mut dx = cfg.radius as f64 * angle.cos();
            let mut dy = -(cfg.radius as f64) * angle.sin();
            if (dx - dx.round()).abs() < 1e-9 {
                dx = dx.round();
            }
            if (dy - dy.round()).abs() < 1e-9 {
                dy = dy.round();
            }
            let v = img.sample_bilinear(x as f64 + dx, y as f64 + dy);
            *bit = v >= center;
        }
        let transitions = (0..cfg.points)
            .filter(|&i| bits[i] != bits[(i + 1) % cfg.points])
            .count();
        let ones = bits.iter().filter(|&&b| b).count();
        if transitions == 0 {
            return if ones == 0 { 0 } else { cfg.all_ones_code() };
        }
        if transitions == 2 {
            let start = (0..cfg.points)
                .find(|&i| bits[i] && !bits[(i + cfg.points - 1) % cfg.points])
                .unwrap();
            return 1 + ((ones - 1) * cfg.points + start) as u32;
        }
        cfg.non_uniform_code()
    }

    #[test]
    fn bin_counts_match_formula() {
        assert_eq!(LbpConfig::with_radius(2).unwrap().bins(), 243);
        assert_eq!(LbpConfig::with_radius(8).unwrap().bins(), 64 * 63 + 3);
        assert_eq!(LbpConfig::with_radius(16).unwrap().bins(), 128 * 127 + 3);
    }

    #[test]
    fn constant_image_gives_all_ones_pattern() {
        let cfg = LbpConfig::with_radius(2).unwrap();
        let img = GrayImage::constant(9, 9, 100.0f64);
        let map = lbp_code_map(&img, &cfg).unwrap();
        assert!(map.codes.iter().all(|&c| c == cfg.all_ones_code()));
    }

    #[test]
    fn strict_center_maximum_gives_code_zero() {
        let cfg = LbpConfig::with_radius(2).unwrap();
        let mut img = GrayImage::constant(9, 9, 10.0f64);
        img.set(4, 4, 255.0);
        let map = lbp_code_map(&img, &cfg).unwrap();
        assert_eq!(map.codes[2 * map.width + 2], 0);
    }

    #[test]
    fn ramp_matches_oracle() {
        let cfg = LbpConfig::with_radius(2).unwrap();
        let img = GrayImage::from_fn(5, 5, |x, y| (x * 10 + y) as f64);
        let map = lbp_code_map(&img, &cfg).unwrap();
        assert_eq!(map.width, 1);
        assert_eq!(map.codes[0], oracle_code(&img, 2, 2, &cfg));
    }

    #[test]
    fn random_images_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for cfg in [
            LbpConfig::with_radius(2).unwrap(),
            LbpConfig::with_radius(8).unwrap(),
        ] {
            let side = 2 * cfg.radius + 4;
            for _ in 0..5 {
                let img =
                    GrayImage::from_fn(side, side, |_, _| rng.gen_range(0..256) as f64);
                let map = lbp_code_map(&img, &cfg).unwrap();
                let mut i = 0;
                for y in cfg.radius..side - cfg.radius {
                    for x in cfg.radius..side - cfg.radius {
                        assert_eq!(map.codes[i], oracle_code(&img, x, y, &cfg));
                        i += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn histogram_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = GrayImage::from_fn(24, 24, |_, _| rng.gen_range(0..256) as f64);
        let cfgs = vec![LbpConfig::with_radius(2).unwrap()];
        let feats: Vec<f64> = lbp_features(&img, &cfgs).unwrap();
        let hist_sum: f64 = feats[..243].iter().sum();
        assert!((hist_sum - 1.0).abs() < 1e-9);
        assert_eq!(feats.len(), 243 + 6);
    }

    #[test]
    fn constant_image_histogram_is_indicator() {
        let img = GrayImage::constant(12, 12, 7.0f64);
        let cfgs = vec![LbpConfig::with_radius(2).unwrap()];
        let feats: Vec<f64> = lbp_features(&img, &cfgs).unwrap();
        let nonzero: Vec<usize> = (0..243).filter(|&i| feats[i] != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(feats[nonzero[0]], 1.0);
    }

    #[test]
    fn codes_invariant_under_monotone_transform() {
        // two-level image: restricted to two gray values, any strictly
        // monotone map acts as a positive affine rescale, which commutes
        // with bilinear sampling, so every comparison is preserved
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = GrayImage::from_fn(16, 16, |_, _| if rng.gen_bool(0.5) { 200.0 } else { 40.0 });
        let transformed = GrayImage::from_fn(16, 16, |x, y| {
            let v = img.get(x, y);
            v * v / 255.0
        });
        let cfg = LbpConfig::with_radius(2).unwrap();
        let a = lbp_code_map(&img, &cfg).unwrap();
        let b = lbp_code_map(&transformed, &cfg).unwrap();
        assert_eq!(a.codes, b.codes);
    }

    #[test]
    fn too_small_image_rejected() {
        let cfg = LbpConfig::with_radius(8).unwrap();
        let img = GrayImage::constant(16, 16, 0.0f64);
        assert!(lbp_code_map(&img, &cfg).is_err());
    }
}
