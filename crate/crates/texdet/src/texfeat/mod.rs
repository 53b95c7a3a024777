//! Engineered texture features: LBP, GLCM, Fourier, and Haar wavelet
//! families, concatenated in the fixed order L, G, F, W.

pub mod fourier;
pub mod glcm;
pub mod lbp;
pub mod stats;
pub mod wavelet;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imagecore::GrayImage;
use crate::Real;

pub use fourier::fourier_features;
pub use glcm::{glcm, glcm_features, GlcmConfig};
pub use lbp::{lbp_code_map, lbp_features, LbpConfig};
pub use stats::StatsSummary;
pub use wavelet::{haar_dwt2, haar_idwt2, wavelet_features, WaveletConfig, WaveletPyramid};

/// Which of the four feature families are enabled. The concatenation
/// order is always L, G, F, W regardless of construction order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureFlags {
    pub lbp: bool,
    pub glcm: bool,
    pub fourier: bool,
    pub wavelet: bool,
}

impl FeatureFlags {
    pub const ALL: FeatureFlags = FeatureFlags {
        lbp: true,
        glcm: true,
        fourier: true,
        wavelet: true,
    };

    /// The paper-style letter subset, e.g. `GFW`.
    pub fn from_letters(s: &str) -> Result<Self> {
        let mut flags = FeatureFlags {
            lbp: false,
            glcm: false,
            fourier: false,
            wavelet: false,
        };
        for c in s.chars() {
            match c.to_ascii_uppercase() {
                'L' => flags.lbp = true,
                'G' => flags.glcm = true,
                'F' => flags.fourier = true,
                'W' => flags.wavelet = true,
                other => {
                    return Err(Error::Argument(format!(
                        "unknown feature flag '{other}' (expected subset of LGFW)"
                    )))
                }
            }
        }
        if flags.is_empty() {
            return Err(Error::Argument("feature flag set must be non-empty".into()));
        }
        Ok(flags)
    }

    pub fn is_empty(&self) -> bool {
        !(self.lbp || self.glcm || self.fourier || self.wavelet)
    }

    /// All 15 non-empty subsets in the ablation-table order: L is the
    /// most significant bit, W the least, descending.
    pub fn all_subsets() -> Vec<FeatureFlags> {
        (1..16u8)
            .rev()
            .map(|bits| FeatureFlags {
                lbp: bits & 0b1000 != 0,
                glcm: bits & 0b0100 != 0,
                fourier: bits & 0b0010 != 0,
                wavelet: bits & 0b0001 != 0,
            })
            .collect()
    }
}

impl fmt::Display for FeatureFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lbp {
            write!(f, "L")?;
        }
        if self.glcm {
            write!(f, "G")?;
        }
        if self.fourier {
            write!(f, "F")?;
        }
        if self.wavelet {
            write!(f, "W")?;
        }
        Ok(())
    }
}

impl FromStr for FeatureFlags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureFlags::from_letters(s)
    }
}

impl Serialize for FeatureFlags {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeatureFlags {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        FeatureFlags::from_letters(&s).map_err(serde::de::Error::custom)
    }
}

/// Per-family configuration shared by every window of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureParams {
    pub lbp_radii: Vec<usize>,
    pub glcm: GlcmConfig,
    pub wavelet: WaveletConfig,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            lbp_radii: vec![2, 8, 16],
            glcm: GlcmConfig::default(),
            wavelet: WaveletConfig::default(),
        }
    }
}

impl FeatureParams {
    pub fn lbp_configs(&self) -> Result<Vec<LbpConfig>> {
        self.lbp_radii.iter().map(|&r| LbpConfig::with_radius(r)).collect()
    }
}

/// Fixed-order named descriptor of one window. The name list depends only
/// on the enabled flags and configs, never on pixel content, and is
/// shared between vectors of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<F> {
    pub values: Vec<F>,
    pub names: Arc<Vec<String>>,
}

impl<F> FeatureVector<F> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Window feature extractor with the name layout computed once up front.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    flags: FeatureFlags,
    params: FeatureParams,
    lbp_configs: Vec<LbpConfig>,
    names: Arc<Vec<String>>,
}

impl FeatureExtractor {
    pub fn new(flags: FeatureFlags, params: FeatureParams) -> Result<Self> {
        if flags.is_empty() {
            return Err(Error::Argument("feature flag set must be non-empty".into()));
        }
        let lbp_configs = params.lbp_configs()?;
        let mut names = Vec::new();
        if flags.lbp {
            names.extend(lbp::lbp_feature_names(&lbp_configs));
        }
        if flags.glcm {
            params.glcm.validate()?;
            names.extend(glcm::glcm_feature_names(&params.glcm));
        }
        if flags.fourier {
            names.extend(fourier::fourier_feature_names());
        }
        if flags.wavelet {
            names.extend(wavelet::wavelet_feature_names(&params.wavelet));
        }
        Ok(Self {
            flags,
            params,
            lbp_configs,
            names: Arc::new(names),
        })
    }

    pub fn flags(&self) -> FeatureFlags {
        self.flags
    }

    pub fn params(&self) -> &FeatureParams {
        &self.params
    }

    pub fn names(&self) -> &Arc<Vec<String>> {
        &self.names
    }

    pub fn feature_count(&self) -> usize {
        self.names.len()
    }

    pub fn extract<F: Real>(&self, img: &GrayImage<F>) -> Result<FeatureVector<F>> {
        let mut values = Vec::with_capacity(self.names.len());
        if self.flags.lbp {
            values.extend(lbp::lbp_features(img, &self.lbp_configs)?);
        }
        if self.flags.glcm {
            values.extend(glcm::glcm_features(img, &self.params.glcm)?);
        }
        if self.flags.fourier {
            values.extend(fourier::fourier_features(img));
        }
        if self.flags.wavelet {
            values.extend(wavelet::wavelet_features(img, &self.params.wavelet)?);
        }
        debug_assert_eq!(values.len(), self.names.len());
        Ok(FeatureVector {
            values,
            names: Arc::clone(&self.names),
        })
    }
}

/// One-shot extraction with the default per-family configuration.
pub fn extract_features<F: Real>(img: &GrayImage<F>, flags: FeatureFlags) -> Result<FeatureVector<F>> {
    FeatureExtractor::new(flags, FeatureParams::default())?.extract(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_flags_rejected() {
        assert!(FeatureFlags::from_letters("").is_err());
        assert!(FeatureFlags::from_letters("X").is_err());
    }

    #[test]
    fn letters_round_trip() {
        let f = FeatureFlags::from_letters("wgf").unwrap();
        assert_eq!(f.to_string(), "GFW");
    }

    #[test]
    fn subset_enumeration_order() {
        let all = FeatureFlags::all_subsets();
        assert_eq!(all.len(), 15);
        assert_eq!(all[0], FeatureFlags::ALL);
        assert_eq!(all[0].to_string(), "LGFW");
        assert_eq!(all[7].to_string(), "L");
        assert_eq!(all[8].to_string(), "GFW");
        assert_eq!(all[14].to_string(), "W");
    }

    #[test]
    fn wavelet_only_constant_gives_54_zeros() {
        let img = crate::imagecore::GrayImage::constant(64, 64, 10.0f64);
        let v = extract_features(&img, FeatureFlags::from_letters("W").unwrap()).unwrap();
        assert_eq!(v.len(), 54);
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn length_independent_of_content() {
        let flags = FeatureFlags::from_letters("GFW").unwrap();
        let ex = FeatureExtractor::new(flags, FeatureParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lens = std::collections::HashSet::new();
        for _ in 0..3 {
            let img =
                crate::imagecore::GrayImage::from_fn(64, 64, |_, _| rng.gen_range(0..256) as f64);
            let v = ex.extract(&img).unwrap();
            assert_eq!(v.values.len(), v.names.len());
            lens.insert(v.len());
        }
        assert_eq!(lens.len(), 1);
        // G: 3 distances x 4 angles x 5 stats, F: 10, W: 54
        assert_eq!(ex.feature_count(), 60 + 10 + 54);
    }

    #[test]
    fn extraction_is_deterministic() {
        let flags = FeatureFlags::from_letters("GFW").unwrap();
        let ex = FeatureExtractor::new(flags, FeatureParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = crate::imagecore::GrayImage::from_fn(64, 64, |_, _| rng.gen_range(0..256) as f64);
        let a = ex.extract(&img).unwrap();
        let b = ex.extract(&img).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn flags_serde_as_string() {
        let f = FeatureFlags::from_letters("GW").unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, "\"GW\"");
        let back: FeatureFlags = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
    }
}
