//! Texture-feature defect detection for large anisotropic grayscale images.
//!
//! The pipeline: preprocess an image (luminance normalization, grid fitting,
//! slight blur), slide square windows over it, describe each window with
//! engineered texture features (LBP, GLCM, Haar wavelet, Fourier), classify
//! windows with a random forest, and fuse the per-window confidences into a
//! per-pixel probability mask from which defect bounding boxes are extracted.
//!
//! All numeric code is generic over the scalar type through the [`Real`]
//! trait; `f64` is the default used by the CLI and the concrete aliases at
//! the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod augment;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod forest;
pub mod imagecore;
pub mod metrics;
pub mod synthgen;
pub mod texfeat;
pub mod windowing;

pub use error::{Error, Result};

/// Scalar type required by the numeric pipeline.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, panicking only for non-finite inputs
    /// that the target type cannot represent.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 not representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + Sum
        + Default
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

pub type GrayImage32 = imagecore::GrayImage<f32>;
pub type GrayImage64 = imagecore::GrayImage<f64>;
pub type FeatureVector32 = texfeat::FeatureVector<f32>;
pub type FeatureVector64 = texfeat::FeatureVector<f64>;
pub type ForestModel32 = forest::ForestModel<f32>;
pub type ForestModel64 = forest::ForestModel<f64>;
