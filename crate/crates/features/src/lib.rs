//! Keypoint detection, description and matching-based localization.

use thiserror::Error;

pub mod image;
pub mod matching;
pub mod sift;
pub mod synth;

pub use crate::image::{gaussian_blur, gaussian_kernel, Image};
pub use matching::{localize_by_matching, Localization, PoseDatabase, DEFAULT_RATIO};
pub use sift::{describe, detect_keypoints, extract, Descriptor, Feature, Keypoint, ScaleSpace, SiftConfig};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("image is {width}x{height}; at least 64x64 is required")]
    ImageTooSmall { width: usize, height: usize },
    #[error("descriptor window around ({x:.2}, {y:.2}) leaves the image")]
    BorderKeypoint { x: f64, y: f64 },
    #[error("no gradient around the keypoint")]
    FlatPatch,
    #[error("no database image passed the ratio test")]
    NoMatch,
    #[error("pose database is empty")]
    EmptyDatabase,
    #[error("malformed descriptor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] ::image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
