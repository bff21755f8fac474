//! Geometric pose-regression losses and the tooling around them: pose
//! algebra, a small trainable regressor, dataset ingestion and localization
//! metrics.

pub mod autodiff;
pub mod datasets;
pub mod eval;
pub mod learn;
pub mod losses;
pub mod pathmetrics;
pub mod plot;
pub mod pose;

pub use pose::{CameraIntrinsics, Pose, Position, Quaternion, RigidTransform, ViewDirection};
