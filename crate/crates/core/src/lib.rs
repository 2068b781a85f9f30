//! Depth-aware multi-object tracking.
//!
//! Tracking-by-detection with two additions over a plain SORT-style loop:
//! detections and tracks are associated in rounds over depth intervals
//! (nearest first), and Kalman-predicted boxes are corrected for inter-frame
//! camera motion by reprojecting their bottom corners at the object's depth.
//! The crate also carries the photometric machinery used to recover that
//! camera motion from image pairs, forward kernels of the self-supervised
//! training losses, CLEAR-MOT/IDF1 evaluation, a synthetic scene renderer
//! with exact ground truth, and the file formats tying them together.
//!
//! Numeric modules are generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar for the common cases.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod association;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod imaging;
pub mod loss_kernels;
pub mod metrics;
pub mod motion;
pub mod optim;
pub mod pose_align;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Intrinsics = geometry::CameraIntrinsics<f64>;
pub type Intrinsics32 = geometry::CameraIntrinsics<f32>;
pub type Pose = geometry::Pose6DoF<f64>;
pub type Pose32 = geometry::Pose6DoF<f32>;
pub type Transform = geometry::RigidTransform<f64>;
pub type Transform32 = geometry::RigidTransform<f32>;
pub type Image = imaging::ImageGrid<f64>;
pub type Image32 = imaging::ImageGrid<f32>;
pub type Depth = imaging::DepthGrid<f64>;
pub type Depth32 = imaging::DepthGrid<f32>;
pub type BBox = motion::BBox<f64>;
pub type BBox32 = motion::BBox<f32>;
pub type Detection = association::Detection<f64>;
pub type Tracker = association::Tracker<f64>;
pub type Tracker32 = association::Tracker<f32>;
pub type TrackerConfig = association::TrackerConfig<f64>;
pub type AlignConfig = pose_align::AlignConfig<f64>;
pub type Trajectories = metrics::TrajectorySet<f64>;
