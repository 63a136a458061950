//! Extrinsic calibration of multi-LiDAR rigs through joint registration.
//!
//! All sensors' observations are registered simultaneously against a single
//! Gaussian-mixture reconstruction of the calibration targets; per-pair
//! calibration transforms fall out of the recovered sensor-to-model
//! transforms. Classic pairwise ICP variants (point-to-point, point-to-plane,
//! generalized) are included as baselines, together with a synthetic LiDAR
//! scene generator and the evaluation metrics used to compare them.
//!
//! Start with the [`scene`] module to fabricate test data, [`gmm`] and [`icp`]
//! for registration, [`pipeline`] to turn registrations into calibration
//! reports, and [`metrics`] to score reports against ground truth. The book
//! under `book/` walks through the same flow chapter by chapter; its code
//! blocks compile and run as doc-tests.

pub mod align;
pub mod cloud;
pub mod gmm;
pub mod icp;
pub mod metrics;
pub mod pipeline;
pub mod scene;
pub mod se3;

#[cfg(doctest)]
mod book;

pub use cloud::{ObservationSet, PointCloud};
pub use se3::{EulerPose, RigidTransform};
