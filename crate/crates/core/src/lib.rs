//! Unsupervised 4D instance segmentation toolkit for Lidar sequences.
//!
//! The crate covers the non-neural machinery: ground removal, spatio-temporal
//! clustering into pseudo-labels, query/object matching losses, an online
//! query tracker, window stitching for fixed-window baselines, and temporal
//! association metrics. A synthetic scene generator drives end-to-end checks.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cluster4d;
pub mod config;
pub mod error;
pub mod ground;
pub mod hdbscan;
pub mod io;
pub mod kdtree;
pub mod matching;
pub mod metrics;
pub mod rng;
pub mod stitch;
pub mod synth;
pub mod tracker;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    transform_scan, InstanceId, InstanceLabeling, Point, PointRef, Pose, Scan, Segment4D, Sequence,
    GROUND, UNKNOWN,
};
