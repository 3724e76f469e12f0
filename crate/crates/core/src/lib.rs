//! Continuous 2D occupancy mapping with a Gaussian-process latent field.
//!
//! Measured points are stored as voxel centroids and treated as noisy
//! observations of the level set `c`. The GP prior mean is shaped by the
//! sensor field of view (via poses or free-space bubbles), so the posterior
//! mean exceeds `c` exactly in observed free space. Walls are the low-variance
//! part of the level-set contour; high-variance crossings are frontiers.

// Negated comparisons such as `!(x > 0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bubbles;
pub mod config;
pub mod contour;
pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod map;
pub mod pipeline;
pub mod prior;
pub mod raster;
pub mod scalar;
pub mod sensor;
pub mod simulator;
pub mod store;

pub use bubbles::{Bubble, BubbleCoverage, BubbleState};
pub use config::RunConfig;
pub use contour::{extract_contour, filter_surface, ContourOptions, ContourSegment, GridSpec};
pub use error::{Error, Result};
pub use field::{CrossingKind, FieldConfig, FieldSample, LatentField, OccupancyClass, PriorMode};
pub use geometry::Point2;
pub use gp::{gp_posterior, LocalGp, Posterior, TrainingSet};
pub use kernel::{matern_half, KernelParams};
pub use map::OccupancyMap;
pub use prior::{gamma, pose_prior_mean, PriorParams};
pub use scalar::Scalar;
pub use sensor::{SensorPose, SensorScan};
pub use simulator::World;
pub use store::VoxelStore;

pub type Point2d = Point2<f64>;
pub type Point2f = Point2<f32>;
pub type OccupancyMapD = OccupancyMap<f64>;
pub type OccupancyMapF = OccupancyMap<f32>;
pub type FieldConfigD = FieldConfig<f64>;
pub type SensorScanD = SensorScan<f64>;
pub type VoxelStoreD = VoxelStore<f64>;
