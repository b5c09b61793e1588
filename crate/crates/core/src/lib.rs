//! Uncertainty-aware semantic segmentation of point clouds.
//!
//! A PointNet-style network is run once with per-point dropout masks; the
//! class probabilities of each point's nearest neighbors then stand in for
//! the samples that classic MC dropout would draw from repeated passes. The
//! spread of those samples gives per-point uncertainty, which is split into
//! aleatoric and epistemic parts and used to down-weight noisy labels during
//! training.

pub mod backbone;
pub mod bench;
pub mod cli;
pub mod dataio;
pub mod distribution;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod rng;
pub mod spatial;
pub mod stats;
pub mod training;
pub mod types;
pub mod uncertainty;

pub use backbone::{Backbone, BackboneConfig, Masking, Tape};
pub use distribution::{establish_mc, establish_nsa, predictive_mean, EmpiricalDistribution, Provenance};
pub use error::{Error, Result};
pub use inference::Method;
pub use nn::{GradientSet, ModelParams};
pub use rng::{derive_rng_stream, RngStreamKey};
pub use spatial::{build_index, knn, voxelize, KdTree, NeighborIndex, VoxelAssignment};
pub use training::{ce_loss, ugce_loss, LossConfig, LossKind};
pub use types::{ClassProbabilities, DropoutConfig, PointCloud, RunConfig};
pub use uncertainty::{entropy_decomposition, std_decomposition, Acquisition, UncertaintyMap};
