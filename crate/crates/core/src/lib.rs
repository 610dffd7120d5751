//! Learning and assembling 3D spider-web graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: the undirected 3D graph substrate.
//! - [`stats`]: conditioning features and per-node heterogeneity fields.
//! - [`dataset`]: inductive neighborhood sampling, normalization, synthetic webs, file I/O.
//! - [`zspace`]: sparse and full matrix encodings of graph samples.
//! - [`nn`]: a small tensor/layer toolkit with explicit backward passes and Adam.
//! - [`diffusion`]: conditional analog diffusion over either encoding with a 1D U-Net.
//! - [`argen`]: the autoregressive decoder-only transformer.
//! - [`assembly`]: stacking samples along helical or parametric paths.
//! - [`meshing`]: capsule SDF, smoothing, marching cubes and binary STL.
//! - [`checkpoint`] and [`eval`]: model persistence and conditioning-fidelity reports.
//! - [`training`]: the minibatch loop shared by the command line and tests.

pub mod argen;
pub mod assembly;
pub mod checkpoint;
pub mod dataset;
pub mod diffusion;
mod error;
pub mod eval;
pub mod graph;
pub mod meshing;
pub mod nn;
pub mod stats;
pub mod training;
pub mod zspace;

pub use error::{Error, Result};
pub use graph::{Graph, Permutation, Point3};

/// Maximum number of nodes in a graph sample.
pub const MAX_NODES: usize = 64;

/// Maximum node degree of a web-conformant graph.
pub const NEIGH_MAX: usize = 6;

/// Number of conditioning features.
pub const NUM_FEATURES: usize = 7;
