//! Anisotropic spectral wavelets on triangle meshes and the multi-scale graph
//! convolution built on them, with a dense shape-correspondence harness.
//!
//! The pipeline, bottom-up:
//!
//! - [`mesh`]: validated triangle meshes with lumped vertex mass.
//! - [`curvature`]: principal curvature directions that orient anisotropy.
//! - [`operators`]: cotangent and anisotropic Laplace-Beltrami stiffness.
//! - [`spectrum`]: smallest generalized eigenpairs via shift-invert Krylov.
//! - [`wavelets`]: Mexican-hat filter banks, analysis/synthesis, L1-normalized
//!   factored filtering.
//! - [`network`]: the learnable layers, loss, gradients and Adam.
//! - [`corresp`]: nearest-neighbour matching and geodesic error metrics.
//! - [`synth`]: synthetic shapes with ground-truth correspondence.
//! - [`container`], [`config`], [`pipeline`]: file formats, experiment
//!   configuration and the batch commands behind the `amlconv` binary.

pub mod config;
pub mod container;
pub mod corresp;
pub mod curvature;
pub mod mesh;
pub mod network;
pub mod operators;
pub mod pipeline;
pub mod spectrum;
pub mod sparse;
pub mod synth;
pub mod wavelets;
