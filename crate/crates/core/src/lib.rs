//! Ensembles of voxel radiance fields trained from posed images, with
//! per-position density uncertainty, controlled data perturbations and
//! uncertainty-driven artifact removal.

pub mod config;
pub mod dataset;
pub mod desk;
pub mod ensemble;
pub mod error;
pub mod export;
pub mod field;
pub mod geometry;
pub mod perturb;
pub mod pipeline;
pub mod postprocess;
pub mod rng;
mod snapshot;
pub mod trainer;

pub use config::{PercentileScope, RunConfig};
pub use error::{Error, Result};
