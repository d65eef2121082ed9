//! Biventricular volumetric meshes from multi-view cardiac segmentations.

pub mod anatomy;
pub mod error;
pub mod geometry;
pub mod contours;
pub mod fem;
pub mod frames;
pub mod labelgrid;
pub mod surface;
pub mod volmesh;
pub mod fields;
pub mod phenotypes;
pub mod cohort;
pub mod pipeline;

pub use error::{Error, Result};
