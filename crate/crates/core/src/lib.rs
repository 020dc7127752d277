//! Synthetic 3D ultrasound semantic segmentation.
//!
//! The pipeline runs RF synthesis, DAS/MVDR beamforming onto a spherical
//! grid, CA-CFAR gating and linear range compensation, resampling into a
//! Cartesian intensity volume, rule-based LiDAR box annotation, occupancy
//! mask projection, and finally a two-stage 3D U-Net trained with Dice loss.

pub mod annotate;
pub mod beamform;
pub mod config;
pub mod cvol;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod pipeline;
pub mod processing;
pub mod rng;
pub mod scene;
pub mod unet;

pub use error::{Error, Result};
