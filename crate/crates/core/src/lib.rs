//! Depth- and normal-regularized Gaussian splatting on the CPU.
//!
//! The crate covers the whole pipeline: a differentiable rasterizer that
//! renders color, z-depth, normals and alpha; the depth/normal/scale loss
//! family with analytic gradients; monocular depth alignment; Adam training
//! with adaptive density control; oriented point extraction for external
//! Poisson meshing; and depth, image and mesh evaluation metrics.

pub mod align;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod kdtree;
pub mod losses;
pub mod metrics;
pub mod raster;
pub mod pointset;
pub mod scene;
pub mod synth;
pub mod train;
mod ssim;

pub use error::{Error, Result};
pub use grid::{Grid, ScalarMap, VectorMap};
pub use scene::{Camera, Gaussian, GaussianScene, RenderBuffers};
