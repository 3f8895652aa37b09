//! Orthogonal-plane mixture depth: plane banks, homography warping, Laplacian
//! mixture synthesis, occlusion masks, losses, metrics, and file formats.

pub mod camera;
pub mod config;
pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod mixture;
pub mod numeric;
pub mod occlusion;
pub mod pipeline;
pub mod planes;
pub mod raster;
pub mod scene;
pub mod warp;

pub use error::{Error, Result};
