//! Visible structure retrieval for structure-based camera relocalisation.
//!
//! A small scene-specific conditional VAE learns to map a global image
//! embedding plus Gaussian noise onto the 3D map points visible in that
//! image. At query time the decoder's samples select a submap of the SfM
//! cloud by exact radius search, and the query's keypoints are matched
//! against that submap only before PnP-RANSAC.

mod codec;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
mod localize;
pub mod pose;
pub mod retrieval;
pub mod scene;
pub mod vae;

pub use error::{Error, Result};
pub use exec::Exec;
pub use localize::Localizer;
