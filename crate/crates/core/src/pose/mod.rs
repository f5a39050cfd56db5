//! 2D-3D matching and camera pose estimation.

mod matcher;
mod p3p;
mod query_io;
mod ransac;
mod refine;

use nalgebra::Vector2;
use ndarray::ArrayView2;

pub use matcher::{match_descriptors, mutual_nearest, Match2D3D, MatchMode, DEFAULT_RATIO};
pub use p3p::p3p_solve;
pub use query_io::{
    load_queries, parse_query_text, queries_from_bytes, queries_to_bytes, save_queries, write_query_text,
    QUERY_MAGIC, QUERY_TEXT_HEADER, QUERY_VERSION,
};
pub use ransac::{inlier_set, ransac_pnp, RansacConfig, RansacOutcome};
pub use refine::{refine_pose, reprojection_cost, RefineOutcome, REFINE_MAX_ITERATIONS, REFINE_MIN_STEP};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Point3, Pose};
use crate::scene::DESCRIPTOR_NORM_TOL;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub pixel: Vector2<f64>,
    pub point: Point3,
}

/// Keypoints, descriptors and global embedding of one query image.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeatures {
    pub id: u64,
    pub embedding: Vec<f32>,
    pub keypoints: Vec<Vector2<f64>>,
    /// Row-major, `descriptor_dim` values per keypoint.
    pub descriptors: Vec<f32>,
    pub descriptor_dim: usize,
    pub intrinsics_id: u32,
}

impl QueryFeatures {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.descriptor_dim..(i + 1) * self.descriptor_dim]
    }

    pub fn descriptor_view(&self) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((self.keypoints.len(), self.descriptor_dim), &self.descriptors).unwrap()
    }

    pub fn validate(&self, k: &CameraIntrinsics) -> Result<()> {
        if self.descriptor_dim == 0 || self.descriptors.len() != self.keypoints.len() * self.descriptor_dim {
            return Err(Error::Shape(format!(
                "query {}: {} keypoints but {} descriptor values of dim {}",
                self.id,
                self.keypoints.len(),
                self.descriptors.len(),
                self.descriptor_dim
            )));
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("query {}: non-finite embedding", self.id)));
        }
        if let Some(p) = self.keypoints.iter().find(|p| !(p.iter().all(|v| v.is_finite()) && k.contains(p))) {
            return Err(Error::Data(format!("query {}: keypoint {p:?} outside the image", self.id)));
        }
        for i in 0..self.len() {
            let n = self.descriptor(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > DESCRIPTOR_NORM_TOL {
                return Err(Error::Data(format!("query {}: descriptor {i} has norm {n}", self.id)));
            }
        }
        Ok(())
    }
}

/// A query as stored on disk, with its ground-truth pose when known.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub features: QueryFeatures,
    pub ground_truth: Option<Pose>,
}

/// Wall-clock time per localisation stage, microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    /// Decoder forward pass producing the generated points.
    pub global_search_us: f64,
    pub tree_lookup_us: f64,
    pub matching_us: f64,
    pub pose_us: f64,
}

impl StageTimings {
    pub const STAGES: [&'static str; 4] = ["global search", "tree lookup", "matching", "pose"];

    pub fn as_array(&self) -> [f64; 4] {
        [self.global_search_us, self.tree_lookup_us, self.matching_us, self.pose_us]
    }

    pub fn total_us(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    /// Identity when `success` is false.
    pub pose: Pose,
    /// Indices into `matches`.
    pub inliers: Vec<usize>,
    pub matches: Vec<Match2D3D>,
    pub iterations: usize,
    pub success: bool,
    pub submap_size: usize,
    pub timings: StageTimings,
}
