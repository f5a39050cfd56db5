//! The four-stage relocalisation pipeline.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::Pose;
use crate::pose::{
    match_descriptors, ransac_pnp, Correspondence, MatchMode, PoseEstimate, QueryFeatures, RansacConfig,
    StageTimings,
};
use crate::retrieval::{radius_retrieve, sample_structure, RetrievalConfig, SpatialIndex, Submap};
use crate::scene::SceneBundle;
use crate::vae::VaeModel;

/// Everything needed to localise queries against one scene.
pub struct Localizer<'a> {
    pub bundle: &'a SceneBundle,
    pub model: &'a VaeModel,
    pub index: &'a SpatialIndex,
    pub retrieval: RetrievalConfig,
    pub ransac: RansacConfig,
    pub matching: MatchMode,
    pub exec: Exec,
}

fn micros(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e6
}

impl Localizer<'_> {
    /// Samples structure, retrieves the submap, matches and estimates the pose.
    ///
    /// An empty submap or too few matches yield an unsuccessful estimate rather
    /// than an error.
    pub fn localize(&self, query: &QueryFeatures) -> Result<(PoseEstimate, Submap)> {
        self.retrieval.validate()?;
        let k = self
            .bundle
            .camera(query.intrinsics_id)
            .ok_or_else(|| Error::Integrity(format!("query {} uses unknown camera {}", query.id, query.intrinsics_id)))?;
        query.validate(k)?;
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let generated = sample_structure(self.model, &query.embedding, self.retrieval.samples, self.retrieval.seed)?;
        timings.global_search_us = micros(t);

        let t = Instant::now();
        let submap = radius_retrieve(
            self.index,
            self.bundle,
            &generated.points,
            self.retrieval.radius,
            self.retrieval.voxel,
            self.exec,
        )?;
        timings.tree_lookup_us = micros(t);

        let failed = |matches, timings| PoseEstimate {
            pose: Pose::identity(),
            inliers: Vec::new(),
            matches,
            iterations: 0,
            success: false,
            submap_size: submap.len(),
            timings,
        };

        let t = Instant::now();
        let matches = match match_descriptors(query, &submap, self.matching, self.exec) {
            Ok(m) => m,
            Err(Error::EmptySubmap) => {
                log::info!("query {}: empty submap", query.id);
                return Ok((failed(Vec::new(), timings), submap));
            }
            Err(e) => return Err(e),
        };
        timings.matching_us = micros(t);

        let t = Instant::now();
        let corr: Vec<Correspondence> = matches
            .iter()
            .map(|m| Correspondence { pixel: query.keypoints[m.keypoint], point: submap.positions[m.submap_index] })
            .collect();
        let outcome = match ransac_pnp(&corr, k, &self.ransac, self.exec) {
            Ok(o) => o,
            Err(Error::InsufficientMatches { found, required }) => {
                log::info!("query {}: {found} matches, {required} required", query.id);
                timings.pose_us = micros(t);
                return Ok((failed(matches, timings), submap));
            }
            Err(e) => return Err(e),
        };
        timings.pose_us = micros(t);
        let est = PoseEstimate {
            pose: outcome.pose,
            inliers: outcome.inliers,
            matches,
            iterations: outcome.iterations,
            success: outcome.success,
            submap_size: submap.len(),
            timings,
        };
        Ok((est, submap))
    }
}
