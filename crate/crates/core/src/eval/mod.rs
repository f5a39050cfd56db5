//! Synthetic scenes, metrics and reports.

mod metrics;
mod report;
mod synthetic;

pub use metrics::{
    median_errors, pose_errors, recall_at_thresholds, retrieval_metrics, QueryError, RetrievalMetrics,
    RECALL_THRESHOLDS,
};
pub use report::{
    image_retrieval_database_bytes, loss_curve, storage_report, timing_report, EvalReport, QueryRecord,
    StorageReport, TimingReport,
};
pub use synthetic::{frustum_visible, generate_synthetic_scene, SyntheticScene, SyntheticSceneConfig};

use crate::error::Result;
use crate::geometry::Pose;
use crate::localize::Localizer;
use crate::pose::{PoseEstimate, Query};

/// Localises every query and scores it against its ground truth when present.
///
/// `visible` supplies ground-truth visible ids per query for retrieval metrics.
pub fn evaluate_queries(
    localizer: &Localizer<'_>,
    queries: &[Query],
    visible: impl Fn(u64) -> Option<Vec<u64>>,
) -> Result<(Vec<QueryRecord>, Vec<PoseEstimate>)> {
    let mut records = Vec::with_capacity(queries.len());
    let mut estimates = Vec::with_capacity(queries.len());
    let map_size = localizer.bundle.points().len();
    for q in queries {
        let (est, submap) = localizer.localize(&q.features)?;
        let mut record = PoseRecord::new(q.features.id, &est).score(q.ground_truth.as_ref());
        record.timings = Some(est.timings);
        record.retrieval = match visible(q.features.id) {
            Some(ids) if !ids.is_empty() => Some(retrieval_metrics(&submap.ids, &ids, map_size)?),
            _ => None,
        };
        records.push(record);
        estimates.push(est);
    }
    Ok((records, estimates))
}

/// One line of a pose-record file.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub id: u64,
    /// `None` when localisation failed.
    pub pose: Option<Pose>,
    pub submap_size: usize,
    pub matches: usize,
    pub inliers: usize,
}

impl PoseRecord {
    pub fn new(id: u64, est: &PoseEstimate) -> Self {
        PoseRecord {
            id,
            pose: est.success.then_some(est.pose),
            submap_size: est.submap_size,
            matches: est.matches.len(),
            inliers: est.inliers.len(),
        }
    }

    /// Scores the record against a ground-truth pose.
    pub fn score(&self, gt: Option<&Pose>) -> QueryRecord {
        let (t_err, r_err) = match (self.pose, gt) {
            (Some(p), Some(gt)) => pose_errors(&p, gt),
            _ => (f64::INFINITY, f64::INFINITY),
        };
        QueryRecord {
            id: self.id,
            success: self.pose.is_some() && gt.is_some(),
            t_err,
            r_err,
            submap_size: self.submap_size,
            matches: self.matches,
            inliers: self.inliers,
            retrieval: None,
            timings: None,
        }
    }
}

pub const POSE_RECORDS_HEADER: &str = "# id success qw qx qy qz tx ty tz submap matches inliers";

/// Writes one line per estimate. Failed estimates are written with `success = 0`.
pub fn format_pose_records(ids: &[u64], estimates: &[PoseEstimate]) -> String {
    let mut s = String::from(POSE_RECORDS_HEADER);
    s.push('\n');
    for (id, e) in ids.iter().zip(estimates) {
        let q = e.pose.wxyz();
        let t = e.pose.translation;
        s += &format!(
            "{id} {} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {} {} {}\n",
            e.success as u8,
            q[0],
            q[1],
            q[2],
            q[3],
            t.x,
            t.y,
            t.z,
            e.submap_size,
            e.matches.len(),
            e.inliers.len()
        );
    }
    s
}

/// Parses the output of [`format_pose_records`].
pub fn parse_pose_records(text: &str) -> Result<Vec<PoseRecord>> {
    let mut out = Vec::new();
    for (line, tag, mut f) in crate::scene::text::records(text) {
        let id: u64 = tag
            .parse()
            .map_err(|_| crate::Error::Format(format!("line {line}: bad query id {tag:?}")))?;
        let ok: u8 = f.next("success flag")?;
        let v: Vec<f64> = f.floats(7, "pose value")?;
        let submap_size = f.next("submap size")?;
        let matches = f.next("match count")?;
        let inliers = f.next("inlier count")?;
        f.end()?;
        let pose = Pose::from_wxyz([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6]])?;
        out.push(PoseRecord {
            id,
            pose: (ok == 1).then_some(pose),
            submap_size,
            matches,
            inliers,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::StageTimings;
    use nalgebra::{UnitQuaternion, Vector3};

    fn estimate(success: bool, angle: f64) -> PoseEstimate {
        PoseEstimate {
            pose: Pose::new(UnitQuaternion::from_euler_angles(angle, 0.2, -0.1), Vector3::new(1.5, -2.0, 0.25)),
            inliers: vec![0, 2, 3],
            matches: Vec::new(),
            iterations: 7,
            success,
            submap_size: 40,
            timings: StageTimings { global_search_us: 1.5, tree_lookup_us: 2.0, matching_us: 3.25, pose_us: 400.0 },
        }
    }

    #[test]
    fn pose_records_round_trip() {
        let est = vec![estimate(true, 0.3), estimate(false, -1.0), estimate(true, 3.0)];
        let text = format_pose_records(&[4, 9, 2], &est);
        let recs = parse_pose_records(&text).unwrap();
        assert_eq!(recs.len(), 3);
        for (r, (id, e)) in recs.iter().zip([4u64, 9, 2].iter().zip(&est)) {
            assert_eq!(*r, PoseRecord::new(*id, e));
        }
        assert!(recs[1].pose.is_none());
        assert_eq!(recs[0].inliers, 3);
    }

    #[test]
    fn scoring_against_ground_truth() {
        let e = estimate(true, 0.3);
        let r = PoseRecord::new(1, &e);
        let exact = r.score(Some(&e.pose));
        assert!(exact.success && exact.t_err == 0.0 && exact.r_err < 1e-12);
        assert!(!r.score(None).success);
        let failed = PoseRecord::new(1, &estimate(false, 0.3)).score(Some(&e.pose));
        assert!(!failed.success && failed.t_err.is_infinite());
    }

    #[test]
    fn malformed_pose_record_is_a_format_error() {
        let e = parse_pose_records("4 1 1 0 0 0 1 2\n").unwrap_err();
        assert!(matches!(e, crate::Error::Format(_)), "{e}");
    }
}
