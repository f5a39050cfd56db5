use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Localisation thresholds `(metres, degrees)`, loosest last.
pub const RECALL_THRESHOLDS: [(f64, f64); 3] = [(0.25, 2.0), (0.5, 5.0), (5.0, 10.0)];

/// `(camera centre distance in metres, rotation angle in degrees)`.
///
/// The angle is `arccos((trace(R_gt^T R_est) - 1) / 2)`, evaluated through
/// `atan2` with the skew part so it stays accurate near zero.
pub fn pose_errors(est: &Pose, gt: &Pose) -> (f64, f64) {
    let t = (est.centre() - gt.centre()).norm();
    let m = gt.rotation_matrix().transpose() * est.rotation_matrix();
    let c = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = nalgebra::Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    (t, (0.5 * skew.norm()).atan2(c).to_degrees())
}

/// Per-query localisation error; `None` for a failed query.
pub type QueryError = Option<(f64, f64)>;

/// Fraction of queries within each `(t, R)` pair; failures are misses.
pub fn recall_at_thresholds(errors: &[QueryError], thresholds: &[(f64, f64)]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::UndefinedMetric("recall over an empty query set".into()));
    }
    if let Some(bad) = thresholds.iter().find(|(t, r)| !(*t > 0.0 && *r > 0.0)) {
        return Err(Error::InvalidArgument(format!("threshold {bad:?} must be positive")));
    }
    Ok(thresholds
        .iter()
        .map(|&(tt, rt)| {
            let hits = errors.iter().flatten().filter(|(t, r)| *t <= tt && *r <= rt).count();
            hits as f64 / errors.len() as f64
        })
        .collect())
}

/// Median translation and rotation errors with failures as infinite error.
pub fn median_errors(errors: &[QueryError]) -> Result<(f64, f64)> {
    if errors.is_empty() {
        return Err(Error::UndefinedMetric("median over an empty query set".into()));
    }
    let mut t: Vec<f64> = errors.iter().map(|e| e.map_or(f64::INFINITY, |e| e.0)).collect();
    let mut r: Vec<f64> = errors.iter().map(|e| e.map_or(f64::INFINITY, |e| e.1)).collect();
    Ok((median(&mut t), median(&mut r)))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else if v[n / 2].is_infinite() {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalMetrics {
    pub recall: f64,
    pub precision: f64,
    /// Submap size over map size.
    pub reduction: f64,
}

/// Compares retrieved ids with the ground-truth visible ids. Both must be sorted.
pub fn retrieval_metrics(submap_ids: &[u64], visible_ids: &[u64], map_size: usize) -> Result<RetrievalMetrics> {
    if visible_ids.is_empty() {
        return Err(Error::UndefinedMetric("no visible points".into()));
    }
    if map_size == 0 {
        return Err(Error::UndefinedMetric("empty map".into()));
    }
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < submap_ids.len() && j < visible_ids.len() {
        match submap_ids[i].cmp(&visible_ids[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(RetrievalMetrics {
        recall: common as f64 / visible_ids.len() as f64,
        precision: if submap_ids.is_empty() { 0.0 } else { common as f64 / submap_ids.len() as f64 },
        reduction: submap_ids.len() as f64 / map_size as f64,
    })
}
