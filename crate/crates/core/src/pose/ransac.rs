//! P3P hypothesise-and-verify with a final least-squares polish.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::p3p::p3p_solve;
use super::refine::refine_pose;
use super::Correspondence;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{reproject, CameraIntrinsics, Pose};

/// Hypotheses drawn and scored together before the stopping bound is updated.
const HYPOTHESIS_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Inlier threshold on reprojection error, pixels.
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub min_matches: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            threshold: 12.0,
            max_iterations: 10_000,
            confidence: 0.9999,
            min_matches: 12,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidArgument(format!("threshold {} must be positive", self.threshold)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidArgument(format!("confidence {} must lie in (0, 1)", self.confidence)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be positive".into()));
        }
        if self.min_matches < 4 {
            return Err(Error::InvalidArgument("min_matches must be at least 4".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome {
    pub pose: Pose,
    /// Indices into the correspondence list, ascending.
    pub inliers: Vec<usize>,
    pub iterations: usize,
    pub success: bool,
    /// False when the final refinement did not converge.
    pub refined: bool,
}

/// Indices of correspondences reprojecting within `threshold` pixels.
pub fn inlier_set(corr: &[Correspondence], pose: &Pose, k: &CameraIntrinsics, threshold: f64) -> Vec<usize> {
    corr.iter()
        .enumerate()
        .filter(|(_, c)| {
            reproject(&c.point, pose, k)
                .pixel()
                .is_some_and(|p| (p - c.pixel).norm() < threshold)
        })
        .map(|(i, _)| i)
        .collect()
}

fn residuals(corr: &[Correspondence], idx: &[usize], pose: &Pose, k: &CameraIntrinsics) -> Vec<f64> {
    idx.iter()
        .map(|&i| {
            reproject(&corr[i].point, pose, k)
                .pixel()
                .map_or(f64::INFINITY, |p| (p - corr[i].pixel).norm())
        })
        .collect()
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let w3 = inlier_ratio.powi(3);
    if w3 >= 1.0 {
        return 0.0;
    }
    if w3 <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - w3).ln()
}

/// Distinct triple of indices below `n`.
fn draw_triple(rng: &mut ChaCha8Rng, n: usize) -> [usize; 3] {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    let (lo, hi) = (a.min(b), a.max(b));
    let mut c = rng.random_range(0..n - 2);
    if c >= lo {
        c += 1;
    }
    if c >= hi {
        c += 1;
    }
    [a, b, c]
}

/// Best candidate of one minimal sample as `(inlier count, pose)`.
fn hypothesis(corr: &[Correspondence], triple: [usize; 3], k: &CameraIntrinsics, threshold: f64) -> Option<(usize, Pose)> {
    let px: [Vector2<f64>; 3] = triple.map(|i| corr[i].pixel);
    let pts = triple.map(|i| corr[i].point);
    let cands = p3p_solve(&px, &pts, k).ok()?;
    let mut best: Option<(usize, Pose)> = None;
    for pose in cands {
        let n = inlier_set(corr, &pose, k, threshold).len();
        if best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, pose));
        }
    }
    best
}

/// Polishes `pose` on `inliers`, then drops residual outliers relative to the
/// inliers' median residual and polishes again until the set is stable.
fn polish(corr: &[Correspondence], mut inliers: Vec<usize>, pose: Pose, k: &CameraIntrinsics) -> (Pose, bool) {
    let mut pose = pose;
    let mut refined = true;
    for _ in 0..4 {
        if inliers.len() < 4 {
            break;
        }
        let subset: Vec<Correspondence> = inliers.iter().map(|&i| corr[i]).collect();
        match refine_pose(&subset, &pose, k) {
            Ok(out) => {
                pose = out.pose;
                refined = out.converged;
            }
            Err(_) => break,
        }
        let res = residuals(corr, &inliers, &pose, k);
        let mut sorted = res.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let cut = 4.5 * median;
        let kept: Vec<usize> = inliers.iter().zip(&res).filter(|(_, r)| **r <= cut).map(|(i, _)| *i).collect();
        if kept.len() == inliers.len() || kept.len() < 4 {
            break;
        }
        inliers = kept;
    }
    (pose, refined)
}

pub fn ransac_pnp(corr: &[Correspondence], k: &CameraIntrinsics, cfg: &RansacConfig, exec: Exec) -> Result<RansacOutcome> {
    cfg.validate()?;
    if corr.len() < cfg.min_matches {
        return Err(Error::InsufficientMatches { found: corr.len(), required: cfg.min_matches });
    }
    let n = corr.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Pose)> = None;
    let mut iterations = 0;
    let mut bound = cfg.max_iterations as f64;
    while (iterations as f64) < bound.min(cfg.max_iterations as f64) {
        let batch = HYPOTHESIS_BATCH.min(cfg.max_iterations - iterations);
        let triples: Vec<[usize; 3]> = (0..batch).map(|_| draw_triple(&mut rng, n)).collect();
        let scored = exec.map(&triples, |t| hypothesis(corr, *t, k, cfg.threshold));
        for (count, pose) in scored.into_iter().flatten() {
            if best.as_ref().is_none_or(|(b, _)| count > *b) {
                best = Some((count, pose));
            }
        }
        iterations += batch;
        if let Some((count, _)) = best {
            bound = required_iterations(count as f64 / n as f64, cfg.confidence);
        }
    }
    let Some((_, pose)) = best else {
        return Ok(RansacOutcome { pose: Pose::identity(), inliers: Vec::new(), iterations, success: false, refined: false });
    };
    let initial = inlier_set(corr, &pose, k, cfg.threshold);
    let (pose, refined) = polish(corr, initial, pose, k);
    let inliers = inlier_set(corr, &pose, k, cfg.threshold);
    let success = inliers.len() >= cfg.min_matches;
    Ok(RansacOutcome {
        pose: if success { pose } else { Pose::identity() },
        inliers: if success { inliers } else { Vec::new() },
        iterations,
        success,
        refined,
    })
}
