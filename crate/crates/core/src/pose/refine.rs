//! Levenberg-Marquardt polish of a pose on its inlier correspondences.

use nalgebra::{Matrix2x3, Matrix3, Matrix6, Rotation3, Vector3, Vector6};

use super::Correspondence;
use crate::error::{Error, Result};
use crate::geometry::{project_camera, CameraIntrinsics, Pose};

pub const REFINE_MAX_ITERATIONS: usize = 50;
pub const REFINE_MIN_STEP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOutcome {
    pub pose: Pose,
    pub converged: bool,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

/// Sum of squared pixel residuals; infinite if any point is behind the camera.
pub fn reprojection_cost(corr: &[Correspondence], pose: &Pose, k: &CameraIntrinsics) -> f64 {
    let (r, t) = camera_from_world(pose);
    cost_cw(corr, &r, &t, k)
}

fn camera_from_world(pose: &Pose) -> (Matrix3<f64>, Vector3<f64>) {
    let r = pose.rotation_matrix().transpose();
    (r, -(r * pose.translation))
}

fn cost_cw(corr: &[Correspondence], r: &Matrix3<f64>, t: &Vector3<f64>, k: &CameraIntrinsics) -> f64 {
    corr.iter()
        .map(|c| match project_camera(&(r * c.point + t), k).pixel() {
            Some(p) => (p - c.pixel).norm_squared(),
            None => f64::INFINITY,
        })
        .sum()
}

/// Minimises the summed squared reprojection error starting from `init`.
///
/// The returned pose never has a higher cost than `init`. `converged` is false
/// when the iteration budget ran out before the update fell below
/// [`REFINE_MIN_STEP`].
pub fn refine_pose(corr: &[Correspondence], init: &Pose, k: &CameraIntrinsics) -> Result<RefineOutcome> {
    if corr.len() < 4 {
        return Err(Error::InsufficientMatches { found: corr.len(), required: 4 });
    }
    let (mut r, mut t) = camera_from_world(init);
    let initial_cost = cost_cw(corr, &r, &t, k);
    let mut cost = initial_cost;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < REFINE_MAX_ITERATIONS && cost.is_finite() {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in corr {
            let pc = r * c.point + t;
            let z = pc.z;
            let u = k.fx * pc.x / z + k.cx - c.pixel.x;
            let v = k.fy * pc.y / z + k.cy - c.pixel.y;
            let dproj = Matrix2x3::new(
                k.fx / z,
                0.0,
                -k.fx * pc.x / (z * z),
                0.0,
                k.fy / z,
                -k.fy * pc.y / (z * z),
            );
            // d(pc)/d(omega) = -[pc]x, d(pc)/d(delta) = I.
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * -pc.cross_matrix()));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
            let res = nalgebra::Vector2::new(u, v);
            jtj += j.transpose() * j;
            jtr += j.transpose() * res;
        }
        let mut damped = jtj;
        for i in 0..6 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(step) = damped.cholesky().map(|ch| ch.solve(&-jtr)) else {
            lambda *= 10.0;
            continue;
        };
        if step.norm() < REFINE_MIN_STEP {
            converged = true;
            break;
        }
        let omega = Vector3::new(step[0], step[1], step[2]);
        let nr = Rotation3::new(omega).into_inner() * r;
        let nt = Rotation3::new(omega).into_inner() * t + Vector3::new(step[3], step[4], step[5]);
        let ncost = cost_cw(corr, &nr, &nt, k);
        if ncost < cost {
            r = nr;
            t = nt;
            cost = ncost;
            lambda = (lambda * 0.1).max(1e-12);
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!("pose refinement stopped after {iterations} iterations without converging");
    }
    let pose = Pose::from_camera_from_world(&r, &t);
    let final_cost = reprojection_cost(corr, &pose, k);
    if final_cost >= initial_cost {
        return Ok(RefineOutcome { pose: *init, converged, iterations, initial_cost, final_cost: initial_cost });
    }
    Ok(RefineOutcome { pose, converged, iterations, initial_cost, final_cost })
}
