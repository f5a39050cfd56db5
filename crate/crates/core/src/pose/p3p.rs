//! Minimal three-point absolute pose (Grunert's quartic).

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Point3, Pose};

/// Real roots of `c[0] x^n + ... + c[n]`, polished by Newton steps.
pub(crate) fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut c: Vec<f64> = coeffs.iter().map(|v| v / scale).collect();
    while c.len() > 1 && c[0].abs() < 1e-14 {
        c.remove(0);
    }
    let n = c.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        comp[(0, j)] = -c[j + 1] / c[0];
    }
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    let eig = comp.complex_eigenvalues();
    let eval = |x: f64| c.iter().fold((0.0, 0.0), |(p, dp), &a| (p * x + a, dp * x + p));
    let mut out = Vec::new();
    for z in eig.iter() {
        if z.im.abs() > 1e-4 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..8 {
            let (p, dp) = eval(x);
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            x -= step;
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        if x.is_finite() {
            out.push(x);
        }
    }
    out
}

/// Candidate world-from-camera poses from three pixel / world point pairs.
///
/// Returns an empty list when the configuration has no real solution.
pub fn p3p_solve(pixels: &[Vector2<f64>; 3], points: &[Point3; 3], k: &CameraIntrinsics) -> Result<Vec<Pose>> {
    if pixels.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidArgument("non-finite pixel".into()));
    }
    let [p1, p2, p3] = *points;
    let e12 = p2 - p1;
    let e13 = p3 - p1;
    if e12.cross(&e13).norm() <= 1e-10 * e12.norm() * e13.norm() {
        return Err(Error::Degenerate("collinear points".into()));
    }
    let f: [Vector3<f64>; 3] = [k.bearing(&pixels[0]), k.bearing(&pixels[1]), k.bearing(&pixels[2])];

    let a2 = (p2 - p3).norm_squared();
    let b2 = (p1 - p3).norm_squared();
    let c2 = (p1 - p2).norm_squared();
    let ca = f[1].dot(&f[2]);
    let cb = f[0].dot(&f[2]);
    let cg = f[0].dot(&f[1]);

    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let bmc = (b2 - c2) / b2;
    let bma = (b2 - a2) / b2;
    let a4 = (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca;
    let a3 = 4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
    let a2c = 2.0
        * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * bmc * ca * ca - 4.0 * apc * ca * cb * cg
            + 2.0 * bma * cg * cg);
    let a1 = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg);
    let a0 = (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg * cg;

    let mut poses: Vec<Pose> = Vec::new();
    for v in real_roots(&[a4, a3, a2c, a1, a0]) {
        if v <= 0.0 {
            continue;
        }
        // s3 = v s1; the second constraint fixes s1.
        let den = 1.0 + v * v - 2.0 * v * cb;
        if den <= 0.0 {
            continue;
        }
        let s1 = (b2 / den).sqrt();
        let s3 = v * s1;
        // Third constraint: s2^2 - 2 s1 cg s2 + s1^2 - c^2 = 0. Keep the root that best fits the first.
        let disc = (s1 * cg).powi(2) - (s1 * s1 - c2);
        let roots: Vec<f64> = if disc < 0.0 {
            vec![s1 * cg]
        } else {
            vec![s1 * cg + disc.sqrt(), s1 * cg - disc.sqrt()]
        };
        let first = |s2: f64| (s2 * s2 + s3 * s3 - 2.0 * s2 * s3 * ca - a2).abs();
        let Some(s2) = roots
            .into_iter()
            .filter(|s| *s > 0.0)
            .min_by(|x, y| first(*x).total_cmp(&first(*y)))
        else {
            continue;
        };
        let Some(depths) = polish_depths([s1, s2, s3], [a2, b2, c2], [ca, cb, cg]) else {
            continue;
        };
        let cam = [f[0] * depths[0], f[1] * depths[1], f[2] * depths[2]];
        let pose = align(&cam, points);
        if pose.translation.iter().all(|v| v.is_finite())
            && !poses.iter().any(|q| same_pose(q, &pose))
        {
            poses.push(pose);
        }
    }
    Ok(poses)
}

fn same_pose(a: &Pose, b: &Pose) -> bool {
    (a.translation - b.translation).norm() < 1e-9 * (1.0 + a.translation.norm())
        && a.rotation.angle_to(&b.rotation) < 1e-9
}

/// Gauss-Newton on the three law-of-cosines constraints.
fn polish_depths(s: [f64; 3], d2: [f64; 3], cs: [f64; 3]) -> Option<[f64; 3]> {
    let [a2, b2, c2] = d2;
    let [ca, cb, cg] = cs;
    let mut x = Vector3::from(s);
    let resid = |x: &Vector3<f64>| {
        Vector3::new(
            x[1] * x[1] + x[2] * x[2] - 2.0 * x[1] * x[2] * ca - a2,
            x[0] * x[0] + x[2] * x[2] - 2.0 * x[0] * x[2] * cb - b2,
            x[0] * x[0] + x[1] * x[1] - 2.0 * x[0] * x[1] * cg - c2,
        )
    };
    for _ in 0..20 {
        let r = resid(&x);
        if r.norm() <= 1e-15 * (a2 + b2 + c2) {
            break;
        }
        let j = Matrix3::new(
            0.0,
            2.0 * x[1] - 2.0 * x[2] * ca,
            2.0 * x[2] - 2.0 * x[1] * ca,
            2.0 * x[0] - 2.0 * x[2] * cb,
            0.0,
            2.0 * x[2] - 2.0 * x[0] * cb,
            2.0 * x[0] - 2.0 * x[1] * cg,
            2.0 * x[1] - 2.0 * x[0] * cg,
            0.0,
        );
        let Some(step) = j.lu().solve(&r) else { break };
        let next = x - step;
        if resid(&next).norm() >= r.norm() {
            break;
        }
        x = next;
    }
    let r = resid(&x);
    let fits = r[0].abs() <= 1e-9 * a2 && r[1].abs() <= 1e-9 * b2 && r[2].abs() <= 1e-9 * c2;
    (fits && x.iter().all(|v| v.is_finite() && *v > 0.0)).then(|| [x[0], x[1], x[2]])
}

/// Rigid transform taking three camera-frame points onto their world positions.
fn align(cam: &[Point3; 3], world: &[Point3; 3]) -> Pose {
    let frame = |p: &[Point3; 3]| {
        let x = (p[1] - p[0]).normalize();
        let z = x.cross(&(p[2] - p[0])).normalize();
        let y = z.cross(&x);
        Matrix3::from_columns(&[x, y, z])
    };
    let r = frame(world) * frame(cam).transpose();
    let cw = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let t = cw - r * cc;
    Pose::new(
        nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r)),
        t,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::reproject;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::from_fov(640, 480, 60.0)
    }

    fn random_setup(rng: &mut ChaCha8Rng) -> (Pose, [Point3; 3], [Vector2<f64>; 3]) {
        loop {
            let q = UnitQuaternion::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0));
            let pose = Pose::new(q, Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)));
            let mut pts = [Point3::zeros(); 3];
            let mut px = [Vector2::zeros(); 3];
            let mut ok = true;
            for i in 0..3 {
                let pc = Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(2.0..15.0));
                pts[i] = pose.camera_to_world(&pc);
                match reproject(&pts[i], &pose, &k()).pixel() {
                    Some(p) => px[i] = p,
                    None => ok = false,
                }
            }
            let tri = (pts[1] - pts[0]).cross(&(pts[2] - pts[0])).norm();
            if ok && tri > 0.5 {
                return (pose, pts, px);
            }
        }
    }

    fn max_residual(pose: &Pose, pts: &[Point3; 3], px: &[Vector2<f64>; 3]) -> f64 {
        (0..3)
            .map(|i| reproject(&pts[i], pose, &k()).pixel().map_or(f64::INFINITY, |p| (p - px[i]).norm()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn roots_of_known_quartic() {
        // (x-1)(x+2)(x-3)(x^2+1) has three real roots.
        let mut r = real_roots(&[1.0, -2.0, -4.0, 4.0, -5.0, 6.0]);
        r.sort_by(f64::total_cmp);
        assert_eq!(r.len(), 3);
        for (a, b) in r.iter().zip([-2.0, 1.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ground_truth_among_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3000 {
            let (pose, pts, px) = random_setup(&mut rng);
            let cands = p3p_solve(&px, &pts, &k()).unwrap();
            assert!(!cands.is_empty() && cands.len() <= 4);
            let best = cands
                .iter()
                .map(|c| (c.translation - pose.translation).norm() + c.rotation.angle_to(&pose.rotation))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "best {best}");
            for c in &cands {
                assert!(max_residual(c, &pts, &px) < 1e-6);
            }
        }
    }

    #[test]
    fn collinear_is_degenerate() {
        let pts = [Point3::new(0.0, 0.0, 5.0), Point3::new(1.0, 0.0, 5.0), Point3::new(2.0, 0.0, 5.0)];
        let px = [Vector2::new(320.0, 240.0), Vector2::new(400.0, 240.0), Vector2::new(480.0, 240.0)];
        assert!(matches!(p3p_solve(&px, &pts, &k()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn symmetric_layout_has_several_solutions() {
        // Equilateral triangle seen head-on from its axis.
        let pose = Pose::identity();
        let pts: [Point3; 3] = std::array::from_fn(|i| {
            let a = i as f64 * std::f64::consts::TAU / 3.0;
            Point3::new(a.cos(), a.sin(), 4.0)
        });
        let px: [Vector2<f64>; 3] = std::array::from_fn(|i| reproject(&pts[i], &pose, &k()).pixel().unwrap());
        let cands = p3p_solve(&px, &pts, &k()).unwrap();
        assert!(cands.len() >= 2, "{} candidates", cands.len());
        for c in &cands {
            assert!(max_residual(c, &pts, &px) < 1e-6);
        }
    }
}
