//! Poses, pinhole intrinsics and projection.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Rigid world-from-camera transform: `x_world = R * x_cam + t`.
///
/// The translation is therefore the camera centre in world coordinates.
/// The quaternion is kept with a non-negative scalar part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: canonical(rotation),
            translation,
        }
    }

    /// Builds a pose from raw `(w, x, y, z)` components, validating the norm.
    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Result<Self> {
        if q.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite pose".into()));
        }
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if (quat.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!(
                "pose quaternion norm {} is not unit",
                quat.norm()
            )));
        }
        Ok(Pose::new(
            UnitQuaternion::new_unchecked(quat),
            Vector3::from(t),
        ))
    }

    /// Builds the world-from-camera pose from a camera-from-world rotation and translation,
    /// i.e. from `x_cam = r * x_world + t`.
    pub fn from_camera_from_world(r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*r);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let inv = q.inverse();
        Pose::new(inv, -(inv * t))
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn centre(&self) -> Point3 {
        self.translation
    }

    /// Maps a world point into the camera frame.
    pub fn world_to_camera(&self, p: &Point3) -> Point3 {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    pub fn camera_to_world(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Intrinsics for a centred principal point and a horizontal field of view in degrees.
    pub fn from_fov(width: u32, height: u32, hfov_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    /// Unit bearing vector through a pixel.
    pub fn bearing(&self, px: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0).normalize()
    }
}

/// Outcome of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel(Vector2<f64>),
    BehindCamera,
}

impl Projection {
    pub fn pixel(self) -> Option<Vector2<f64>> {
        match self {
            Projection::Pixel(p) => Some(p),
            Projection::BehindCamera => None,
        }
    }
}

/// Pinhole projection of a world point; points with non-positive depth are flagged.
pub fn reproject(point: &Point3, pose: &Pose, k: &CameraIntrinsics) -> Projection {
    project_camera(&pose.world_to_camera(point), k)
}

pub(crate) fn project_camera(pc: &Point3, k: &CameraIntrinsics) -> Projection {
    if pc.z <= 0.0 {
        return Projection::BehindCamera;
    }
    Projection::Pixel(Vector2::new(
        k.fx * pc.x / pc.z + k.cx,
        k.fy * pc.y / pc.z + k.cy,
    ))
}

/// Rotation that points the camera's +z axis along `forward` with +y roughly along `down`.
pub fn look_rotation(forward: &Vector3<f64>, down: &Vector3<f64>) -> UnitQuaternion<f64> {
    let z = forward.normalize();
    let x = down.cross(&z).normalize();
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 500.0,
            fy: 510.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = reproject(&Point3::new(0.0, 0.0, 1.0), &Pose::identity(), &k());
        assert_eq!(p, Projection::Pixel(Vector2::new(320.0, 240.0)));
    }

    #[test]
    fn behind_camera_is_flagged() {
        let p = reproject(&Point3::new(0.0, 0.0, -1.0), &Pose::identity(), &k());
        assert_eq!(p, Projection::BehindCamera);
        let p = reproject(&Point3::new(1.0, 0.0, 0.0), &Pose::identity(), &k());
        assert_eq!(p, Projection::BehindCamera);
    }

    #[test]
    fn matches_matrix_projection() {
        // Independent route: P = K [R^T | -R^T C] applied to homogeneous coordinates.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let axis = Vector3::new(rng.random(), rng.random(), rng.random::<f64>()) - Vector3::repeat(0.5);
            let q = UnitQuaternion::from_scaled_axis(axis * 2.0);
            let c = Vector3::new(rng.random(), rng.random(), rng.random::<f64>()) * 10.0;
            let pose = Pose::new(q, c);
            let x = Vector3::new(rng.random(), rng.random(), rng.random::<f64>()) * 20.0;
            let kk = k();
            let kmat = Matrix3::new(kk.fx, 0.0, kk.cx, 0.0, kk.fy, kk.cy, 0.0, 0.0, 1.0);
            let r = q.to_rotation_matrix().into_inner();
            let h = kmat * (r.transpose() * x - r.transpose() * c);
            match reproject(&x, &pose, &kk) {
                Projection::Pixel(px) => {
                    assert!(h.z > 0.0);
                    assert!((px.x - h.x / h.z).abs() < 1e-9 * (1.0 + px.x.abs()));
                    assert!((px.y - h.y / h.z).abs() < 1e-9 * (1.0 + px.y.abs()));
                }
                Projection::BehindCamera => assert!(h.z <= 0.0),
            }
        }
    }

    #[test]
    fn canonical_sign() {
        let q = UnitQuaternion::new_unchecked(Quaternion::new(-0.5, 0.5, 0.5, 0.5));
        let p = Pose::new(q, Vector3::zeros());
        assert!(p.wxyz()[0] >= 0.0);
        assert!(Pose::from_wxyz([1.0, 0.1, 0.0, 0.0], [0.0; 3]).is_err());
    }

    #[test]
    fn camera_from_world_round_trip() {
        let q = UnitQuaternion::from_euler_angles(0.1, -0.4, 1.2);
        let pose = Pose::new(q, Vector3::new(1.0, 2.0, 3.0));
        let r = pose.rotation_matrix().transpose();
        let t = -(r * pose.translation);
        let back = Pose::from_camera_from_world(&r, &t);
        assert!((back.translation - pose.translation).norm() < 1e-12);
        assert!(back.rotation.angle_to(&pose.rotation) < 1e-12);
    }
}
