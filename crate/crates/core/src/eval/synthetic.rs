//! Synthetic scenes with exact ground truth.
//!
//! Structure points lie on the inside wall of a vertical cylinder. Cameras
//! travel around an inner circle looking outwards with a smooth wobble, so
//! neighbouring cameras see overlapping arcs of the wall.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{look_rotation, reproject, CameraIntrinsics, Point3, Pose};
use crate::pose::{Query, QueryFeatures};
use crate::scene::{compute_norm_transform, MappingImage, SceneBundle, SfmPoint, DEFAULT_MARGIN};

const MIN_VISIBLE: usize = 8;
const MAX_RETRIES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneConfig {
    pub points: usize,
    /// Total camera count; every `query_every`-th one becomes a query.
    pub cameras: usize,
    pub query_every: usize,
    /// Cylinder diameter, metres.
    pub extent: f64,
    pub embedding_dim: usize,
    pub descriptor_dim: usize,
    /// Per-component standard deviation of observation descriptor noise.
    pub descriptor_noise: f64,
    /// Standard deviation of the smooth embedding signal per component.
    pub embedding_scale: f64,
    /// Frequency scale of the random features; larger is less smooth.
    pub embedding_frequency: f64,
    pub embedding_noise: f64,
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
    /// Points beyond this camera depth are not visible; `None` for unlimited.
    pub max_depth: Option<f64>,
    /// Probability of dropping a visible observation.
    pub dropout: f64,
    pub keypoint_noise_px: f64,
    /// Extra query keypoints with random descriptors.
    pub clutter: usize,
    /// Random offset applied to query poses, metres and degrees.
    pub query_jitter: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        SyntheticSceneConfig {
            points: 5000,
            cameras: 240,
            query_every: 6,
            extent: 100.0,
            embedding_dim: 64,
            descriptor_dim: 32,
            descriptor_noise: 0.05,
            embedding_scale: 3.0,
            embedding_frequency: 1.5,
            embedding_noise: 0.1,
            fov_deg: 60.0,
            width: 640,
            height: 480,
            max_depth: None,
            dropout: 0.0,
            keypoint_noise_px: 0.5,
            clutter: 0,
            query_jitter: (0.0, 0.0),
            seed: 0,
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.points < 100 {
            return bad("at least 100 points are required");
        }
        if self.cameras < 10 {
            return bad("at least 10 cameras are required");
        }
        if self.query_every < 2 {
            return bad("query_every must be at least 2");
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad("extent must be positive");
        }
        if self.embedding_dim == 0 || self.descriptor_dim == 0 {
            return bad("dimensions must be positive");
        }
        if !(self.fov_deg > 1.0 && self.fov_deg < 170.0) {
            return bad("field of view must lie in (1, 170) degrees");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        for v in [self.descriptor_noise, self.embedding_noise, self.keypoint_noise_px, self.embedding_scale, self.embedding_frequency] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("noise and scale parameters must be non-negative");
            }
        }
        Ok(())
    }

    pub fn query_count(&self) -> usize {
        self.cameras.div_ceil(self.query_every)
    }

    pub fn mapping_count(&self) -> usize {
        self.cameras - self.query_count()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub bundle: SceneBundle,
    pub queries: Vec<Query>,
    /// Ground-truth visible point ids per query id, ascending.
    pub query_visible: BTreeMap<u64, Vec<u64>>,
}

/// Smooth map from a camera pose to an embedding.
struct EmbeddingField {
    freq: Vec<[f64; 6]>,
    phase: Vec<f64>,
    amp: f64,
    extent: f64,
}

impl EmbeddingField {
    fn new(cfg: &SyntheticSceneConfig, rng: &mut ChaCha8Rng) -> Self {
        let n = Normal::new(0.0, cfg.embedding_frequency).unwrap();
        EmbeddingField {
            freq: (0..cfg.embedding_dim).map(|_| std::array::from_fn(|_| n.sample(rng))).collect(),
            phase: (0..cfg.embedding_dim).map(|_| rng.random_range(0.0..TAU)).collect(),
            amp: cfg.embedding_scale * 2f64.sqrt(),
            extent: cfg.extent,
        }
    }

    fn eval(&self, pose: &Pose, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
        let c = pose.centre() / self.extent;
        let f = pose.rotation * Vector3::z();
        let phi = [c.x, c.y, c.z, f.x, f.y, f.z];
        self.freq
            .iter()
            .zip(&self.phase)
            .map(|(w, b)| {
                let arg: f64 = w.iter().zip(&phi).map(|(a, p)| a * p).sum::<f64>() + b;
                let e: f64 = StandardNormal.sample(rng);
                (self.amp * arg.cos() + noise * e) as f32
            })
            .collect()
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

fn noisy_copy(rng: &mut ChaCha8Rng, d: &[f32], sigma: f64) -> Vec<f32> {
    let v: Vec<f64> = d
        .iter()
        .map(|&x| x as f64 + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Camera `i` of `n` on the trajectory, before jitter.
fn trajectory_pose(cfg: &SyntheticSceneConfig, i: usize) -> Pose {
    let radius = 0.5 * cfg.extent;
    let height = 0.2 * cfg.extent;
    let theta = TAU * i as f64 / cfg.cameras as f64;
    let centre = Point3::new(
        0.4 * radius * theta.cos(),
        0.4 * radius * theta.sin(),
        0.5 * height + 0.05 * height * (2.0 * theta).sin(),
    );
    let yaw = theta + 0.25 * (3.0 * theta).sin();
    let pitch = 0.05 * (5.0 * theta).sin();
    let forward = Vector3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin());
    Pose::new(look_rotation(&forward, &-Vector3::z()), centre)
}

fn jitter(pose: &Pose, rng: &mut ChaCha8Rng, metres: f64, degrees: f64) -> Pose {
    if metres == 0.0 && degrees == 0.0 {
        return *pose;
    }
    let dir = |rng: &mut ChaCha8Rng| {
        Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        )
        .normalize()
    };
    let r = UnitQuaternion::from_scaled_axis(dir(rng) * degrees.to_radians() * rng.random::<f64>());
    Pose::new(r * pose.rotation, pose.translation + dir(rng) * metres * rng.random::<f64>())
}

/// Points visible from `pose`: in front, inside the image, within range.
pub fn frustum_visible(points: &[SfmPoint], pose: &Pose, k: &CameraIntrinsics, max_depth: Option<f64>) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let depth = pose.world_to_camera(&p.position).z;
            max_depth.is_none_or(|m| depth <= m)
                && reproject(&p.position, pose, k).pixel().is_some_and(|px| k.contains(&px))
        })
        .map(|(i, _)| i)
        .collect()
}

pub fn generate_synthetic_scene(cfg: &SyntheticSceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = CameraIntrinsics::from_fov(cfg.width, cfg.height, cfg.fov_deg);
    let radius = 0.5 * cfg.extent;
    let height = 0.2 * cfg.extent;
    let thickness = 0.01 * cfg.extent;

    let points: Vec<SfmPoint> = (0..cfg.points)
        .map(|i| {
            let a = rng.random_range(0.0..TAU);
            let r = radius + rng.random_range(-thickness..thickness);
            SfmPoint {
                id: i as u64,
                position: Point3::new(r * a.cos(), r * a.sin(), rng.random_range(0.0..height)),
                descriptor: unit_vector(&mut rng, cfg.descriptor_dim),
            }
        })
        .collect();
    let field = EmbeddingField::new(cfg, &mut rng);

    let mut images = Vec::new();
    let mut queries = Vec::new();
    let mut query_visible = BTreeMap::new();
    for i in 0..cfg.cameras {
        let is_query = i % cfg.query_every == 0;
        let base = trajectory_pose(cfg, i);
        let mut attempt = 0;
        let (pose, visible) = loop {
            let pose = if is_query { jitter(&base, &mut rng, cfg.query_jitter.0, cfg.query_jitter.1) } else { base };
            let mut vis = frustum_visible(&points, &pose, &k, cfg.max_depth);
            if cfg.dropout > 0.0 {
                vis.retain(|_| rng.random::<f64>() >= cfg.dropout);
            }
            if vis.len() >= MIN_VISIBLE {
                break (pose, vis);
            }
            attempt += 1;
            if attempt > MAX_RETRIES {
                return Err(Error::InvalidArgument(format!(
                    "camera {i} sees {} points after {MAX_RETRIES} retries",
                    vis.len()
                )));
            }
        };
        let embedding = field.eval(&pose, cfg.embedding_noise, &mut rng);
        let id = i as u64;
        if is_query {
            let mut keypoints = Vec::with_capacity(visible.len() + cfg.clutter);
            let mut descriptors = Vec::with_capacity((visible.len() + cfg.clutter) * cfg.descriptor_dim);
            let noise = Normal::new(0.0, cfg.keypoint_noise_px.max(1e-300)).unwrap();
            for &pi in &visible {
                let px = reproject(&points[pi].position, &pose, &k).pixel().unwrap();
                let mut kp = px;
                if cfg.keypoint_noise_px > 0.0 {
                    kp += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                }
                kp.x = kp.x.clamp(0.0, cfg.width as f64 - 1e-6);
                kp.y = kp.y.clamp(0.0, cfg.height as f64 - 1e-6);
                keypoints.push(kp);
                descriptors.extend(noisy_copy(&mut rng, &points[pi].descriptor, cfg.descriptor_noise));
            }
            for _ in 0..cfg.clutter {
                keypoints.push(Vector2::new(
                    rng.random_range(0.0..cfg.width as f64),
                    rng.random_range(0.0..cfg.height as f64),
                ));
                descriptors.extend(unit_vector(&mut rng, cfg.descriptor_dim));
            }
            query_visible.insert(id, visible.iter().map(|&pi| points[pi].id).collect());
            queries.push(Query {
                features: QueryFeatures {
                    id,
                    embedding,
                    keypoints,
                    descriptors,
                    descriptor_dim: cfg.descriptor_dim,
                    intrinsics_id: 0,
                },
                ground_truth: Some(pose),
            });
        } else {
            images.push(MappingImage {
                id,
                embedding,
                pose,
                intrinsics_id: 0,
                visible_point_ids: visible.iter().map(|&pi| points[pi].id).collect(),
            });
        }
    }
    let positions: Vec<Point3> = points.iter().map(|p| p.position).collect();
    let norm = compute_norm_transform(&positions, DEFAULT_MARGIN)?;
    let bundle = SceneBundle::new(
        points,
        images,
        BTreeMap::from([(0, k)]),
        norm,
        cfg.embedding_dim,
        cfg.descriptor_dim,
    )?;
    Ok(SyntheticScene { bundle, queries, query_visible })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSceneConfig {
        SyntheticSceneConfig { points: 800, cameras: 30, embedding_dim: 8, descriptor_dim: 16, ..Default::default() }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = generate_synthetic_scene(&small()).unwrap();
        let b = generate_synthetic_scene(&small()).unwrap();
        assert_eq!(a.bundle, b.bundle);
        assert_eq!(a.queries, b.queries);
        let c = generate_synthetic_scene(&SyntheticSceneConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.bundle, c.bundle);
    }

    #[test]
    fn split_counts() {
        let cfg = SyntheticSceneConfig { points: 500, embedding_dim: 4, descriptor_dim: 8, ..Default::default() };
        let s = generate_synthetic_scene(&cfg).unwrap();
        assert_eq!(s.bundle.images().len(), 200);
        assert_eq!(s.queries.len(), 40);
        assert_eq!(cfg.mapping_count(), 200);
    }

    #[test]
    fn visibility_passes_frustum_recheck() {
        let s = generate_synthetic_scene(&small()).unwrap();
        let k = *s.bundle.camera(0).unwrap();
        for im in s.bundle.images() {
            assert!(im.visible_point_ids.len() >= MIN_VISIBLE);
            for id in &im.visible_point_ids {
                let p = &s.bundle.points()[s.bundle.point_index_of(*id).unwrap()];
                let pc = im.pose.world_to_camera(&p.position);
                assert!(pc.z > 0.0);
                let u = k.fx * pc.x / pc.z + k.cx;
                let v = k.fy * pc.y / pc.z + k.cy;
                assert!(u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64);
            }
        }
    }

    #[test]
    fn keypoints_follow_ground_truth() {
        let s = generate_synthetic_scene(&SyntheticSceneConfig { keypoint_noise_px: 0.0, ..small() }).unwrap();
        let k = *s.bundle.camera(0).unwrap();
        for q in &s.queries {
            let gt = q.ground_truth.unwrap();
            let vis = &s.query_visible[&q.features.id];
            assert_eq!(vis.len(), q.features.len());
            for (kp, id) in q.features.keypoints.iter().zip(vis) {
                let p = s.bundle.points()[s.bundle.point_index_of(*id).unwrap()].position;
                let px = reproject(&p, &gt, &k).pixel().unwrap();
                assert!((px - kp).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn descriptor_noise_statistics() {
        // For small sigma the angle between a unit vector and its noisy copy is
        // about sigma * sqrt(d - 1).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (d, sigma) = (64, 0.02);
        let n = 4000;
        let mut mean = 0.0;
        for _ in 0..n {
            let a = unit_vector(&mut rng, d);
            let b = noisy_copy(&mut rng, &a, sigma);
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
            mean += dot.clamp(-1.0, 1.0).acos() / n as f64;
        }
        let predicted = sigma * ((d - 1) as f64).sqrt();
        assert!((mean - predicted).abs() < 0.03 * predicted, "{mean} vs {predicted}");
    }

    #[test]
    fn nearby_cameras_have_similar_embeddings() {
        let s = generate_synthetic_scene(&SyntheticSceneConfig { embedding_noise: 0.0, ..small() }).unwrap();
        let ims = s.bundle.images();
        let dist = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt();
        let near = dist(&ims[0].embedding, &ims[1].embedding);
        let far = dist(&ims[0].embedding, &ims[ims.len() / 2].embedding);
        assert!(near < far);
    }

    #[test]
    fn rejects_tiny_configs() {
        assert!(generate_synthetic_scene(&SyntheticSceneConfig { points: 10, ..small() }).is_err());
        assert!(generate_synthetic_scene(&SyntheticSceneConfig { cameras: 5, ..small() }).is_err());
    }
}
