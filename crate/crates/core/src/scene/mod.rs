//! Scene data model: the SfM map, mapping images and the training dataset
//! derived from them.

mod binary;
mod norm;
pub mod text;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use binary::{load_scene_bundle, save_scene_bundle, scene_bundle_from_bytes, scene_bundle_to_bytes};
pub use norm::{apply_norm, compute_norm_transform, invert_norm, NormTransform, DEFAULT_MARGIN};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Point3, Pose};

pub const BUNDLE_MAGIC: &[u8; 4] = b"VSTR";
pub const BUNDLE_VERSION: u32 = 1;

/// Tolerance on descriptor unit norm.
pub const DESCRIPTOR_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding {
    pub id: u64,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfmPoint {
    pub id: u64,
    pub position: Point3,
    pub descriptor: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingImage {
    pub id: u64,
    pub embedding: Vec<f32>,
    pub pose: Pose,
    pub intrinsics_id: u32,
    pub visible_point_ids: Vec<u64>,
}

impl MappingImage {
    pub fn embedding(&self) -> ImageEmbedding {
        ImageEmbedding {
            id: self.id,
            vector: self.embedding.clone(),
        }
    }
}

/// A validated SfM map with its mapping images.
///
/// Immutable after construction; build through [`SceneBundle::new`] or the loaders.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    points: Vec<SfmPoint>,
    images: Vec<MappingImage>,
    intrinsics: BTreeMap<u32, CameraIntrinsics>,
    norm: NormTransform,
    embedding_dim: usize,
    descriptor_dim: usize,
    point_index: HashMap<u64, usize>,
}

impl PartialEq for SceneBundle {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
            && self.images == other.images
            && self.intrinsics == other.intrinsics
            && self.norm == other.norm
            && self.embedding_dim == other.embedding_dim
            && self.descriptor_dim == other.descriptor_dim
    }
}

impl SceneBundle {
    /// Validates every invariant and builds the id index.
    pub fn new(
        points: Vec<SfmPoint>,
        images: Vec<MappingImage>,
        intrinsics: BTreeMap<u32, CameraIntrinsics>,
        norm: NormTransform,
        embedding_dim: usize,
        descriptor_dim: usize,
    ) -> Result<Self> {
        if embedding_dim == 0 || descriptor_dim == 0 {
            return Err(Error::Shape("embedding and descriptor dims must be positive".into()));
        }
        let mut point_index = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if point_index.insert(p.id, i).is_some() {
                return Err(Error::Integrity(format!("duplicate point id {}", p.id)));
            }
            if p.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("point {} has a non-finite position", p.id)));
            }
            if p.descriptor.len() != descriptor_dim {
                return Err(Error::Shape(format!(
                    "point {} descriptor has {} values, expected {descriptor_dim}",
                    p.id,
                    p.descriptor.len()
                )));
            }
            if p.descriptor.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("point {} has a non-finite descriptor", p.id)));
            }
            let n = p.descriptor.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > DESCRIPTOR_NORM_TOL {
                return Err(Error::Data(format!("point {} descriptor norm {n} is not unit", p.id)));
            }
        }
        for k in intrinsics.values() {
            k.validate()?;
        }
        let mut image_ids = HashSet::with_capacity(images.len());
        for im in &images {
            if !image_ids.insert(im.id) {
                return Err(Error::Integrity(format!("duplicate image id {}", im.id)));
            }
            if im.embedding.len() != embedding_dim {
                return Err(Error::Shape(format!(
                    "image {} embedding has {} values, expected {embedding_dim}",
                    im.id,
                    im.embedding.len()
                )));
            }
            if im.embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("image {} has a non-finite embedding", im.id)));
            }
            if !intrinsics.contains_key(&im.intrinsics_id) {
                return Err(Error::Integrity(format!(
                    "image {} references missing intrinsics {}",
                    im.id, im.intrinsics_id
                )));
            }
            if im.visible_point_ids.is_empty() {
                return Err(Error::Integrity(format!("image {} sees no points", im.id)));
            }
            if let Some(bad) = im.visible_point_ids.iter().find(|id| !point_index.contains_key(id)) {
                return Err(Error::Integrity(format!(
                    "image {} references missing point {bad}",
                    im.id
                )));
            }
        }
        norm.validate()?;
        for p in &points {
            let q = norm.apply(&p.position);
            if q.iter().any(|v| !(-1e-9..=1.0 + 1e-9).contains(v)) {
                return Err(Error::Data(format!(
                    "normalisation maps point {} outside the unit cube",
                    p.id
                )));
            }
        }
        Ok(SceneBundle {
            points,
            images,
            intrinsics,
            norm,
            embedding_dim,
            descriptor_dim,
            point_index,
        })
    }

    pub fn points(&self) -> &[SfmPoint] {
        &self.points
    }

    pub fn images(&self) -> &[MappingImage] {
        &self.images
    }

    pub fn intrinsics(&self) -> &BTreeMap<u32, CameraIntrinsics> {
        &self.intrinsics
    }

    pub fn camera(&self, id: u32) -> Option<&CameraIntrinsics> {
        self.intrinsics.get(&id)
    }

    pub fn norm(&self) -> &NormTransform {
        &self.norm
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn descriptor_dim(&self) -> usize {
        self.descriptor_dim
    }

    pub fn point_index_of(&self, id: u64) -> Option<usize> {
        self.point_index.get(&id).copied()
    }

    pub fn positions(&self) -> Vec<Point3> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Largest side of the bounding box of all map points, in metres.
    pub fn extent(&self) -> f64 {
        let mut lo = Point3::repeat(f64::INFINITY);
        let mut hi = Point3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(&p.position);
            hi = hi.sup(&p.position);
        }
        if self.points.is_empty() {
            0.0
        } else {
            (hi - lo).max()
        }
    }

    /// Copy of this bundle restricted to the given images.
    pub fn with_images(&self, keep: impl Fn(&MappingImage) -> bool) -> Result<SceneBundle> {
        SceneBundle::new(
            self.points.clone(),
            self.images.iter().filter(|im| keep(im)).cloned().collect(),
            self.intrinsics.clone(),
            self.norm,
            self.embedding_dim,
            self.descriptor_dim,
        )
    }
}

/// One (image, visible point) incidence, with the point in normalised coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainPair {
    pub image: usize,
    pub point_index: usize,
    pub point: Point3,
}

/// Builds the shuffled dataset of point-image pairs: one pair per visibility
/// incidence, in a seeded uniform order.
pub fn build_training_pairs(bundle: &SceneBundle, seed: u64) -> Vec<TrainPair> {
    let mut pairs = Vec::with_capacity(bundle.images.iter().map(|im| im.visible_point_ids.len()).sum());
    for (image, im) in bundle.images.iter().enumerate() {
        for id in &im.visible_point_ids {
            let point_index = bundle.point_index[id];
            pairs.push(TrainPair {
                image,
                point_index,
                point: bundle.norm.apply(&bundle.points[point_index].position),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    pairs
}

/// Normalises a descriptor to unit L2 norm in place. Zero vectors are rejected.
pub fn normalise_descriptor(d: &mut [f32]) -> Result<()> {
    let n = d.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::Data("descriptor has zero or non-finite norm".into()));
    }
    d.iter_mut().for_each(|v| *v = (*v as f64 / n) as f32);
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn unit(dim: usize, rng: &mut impl Rng) -> Vec<f32> {
        let mut d: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        normalise_descriptor(&mut d).unwrap();
        d
    }

    pub(crate) fn random_bundle(seed: u64, n_points: usize, n_images: usize) -> SceneBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (de, df) = (6, 5);
        let points: Vec<SfmPoint> = (0..n_points)
            .map(|i| SfmPoint {
                id: 1000 + i as u64 * 3,
                position: Point3::new(rng.random_range(-5.0..5.0), rng.random_range(0.0..20.0), rng.random_range(-1.0..1.0)),
                descriptor: unit(df, &mut rng),
            })
            .collect();
        let images = (0..n_images)
            .map(|i| {
                let n = rng.random_range(1..=n_points.min(7));
                let mut ids: Vec<u64> = points.iter().map(|p| p.id).collect();
                ids.shuffle(&mut rng);
                ids.truncate(n);
                MappingImage {
                    id: 7 + i as u64,
                    embedding: (0..de).map(|_| rng.random_range(-3.0f32..3.0)).collect(),
                    pose: Pose::new(
                        nalgebra::UnitQuaternion::from_euler_angles(rng.random(), rng.random(), rng.random()),
                        Point3::new(rng.random(), rng.random(), rng.random()),
                    ),
                    intrinsics_id: (i % 2) as u32,
                    visible_point_ids: ids,
                }
            })
            .collect();
        let mut intr = BTreeMap::new();
        intr.insert(0, CameraIntrinsics::from_fov(640, 480, 60.0));
        intr.insert(1, CameraIntrinsics::from_fov(320, 240, 75.0));
        let pos: Vec<Point3> = points.iter().map(|p| p.position).collect();
        let norm = compute_norm_transform(&pos, DEFAULT_MARGIN).unwrap();
        SceneBundle::new(points, images, intr, norm, de, df).unwrap()
    }

    #[test]
    fn pair_count_and_multiset() {
        let b = random_bundle(1, 20, 9);
        let pairs = build_training_pairs(&b, 4);
        let total: usize = b.images().iter().map(|im| im.visible_point_ids.len()).sum();
        assert_eq!(pairs.len(), total);

        let mut got: Vec<(usize, u64)> = pairs.iter().map(|p| (p.image, b.points()[p.point_index].id)).collect();
        let mut want: Vec<(usize, u64)> = b
            .images()
            .iter()
            .enumerate()
            .flat_map(|(i, im)| im.visible_point_ids.iter().map(move |&id| (i, id)))
            .collect();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want);
        for p in &pairs {
            assert!(p.point.iter().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)));
        }
    }

    #[test]
    fn pairs_for_three_and_five() {
        let mut b = random_bundle(2, 10, 2);
        let ids: Vec<u64> = b.points.iter().map(|p| p.id).collect();
        b.images[0].visible_point_ids = ids[..3].to_vec();
        b.images[1].visible_point_ids = ids[3..8].to_vec();
        assert_eq!(build_training_pairs(&b, 0).len(), 8);
    }

    #[test]
    fn pairs_are_seed_deterministic() {
        let b = random_bundle(3, 30, 12);
        assert_eq!(build_training_pairs(&b, 99), build_training_pairs(&b, 99));
        assert_ne!(build_training_pairs(&b, 99), build_training_pairs(&b, 100));
    }

    #[test]
    fn dangling_and_duplicate_ids_are_rejected() {
        let b = random_bundle(4, 5, 2);
        let mut images = b.images.clone();
        images[0].visible_point_ids.push(99);
        let err = SceneBundle::new(b.points.clone(), images, b.intrinsics.clone(), b.norm, 6, 5).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");

        let mut points = b.points.clone();
        points[1].id = points[0].id;
        let err = SceneBundle::new(points, b.images.clone(), b.intrinsics.clone(), b.norm, 6, 5).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));

        let mut images = b.images.clone();
        images[0].visible_point_ids.clear();
        assert!(SceneBundle::new(b.points.clone(), images, b.intrinsics.clone(), b.norm, 6, 5).is_err());
    }

    #[test]
    fn non_unit_descriptor_and_bad_norm_rejected() {
        let b = random_bundle(5, 5, 2);
        let mut points = b.points.clone();
        points[0].descriptor[0] += 0.1;
        assert!(matches!(
            SceneBundle::new(points, b.images.clone(), b.intrinsics.clone(), b.norm, 6, 5),
            Err(Error::Data(_))
        ));
        let shrunk = NormTransform { scale: b.norm.scale * 3.0, offset: b.norm.offset };
        assert!(SceneBundle::new(b.points.clone(), b.images.clone(), b.intrinsics.clone(), shrunk, 6, 5).is_err());
    }
}
