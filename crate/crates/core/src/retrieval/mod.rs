//! Sampling the decoder and selecting the map points it implies.

mod kdtree;
mod voxel;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use kdtree::{build_spatial_index, SpatialIndex, DEFAULT_LEAF_SIZE};
pub use voxel::voxel_downsample;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::Point3;
use crate::scene::SceneBundle;
use crate::vae::VaeModel;

/// Generated points per query.
pub const DEFAULT_SAMPLES: usize = 1000;
/// Retrieval radius in metres.
pub const DEFAULT_RADIUS: f64 = 5.0;
/// Downsampling voxel edge in metres.
pub const DEFAULT_VOXEL: f64 = 1.0;

const QUERY_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig {
    pub samples: usize,
    pub radius: f64,
    /// Zero disables downsampling.
    pub voxel: f64,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            samples: DEFAULT_SAMPLES,
            radius: DEFAULT_RADIUS,
            voxel: DEFAULT_VOXEL,
            seed: 0,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("radius {} must be non-negative", self.radius)));
        }
        if !(self.voxel >= 0.0 && self.voxel.is_finite()) {
            return Err(Error::InvalidArgument(format!("voxel {} must be non-negative", self.voxel)));
        }
        Ok(())
    }
}

/// Decoder samples for one query, in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPointSet {
    pub points: Vec<Point3>,
    pub seed: u64,
}

impl GeneratedPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draws `n` latents from the prior and decodes them with the query embedding.
pub fn sample_structure(model: &VaeModel, embedding: &[f32], n: usize, seed: u64) -> Result<GeneratedPointSet> {
    model.check_embedding(embedding.len())?;
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("query embedding is not finite".into()));
    }
    let d = model.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents = Array2::from_shape_simple_fn((n, d), || {
        let e: f64 = StandardNormal.sample(&mut rng);
        e as f32
    });
    let out = model.decode_shared(embedding, &latents);
    let points = out
        .rows()
        .into_iter()
        .map(|r| model.norm.invert(&Point3::new(r[0] as f64, r[1] as f64, r[2] as f64)))
        .collect();
    Ok(GeneratedPointSet { points, seed })
}

/// Map points selected for one query, ordered by point id.
#[derive(Debug, Clone, PartialEq)]
pub struct Submap {
    pub ids: Vec<u64>,
    pub point_indices: Vec<usize>,
    pub positions: Vec<Point3>,
    /// Row-major, `descriptor_dim` values per point.
    pub descriptors: Vec<f32>,
    pub descriptor_dim: usize,
}

impl Submap {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.descriptor_dim..(i + 1) * self.descriptor_dim]
    }

    /// Builds a submap from bundle point indices, in any order and possibly repeated.
    pub fn from_indices(bundle: &SceneBundle, indices: impl IntoIterator<Item = usize>) -> Submap {
        let pts = bundle.points();
        let mut idx: Vec<usize> = indices.into_iter().collect();
        idx.sort_unstable_by_key(|&i| (pts[i].id, i));
        idx.dedup();
        let df = bundle.descriptor_dim();
        let mut descriptors = Vec::with_capacity(idx.len() * df);
        for &i in &idx {
            descriptors.extend_from_slice(&pts[i].descriptor);
        }
        Submap {
            ids: idx.iter().map(|&i| pts[i].id).collect(),
            positions: idx.iter().map(|&i| pts[i].position).collect(),
            point_indices: idx,
            descriptors,
            descriptor_dim: df,
        }
    }
}

/// Union of all map points within `radius` of any (optionally voxel-downsampled)
/// generated point. `index` must have been built from `bundle.positions()`.
pub fn radius_retrieve(
    index: &SpatialIndex,
    bundle: &SceneBundle,
    generated: &[Point3],
    radius: f64,
    voxel: f64,
    exec: Exec,
) -> Result<Submap> {
    if index.len() != bundle.points().len() {
        return Err(Error::InvalidArgument("spatial index does not match the bundle".into()));
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!("radius {radius} must be non-negative")));
    }
    let queries = if voxel > 0.0 {
        voxel_downsample(generated, voxel)?
    } else if voxel == 0.0 {
        generated.to_vec()
    } else {
        return Err(Error::InvalidArgument(format!("voxel {voxel} must be non-negative")));
    };
    let n = index.len();
    let marks = exec.map_chunks(&queries, QUERY_CHUNK, |_, chunk| {
        let mut mark = vec![false; n];
        index.mark_within_any(chunk, radius, &mut mark);
        mark
    });
    let mut mark = vec![false; n];
    for part in marks {
        for (m, p) in mark.iter_mut().zip(part) {
            *m |= p;
        }
    }
    Ok(Submap::from_indices(
        bundle,
        mark.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i),
    ))
}

/// Samples the decoder and retrieves the corresponding submap.
pub fn retrieve(
    model: &VaeModel,
    index: &SpatialIndex,
    bundle: &SceneBundle,
    embedding: &[f32],
    cfg: &RetrievalConfig,
    exec: Exec,
) -> Result<(GeneratedPointSet, Submap)> {
    cfg.validate()?;
    let generated = sample_structure(model, embedding, cfg.samples, cfg.seed)?;
    let submap = radius_retrieve(index, bundle, &generated.points, cfg.radius, cfg.voxel, exec)?;
    Ok((generated, submap))
}
