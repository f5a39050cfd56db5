//! Binary scene bundle (`VSTR`, version 1, little-endian).
//!
//! ```text
//! header      "VSTR" u32 version u32 embedding_dim u32 descriptor_dim
//!             u64 point_count u64 image_count
//! points      u64 id, 3 x f64 position, descriptor_dim x f32
//! images      u64 id, embedding_dim x f32, 4 x f64 quaternion (w, x, y, z),
//!             3 x f64 translation, u32 intrinsics id, u64 n, n x u64 point ids
//! intrinsics  u32 count, then per camera: u32 id, f64 fx fy cx cy, u32 width height
//! norm        f64 scale, 3 x f64 offset
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::{MappingImage, NormTransform, SceneBundle, SfmPoint, BUNDLE_MAGIC, BUNDLE_VERSION};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

pub fn scene_bundle_to_bytes(bundle: &SceneBundle) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(BUNDLE_MAGIC);
    w.u32(BUNDLE_VERSION);
    w.u32(bundle.embedding_dim as u32);
    w.u32(bundle.descriptor_dim as u32);
    w.u64(bundle.points.len() as u64);
    w.u64(bundle.images.len() as u64);
    for p in &bundle.points {
        w.u64(p.id);
        w.f64s(p.position.as_slice());
        w.f32s(&p.descriptor);
    }
    for im in &bundle.images {
        w.u64(im.id);
        w.f32s(&im.embedding);
        w.f64s(&im.pose.wxyz());
        w.f64s(im.pose.translation.as_slice());
        w.u32(im.intrinsics_id);
        w.u64(im.visible_point_ids.len() as u64);
        for id in &im.visible_point_ids {
            w.u64(*id);
        }
    }
    w.u32(bundle.intrinsics.len() as u32);
    for (id, k) in &bundle.intrinsics {
        w.u32(*id);
        w.f64s(&[k.fx, k.fy, k.cx, k.cy]);
        w.u32(k.width);
        w.u32(k.height);
    }
    w.f64(bundle.norm.scale);
    w.f64s(bundle.norm.offset.as_slice());
    w.buf
}

pub fn scene_bundle_from_bytes(bytes: &[u8]) -> Result<SceneBundle> {
    let mut r = Reader::new(bytes, "scene bundle");
    r.expect_magic(BUNDLE_MAGIC)?;
    r.expect_version(BUNDLE_VERSION)?;
    let embedding_dim = r.u32()? as usize;
    let descriptor_dim = r.u32()? as usize;
    let n_points = r.u64()? as usize;
    let n_images = r.u64()? as usize;
    r.check_room(n_points, 32 + 4 * descriptor_dim)?;

    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let id = r.u64()?;
        let position = Vector3::from(r.f64s::<3>()?);
        let descriptor = r.f32_vec(descriptor_dim)?;
        points.push(SfmPoint { id, position, descriptor });
    }

    r.check_room(n_images, 8 + 4 * embedding_dim + 56 + 12)?;
    let mut images = Vec::with_capacity(n_images);
    for _ in 0..n_images {
        let id = r.u64()?;
        let embedding = r.f32_vec(embedding_dim)?;
        let q = r.f64s::<4>()?;
        let t = r.f64s::<3>()?;
        let pose = Pose::from_wxyz(q, t)?;
        let intrinsics_id = r.u32()?;
        let n = r.count(8)?;
        let visible_point_ids = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        images.push(MappingImage {
            id,
            embedding,
            pose,
            intrinsics_id,
            visible_point_ids,
        });
    }

    let n_cams = r.u32()? as usize;
    r.check_room(n_cams, 44)?;
    let mut intrinsics = BTreeMap::new();
    for _ in 0..n_cams {
        let id = r.u32()?;
        let [fx, fy, cx, cy] = r.f64s::<4>()?;
        let width = r.u32()?;
        let height = r.u32()?;
        if intrinsics
            .insert(id, CameraIntrinsics { fx, fy, cx, cy, width, height })
            .is_some()
        {
            return Err(Error::Integrity(format!("duplicate intrinsics id {id}")));
        }
    }
    let scale = r.f64()?;
    let offset = Vector3::from(r.f64s::<3>()?);
    r.finish()?;

    SceneBundle::new(
        points,
        images,
        intrinsics,
        NormTransform { scale, offset },
        embedding_dim,
        descriptor_dim,
    )
}

pub fn load_scene_bundle(path: impl AsRef<Path>) -> Result<SceneBundle> {
    scene_bundle_from_bytes(&fs::read(path)?)
}

pub fn save_scene_bundle(bundle: &SceneBundle, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, scene_bundle_to_bytes(bundle))?;
    Ok(())
}
