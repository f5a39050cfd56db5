//! Plain-text exchange format for scene bundles, one record per line.
//!
//! ```text
//! vistr-scene 1
//! dims <embedding_dim> <descriptor_dim>
//! camera <id> <fx> <fy> <cx> <cy> <width> <height>
//! point <id> <x> <y> <z> <descriptor_dim values>
//! image <id> <camera id> <qw> <qx> <qy> <qz> <tx> <ty> <tz> <n> <n point ids>
//! embedding <image id> <embedding_dim values>
//! norm <scale> <ox> <oy> <oz>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Records may appear in
//! any order after `dims`. `norm` is optional; when absent it is fitted with
//! the default margin. Descriptors are unit-normalised on import. Poses are
//! world-from-camera.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Vector3;

use super::{
    compute_norm_transform, normalise_descriptor, MappingImage, NormTransform, SceneBundle, SfmPoint,
    DEFAULT_MARGIN,
};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

pub const SCENE_TEXT_HEADER: &str = "vistr-scene 1";

pub(crate) struct Fields<'a> {
    line: usize,
    tokens: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    pub fn new(line: usize, s: &'a str) -> Self {
        Fields { line, tokens: s.split_whitespace() }
    }

    pub fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Format(format!("line {}: {msg}", self.line))
    }

    pub fn next<T: FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.tokens.next().ok_or_else(|| self.err(format!("missing {what}")))?;
        tok.parse().map_err(|_| self.err(format!("bad {what} {tok:?}")))
    }

    pub fn floats<T: FromStr>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        (0..n).map(|_| self.next(what)).collect()
    }

    pub fn end(&mut self) -> Result<()> {
        match self.tokens.next() {
            None => Ok(()),
            Some(t) => Err(self.err(format!("unexpected trailing token {t:?}"))),
        }
    }
}

/// Iterates over meaningful lines as `(line number, tag, fields)`.
pub(crate) fn records(text: &str) -> impl Iterator<Item = (usize, &str, Fields<'_>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            return None;
        }
        let (tag, rest) = s.split_once(char::is_whitespace).unwrap_or((s, ""));
        Some((i + 1, tag, Fields::new(i + 1, rest)))
    })
}

pub fn parse_scene_text(text: &str) -> Result<SceneBundle> {
    let mut it = records(text);
    match it.next() {
        Some((_, "vistr-scene", mut f)) => {
            let v: u32 = f.next("version")?;
            if v != 1 {
                return Err(Error::Format(format!("unsupported scene text version {v}")));
            }
        }
        _ => return Err(Error::Format(format!("missing header {SCENE_TEXT_HEADER:?}"))),
    }
    let (de, df) = match it.next() {
        Some((_, "dims", mut f)) => {
            let de: usize = f.next("embedding_dim")?;
            let df: usize = f.next("descriptor_dim")?;
            f.end()?;
            (de, df)
        }
        _ => return Err(Error::Format("expected dims record after header".into())),
    };

    let mut points = Vec::new();
    let mut images = Vec::new();
    let mut intrinsics = BTreeMap::new();
    let mut embeddings: HashMap<u64, Vec<f32>> = HashMap::new();
    let mut norm = None;
    for (line, tag, mut f) in it {
        match tag {
            "camera" => {
                let id: u32 = f.next("camera id")?;
                let k = CameraIntrinsics {
                    fx: f.next("fx")?,
                    fy: f.next("fy")?,
                    cx: f.next("cx")?,
                    cy: f.next("cy")?,
                    width: f.next("width")?,
                    height: f.next("height")?,
                };
                f.end()?;
                if intrinsics.insert(id, k).is_some() {
                    return Err(Error::Integrity(format!("line {line}: duplicate camera {id}")));
                }
            }
            "point" => {
                let id: u64 = f.next("point id")?;
                let xyz: Vec<f64> = f.floats(3, "coordinate")?;
                let mut descriptor: Vec<f32> = f.floats(df, "descriptor value")?;
                f.end()?;
                normalise_descriptor(&mut descriptor)
                    .map_err(|e| Error::Data(format!("line {line}: point {id}: {e}")))?;
                points.push(SfmPoint {
                    id,
                    position: Vector3::new(xyz[0], xyz[1], xyz[2]),
                    descriptor,
                });
            }
            "image" => {
                let id: u64 = f.next("image id")?;
                let intrinsics_id: u32 = f.next("camera id")?;
                let q: Vec<f64> = f.floats(4, "quaternion")?;
                let t: Vec<f64> = f.floats(3, "translation")?;
                let n: usize = f.next("visible count")?;
                let visible_point_ids: Vec<u64> = f.floats(n, "point id")?;
                f.end()?;
                let pose = Pose::from_wxyz([q[0], q[1], q[2], q[3]], [t[0], t[1], t[2]])
                    .map_err(|e| Error::Data(format!("line {line}: {e}")))?;
                images.push(MappingImage {
                    id,
                    embedding: Vec::new(),
                    pose,
                    intrinsics_id,
                    visible_point_ids,
                });
            }
            "embedding" => {
                let id: u64 = f.next("image id")?;
                let v: Vec<f32> = f.floats(de, "embedding value")?;
                f.end()?;
                if embeddings.insert(id, v).is_some() {
                    return Err(Error::Integrity(format!("line {line}: duplicate embedding for {id}")));
                }
            }
            "norm" => {
                let scale: f64 = f.next("scale")?;
                let o: Vec<f64> = f.floats(3, "offset")?;
                f.end()?;
                norm = Some(NormTransform { scale, offset: Vector3::new(o[0], o[1], o[2]) });
            }
            other => return Err(Error::Format(format!("line {line}: unknown record {other:?}"))),
        }
    }
    for im in &mut images {
        im.embedding = embeddings
            .remove(&im.id)
            .ok_or_else(|| Error::Integrity(format!("image {} has no embedding record", im.id)))?;
    }
    if let Some(id) = embeddings.keys().next() {
        return Err(Error::Integrity(format!("embedding for unknown image {id}")));
    }
    let norm = match norm {
        Some(n) => n,
        None => {
            let pos: Vec<_> = points.iter().map(|p| p.position).collect();
            compute_norm_transform(&pos, DEFAULT_MARGIN)?
        }
    };
    SceneBundle::new(points, images, intrinsics, norm, de, df)
}

/// Writes a bundle in the exchange format. Floats use Rust's shortest
/// round-trip representation, so parsing the output reproduces the bundle.
pub fn write_scene_text(bundle: &SceneBundle) -> String {
    let mut s = String::new();
    writeln!(s, "{SCENE_TEXT_HEADER}").unwrap();
    writeln!(s, "dims {} {}", bundle.embedding_dim(), bundle.descriptor_dim()).unwrap();
    for (id, k) in bundle.intrinsics() {
        writeln!(s, "camera {id} {:?} {:?} {:?} {:?} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height).unwrap();
    }
    for p in bundle.points() {
        write!(s, "point {} {:?} {:?} {:?}", p.id, p.position.x, p.position.y, p.position.z).unwrap();
        for v in &p.descriptor {
            write!(s, " {v:?}").unwrap();
        }
        s.push('\n');
    }
    for im in bundle.images() {
        let q = im.pose.wxyz();
        let t = im.pose.translation;
        write!(
            s,
            "image {} {} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {}",
            im.id, im.intrinsics_id, q[0], q[1], q[2], q[3], t.x, t.y, t.z,
            im.visible_point_ids.len()
        )
        .unwrap();
        for id in &im.visible_point_ids {
            write!(s, " {id}").unwrap();
        }
        s.push('\n');
        write!(s, "embedding {}", im.id).unwrap();
        for v in &im.embedding {
            write!(s, " {v:?}").unwrap();
        }
        s.push('\n');
    }
    let n = bundle.norm();
    writeln!(s, "norm {:?} {:?} {:?} {:?}", n.scale, n.offset.x, n.offset.y, n.offset.z).unwrap();
    s
}
