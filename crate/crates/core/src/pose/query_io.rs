//! Query files: binary (`VSTQ`) and plain text.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! header  "VSTQ" u32 version u32 embedding_dim u32 descriptor_dim u64 count
//! query   u64 id, u32 intrinsics id, embedding_dim x f32, u64 n,
//!         n x (f64 u, f64 v, descriptor_dim x f32),
//!         u8 has_gt, [4 x f64 quaternion (w, x, y, z), 3 x f64 translation]
//! ```
//!
//! Text layout:
//!
//! ```text
//! vistr-queries 1
//! dims <embedding_dim> <descriptor_dim>
//! query <id> <camera id> <n keypoints>
//! embedding <embedding_dim values>
//! gt <qw> <qx> <qy> <qz> <tx> <ty> <tz>
//! kp <u> <v> <descriptor_dim values>
//! ```
//!
//! `embedding`, `gt` and `kp` lines belong to the preceding `query`; `gt` is
//! optional. Descriptors are unit-normalised on text import.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector2;

use super::{Query, QueryFeatures};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::scene::normalise_descriptor;
use crate::scene::text::records;
use crate::scene::DESCRIPTOR_NORM_TOL;

pub const QUERY_MAGIC: &[u8; 4] = b"VSTQ";
pub const QUERY_VERSION: u32 = 1;
pub const QUERY_TEXT_HEADER: &str = "vistr-queries 1";

fn check(queries: &[Query], de: usize, df: usize) -> Result<()> {
    let mut ids = HashSet::new();
    for q in queries {
        let f = &q.features;
        if !ids.insert(f.id) {
            return Err(Error::Integrity(format!("duplicate query id {}", f.id)));
        }
        if f.embedding.len() != de || f.descriptor_dim != df || f.descriptors.len() != f.keypoints.len() * df {
            return Err(Error::Shape(format!("query {} does not match dims {de} {df}", f.id)));
        }
        if f.embedding.iter().chain(&f.descriptors).any(|v| !v.is_finite())
            || f.keypoints.iter().any(|p| !p.iter().all(|v| v.is_finite()))
        {
            return Err(Error::Data(format!("query {} has non-finite values", f.id)));
        }
        for i in 0..f.len() {
            let n = f.descriptor(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > DESCRIPTOR_NORM_TOL {
                return Err(Error::Data(format!("query {}: descriptor {i} has norm {n}", f.id)));
            }
        }
    }
    Ok(())
}

fn dims(queries: &[Query]) -> (usize, usize) {
    queries.first().map_or((0, 0), |q| (q.features.embedding.len(), q.features.descriptor_dim))
}

pub fn queries_to_bytes(queries: &[Query]) -> Vec<u8> {
    let (de, df) = dims(queries);
    let mut w = Writer::new();
    w.raw(QUERY_MAGIC);
    w.u32(QUERY_VERSION);
    w.u32(de as u32);
    w.u32(df as u32);
    w.u64(queries.len() as u64);
    for q in queries {
        let f = &q.features;
        w.u64(f.id);
        w.u32(f.intrinsics_id);
        w.f32s(&f.embedding);
        w.u64(f.len() as u64);
        for (i, p) in f.keypoints.iter().enumerate() {
            w.f64(p.x);
            w.f64(p.y);
            w.f32s(f.descriptor(i));
        }
        match &q.ground_truth {
            Some(pose) => {
                w.u8(1);
                w.f64s(&pose.wxyz());
                w.f64s(pose.translation.as_slice());
            }
            None => w.u8(0),
        }
    }
    w.buf
}

pub fn queries_from_bytes(bytes: &[u8]) -> Result<Vec<Query>> {
    let mut r = Reader::new(bytes, "query file");
    r.expect_magic(QUERY_MAGIC)?;
    r.expect_version(QUERY_VERSION)?;
    let de = r.u32()? as usize;
    let df = r.u32()? as usize;
    let n = r.count(12 + 4 * de + 9)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u64()?;
        let intrinsics_id = r.u32()?;
        let embedding = r.f32_vec(de)?;
        let nk = r.count(16 + 4 * df)?;
        let mut keypoints = Vec::with_capacity(nk);
        let mut descriptors = Vec::with_capacity(nk * df);
        for _ in 0..nk {
            keypoints.push(Vector2::new(r.f64()?, r.f64()?));
            descriptors.extend(r.f32_vec(df)?);
        }
        let ground_truth = match r.u8()? {
            0 => None,
            1 => Some(Pose::from_wxyz(r.f64s::<4>()?, r.f64s::<3>()?)?),
            v => return Err(Error::Format(format!("query {id}: bad ground-truth flag {v}"))),
        };
        out.push(Query {
            features: QueryFeatures { id, embedding, keypoints, descriptors, descriptor_dim: df, intrinsics_id },
            ground_truth,
        });
    }
    r.finish()?;
    check(&out, de, df)?;
    Ok(out)
}

pub fn save_queries(queries: &[Query], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, queries_to_bytes(queries))?;
    Ok(())
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    queries_from_bytes(&fs::read(path)?)
}

pub fn parse_query_text(text: &str) -> Result<Vec<Query>> {
    let mut it = records(text);
    match it.next() {
        Some((_, "vistr-queries", mut f)) => {
            let v: u32 = f.next("version")?;
            if v != 1 {
                return Err(Error::Format(format!("unsupported query text version {v}")));
            }
        }
        _ => return Err(Error::Format(format!("missing header {QUERY_TEXT_HEADER:?}"))),
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
    let mut out: Vec<(Query, usize, usize)> = Vec::new();
    for (line, tag, mut f) in it {
        if tag == "query" {
            let id: u64 = f.next("query id")?;
            let intrinsics_id: u32 = f.next("camera id")?;
            let n: usize = f.next("keypoint count")?;
            f.end()?;
            let features = QueryFeatures {
                id,
                embedding: Vec::new(),
                keypoints: Vec::with_capacity(n),
                descriptors: Vec::with_capacity(n * df),
                descriptor_dim: df,
                intrinsics_id,
            };
            out.push((Query { features, ground_truth: None }, n, line));
            continue;
        }
        let Some((q, _, _)) = out.last_mut() else {
            return Err(f.err(format!("{tag} record before any query")));
        };
        match tag {
            "embedding" => {
                q.features.embedding = f.floats(de, "embedding value")?;
                f.end()?;
            }
            "gt" => {
                let v: Vec<f64> = f.floats(7, "pose value")?;
                f.end()?;
                q.ground_truth = Some(
                    Pose::from_wxyz([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6]])
                        .map_err(|e| Error::Data(format!("line {line}: {e}")))?,
                );
            }
            "kp" => {
                let u: f64 = f.next("u")?;
                let v: f64 = f.next("v")?;
                let mut d: Vec<f32> = f.floats(df, "descriptor value")?;
                f.end()?;
                normalise_descriptor(&mut d).map_err(|e| Error::Data(format!("line {line}: {e}")))?;
                q.features.keypoints.push(Vector2::new(u, v));
                q.features.descriptors.extend(d);
            }
            other => return Err(f.err(format!("unknown record {other:?}"))),
        }
    }
    let mut queries = Vec::with_capacity(out.len());
    for (q, n, line) in out {
        if q.features.len() != n {
            return Err(Error::Format(format!(
                "line {line}: query {} declares {n} keypoints, found {}",
                q.features.id,
                q.features.len()
            )));
        }
        if q.features.embedding.len() != de {
            return Err(Error::Format(format!("line {line}: query {} has no embedding", q.features.id)));
        }
        queries.push(q);
    }
    check(&queries, de, df)?;
    Ok(queries)
}

pub fn write_query_text(queries: &[Query]) -> String {
    let (de, df) = dims(queries);
    let mut s = String::new();
    writeln!(s, "{QUERY_TEXT_HEADER}").unwrap();
    writeln!(s, "dims {de} {df}").unwrap();
    for q in queries {
        let f = &q.features;
        writeln!(s, "query {} {} {}", f.id, f.intrinsics_id, f.len()).unwrap();
        s.push_str("embedding");
        for v in &f.embedding {
            write!(s, " {v:?}").unwrap();
        }
        s.push('\n');
        if let Some(p) = &q.ground_truth {
            let w = p.wxyz();
            let t = p.translation;
            writeln!(s, "gt {:?} {:?} {:?} {:?} {:?} {:?} {:?}", w[0], w[1], w[2], w[3], t.x, t.y, t.z).unwrap();
        }
        for (i, p) in f.keypoints.iter().enumerate() {
            write!(s, "kp {:?} {:?}", p.x, p.y).unwrap();
            for v in f.descriptor(i) {
                write!(s, " {v:?}").unwrap();
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    fn sample() -> Vec<Query> {
        let d = |a: f32, b: f32| {
            let n = (a * a + b * b).sqrt();
            [a / n, b / n]
        };
        vec![
            Query {
                features: QueryFeatures {
                    id: 4,
                    embedding: vec![0.5, -1.25, 3.0],
                    keypoints: vec![Vector2::new(10.5, 20.25), Vector2::new(300.0, 1.0)],
                    descriptors: [d(1.0, 2.0), d(-3.0, 0.5)].concat(),
                    descriptor_dim: 2,
                    intrinsics_id: 1,
                },
                ground_truth: Some(Pose::new(UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3), Vector3::new(1.0, 2.0, 3.0))),
            },
            Query {
                features: QueryFeatures {
                    id: 9,
                    embedding: vec![0.0, 0.0, 1.0],
                    keypoints: vec![],
                    descriptors: vec![],
                    descriptor_dim: 2,
                    intrinsics_id: 0,
                },
                ground_truth: None,
            },
        ]
    }

    #[test]
    fn binary_round_trip() {
        let q = sample();
        let bytes = queries_to_bytes(&q);
        assert_eq!(queries_from_bytes(&bytes).unwrap(), q);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(queries_from_bytes(&bad), Err(Error::Format(_))));
        assert!(queries_from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let q = sample();
        let text = write_query_text(&q);
        let back = parse_query_text(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].features.keypoints, q[0].features.keypoints);
        assert_eq!(back[0].features.embedding, q[0].features.embedding);
        assert_eq!(back[0].ground_truth, q[0].ground_truth);
        for (a, b) in back[0].features.descriptors.iter().zip(&q[0].features.descriptors) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn text_errors() {
        assert!(parse_query_text("dims 1 1\n").is_err());
        let missing_kp = "vistr-queries 1\ndims 1 2\nquery 1 0 2\nembedding 0.5\nkp 1 2 1 0\n";
        assert!(matches!(parse_query_text(missing_kp), Err(Error::Format(_))));
        let orphan = "vistr-queries 1\ndims 1 2\nkp 1 2 1 0\n";
        assert!(parse_query_text(orphan).is_err());
        let dup = "vistr-queries 1\ndims 1 2\nquery 1 0 0\nembedding 1\nquery 1 0 0\nembedding 1\n";
        assert!(matches!(parse_query_text(dup), Err(Error::Integrity(_))));
    }
}
