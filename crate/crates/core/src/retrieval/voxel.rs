use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Replaces the points falling in each occupied voxel of edge `voxel` by their
/// centroid. Output follows the order in which voxels are first touched.
pub fn voxel_downsample(points: &[Point3], voxel: f64) -> Result<Vec<Point3>> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::InvalidArgument(format!("voxel size {voxel} must be positive")));
    }
    let inv = 1.0 / voxel;
    let mut slots: HashMap<[i64; 3], usize> = HashMap::with_capacity(points.len());
    let mut sums: Vec<(Point3, usize)> = Vec::new();
    for p in points {
        let key = [
            (p.x * inv).floor() as i64,
            (p.y * inv).floor() as i64,
            (p.z * inv).floor() as i64,
        ];
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.push((Point3::zeros(), 0));
            sums.len() - 1
        });
        sums[slot].0 += p;
        sums[slot].1 += 1;
    }
    Ok(sums.into_iter().map(|(s, n)| s / n as f64).collect())
}
