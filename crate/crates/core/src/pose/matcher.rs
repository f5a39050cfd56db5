//! Nearest-neighbour descriptor matching of query keypoints against a submap.

use ndarray::{s, ArrayView2};

use super::QueryFeatures;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::retrieval::Submap;

pub const DEFAULT_RATIO: f64 = 0.9;

const ROW_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MatchMode {
    #[default]
    MutualNearest,
    /// Keep the nearest neighbour when `d1 / d2 < ratio`.
    Ratio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match2D3D {
    pub keypoint: usize,
    /// Row in the submap.
    pub submap_index: usize,
    pub point_id: u64,
    pub distance: f64,
}

/// Per-row best and second-best squared distances, plus per-column bests.
struct Scan {
    best: Vec<(usize, f32)>,
    second: Vec<f32>,
    col_best: Vec<(usize, f32)>,
}

fn better(a: (usize, f32), b: (usize, f32)) -> bool {
    a.1 < b.1 || (a.1 == b.1 && a.0 < b.0)
}

/// Squared L2 distances from `a` rows to `b` rows, scanned in row chunks.
fn scan(a: ArrayView2<f32>, b: ArrayView2<f32>, exec: Exec) -> Scan {
    let an: Vec<f32> = a.rows().into_iter().map(|r| r.dot(&r)).collect();
    let bn: Vec<f32> = b.rows().into_iter().map(|r| r.dot(&r)).collect();
    let starts: Vec<usize> = (0..a.nrows()).step_by(ROW_CHUNK).collect();
    let parts = exec.map(&starts, |&start| {
        let end = (start + ROW_CHUNK).min(a.nrows());
        let dots = a.slice(s![start..end, ..]).dot(&b.t());
        let mut best = Vec::with_capacity(end - start);
        let mut second = Vec::with_capacity(end - start);
        let mut col_best = vec![(usize::MAX, f32::INFINITY); b.nrows()];
        for (r, row) in dots.rows().into_iter().enumerate() {
            let i = start + r;
            let mut b1 = (usize::MAX, f32::INFINITY);
            let mut b2 = f32::INFINITY;
            for (j, &d) in row.iter().enumerate() {
                let dist = (an[i] + bn[j] - 2.0 * d).max(0.0);
                if better((j, dist), b1) {
                    b2 = b1.1;
                    b1 = (j, dist);
                } else if dist < b2 {
                    b2 = dist;
                }
                if better((i, dist), col_best[j]) {
                    col_best[j] = (i, dist);
                }
            }
            best.push(b1);
            second.push(b2);
        }
        (best, second, col_best)
    });
    let mut out = Scan {
        best: Vec::with_capacity(a.nrows()),
        second: Vec::with_capacity(a.nrows()),
        col_best: vec![(usize::MAX, f32::INFINITY); b.nrows()],
    };
    for (best, second, col) in parts {
        out.best.extend(best);
        out.second.extend(second);
        for (acc, c) in out.col_best.iter_mut().zip(col) {
            if better(c, *acc) {
                *acc = c;
            }
        }
    }
    out
}

/// Index pairs `(i, j)` where `a[i]` and `b[j]` are each other's nearest neighbour.
pub fn mutual_nearest(a: ArrayView2<f32>, b: ArrayView2<f32>, exec: Exec) -> Vec<(usize, usize, f64)> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Vec::new();
    }
    let sc = scan(a, b, exec);
    sc.best
        .iter()
        .enumerate()
        .filter(|(i, (j, _))| sc.col_best[*j].0 == *i)
        .map(|(i, &(j, d))| (i, j, (d as f64).sqrt()))
        .collect()
}

pub fn match_descriptors(query: &QueryFeatures, submap: &Submap, mode: MatchMode, exec: Exec) -> Result<Vec<Match2D3D>> {
    if submap.is_empty() {
        return Err(Error::EmptySubmap);
    }
    if query.descriptor_dim != submap.descriptor_dim {
        return Err(Error::Shape(format!(
            "query descriptors have {} values, map descriptors {}",
            query.descriptor_dim, submap.descriptor_dim
        )));
    }
    let qa = query.descriptor_view();
    let sa = ArrayView2::from_shape((submap.len(), submap.descriptor_dim), &submap.descriptors)
        .map_err(|e| Error::Shape(e.to_string()))?;
    if qa.nrows() == 0 {
        return Ok(Vec::new());
    }
    let pairs: Vec<(usize, usize, f64)> = match mode {
        MatchMode::MutualNearest => mutual_nearest(qa, sa, exec),
        MatchMode::Ratio(rho) => {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::InvalidArgument(format!("ratio {rho} must lie in (0, 1]")));
            }
            let sc = scan(qa, sa, exec);
            sc.best
                .iter()
                .zip(&sc.second)
                .enumerate()
                .filter(|(_, ((_, d1), d2))| (*d1 as f64).sqrt() < rho * (**d2 as f64).sqrt())
                .map(|(i, ((j, d1), _))| (i, *j, (*d1 as f64).sqrt()))
                .collect()
        }
    };
    Ok(pairs
        .into_iter()
        .map(|(i, j, d)| Match2D3D { keypoint: i, submap_index: j, point_id: submap.ids[j], distance: d })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn units(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f32> {
        let mut a = Array2::from_shape_simple_fn((n, d), || {
            let v: f64 = StandardNormal.sample(rng);
            v as f32
        });
        for mut r in a.rows_mut() {
            let n = r.dot(&r).sqrt();
            r /= n;
        }
        a
    }

    /// Double loop in f64 with explicit ties to the lower index.
    fn brute_mutual(a: &Array2<f32>, b: &Array2<f32>) -> Vec<(usize, usize)> {
        let d = |i: usize, j: usize| -> f64 {
            a.row(i).iter().zip(b.row(j)).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
        };
        let nn_ab: Vec<usize> = (0..a.nrows())
            .map(|i| (0..b.nrows()).min_by(|&x, &y| d(i, x).total_cmp(&d(i, y))).unwrap())
            .collect();
        let nn_ba: Vec<usize> = (0..b.nrows())
            .map(|j| (0..a.nrows()).min_by(|&x, &y| d(x, j).total_cmp(&d(y, j))).unwrap())
            .collect();
        (0..a.nrows()).filter(|&i| nn_ba[nn_ab[i]] == i).map(|i| (i, nn_ab[i])).collect()
    }

    #[test]
    fn identical_sets_match_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = units(&mut rng, 40, 32);
        let m = mutual_nearest(a.view(), a.view(), Exec::Sequential);
        assert_eq!(m.len(), 40);
        for (i, j, d) in m {
            assert_eq!(i, j);
            assert!(d < 1e-3);
        }
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let q = units(&mut rng, 50, 32);
            let s = units(&mut rng, 500, 32);
            for exec in [Exec::Sequential, Exec::Parallel] {
                let got: Vec<(usize, usize)> = mutual_nearest(q.view(), s.view(), exec).iter().map(|m| (m.0, m.1)).collect();
                assert_eq!(got, brute_mutual(&q, &s));
            }
        }
    }

    #[test]
    fn orthogonal_families_match_partners() {
        // Query i is e_i tilted towards e_{i+8}; map j is e_j. Partners share the dominant axis.
        let n = 8;
        let mut q = Array2::<f32>::zeros((n, 2 * n));
        let mut s = Array2::<f32>::zeros((n, 2 * n));
        for i in 0..n {
            q[[i, i]] = 0.9;
            q[[i, i + n]] = (1.0f32 - 0.81).sqrt();
            s[[(i * 3) % n, i]] = 1.0;
        }
        let m = mutual_nearest(q.view(), s.view(), Exec::Sequential);
        assert_eq!(m.len(), n);
        for (i, j, _) in m {
            assert_eq!(j, (i * 3) % n);
        }
    }

    #[test]
    fn ratio_mode_filters_ambiguous() {
        let q = Array2::from_shape_vec((1, 2), vec![1.0f32, 0.0]).unwrap();
        let s = Array2::from_shape_vec((2, 2), vec![0.8f32, 0.6, 0.6, 0.8]).unwrap();
        let sc = scan(q.view(), s.view(), Exec::Sequential);
        assert_eq!(sc.best[0].0, 0);
        let d1 = (sc.best[0].1 as f64).sqrt();
        let d2 = (sc.second[0] as f64).sqrt();
        assert!((d1 - (0.04f64 + 0.36).sqrt()).abs() < 1e-6);
        assert!((d2 - (0.16f64 + 0.64).sqrt()).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn mutual_is_symmetric(seed in 0u64..10_000, n in 1usize..40, m in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = units(&mut rng, n, 16);
            let b = units(&mut rng, m, 16);
            let mut ab: Vec<(usize, usize)> = mutual_nearest(a.view(), b.view(), Exec::Sequential).iter().map(|x| (x.0, x.1)).collect();
            let mut ba: Vec<(usize, usize)> = mutual_nearest(b.view(), a.view(), Exec::Sequential).iter().map(|x| (x.1, x.0)).collect();
            ab.sort_unstable();
            ba.sort_unstable();
            prop_assert_eq!(ab, ba);
        }
    }
}
