//! Static k-d tree for exact radius search.

use crate::error::{Error, Result};
use crate::geometry::Point3;

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, left: usize, right: usize, start: usize, end: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Bounds {
    lo: Point3,
    hi: Point3,
}

impl Bounds {
    fn of(points: &[Point3]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in &points[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Bounds { lo, hi }
    }

    fn dist2(&self, q: &Point3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let e = if q[k] < self.lo[k] {
                self.lo[k] - q[k]
            } else if q[k] > self.hi[k] {
                q[k] - self.hi[k]
            } else {
                0.0
            };
            d += e * e;
        }
        d
    }

    /// Squared distance from `q` to the farthest corner.
    fn max_dist2(&self, q: &Point3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let e = (q[k] - self.lo[k]).abs().max((self.hi[k] - q[k]).abs());
            d += e * e;
        }
        d
    }
}

/// Balanced k-d tree over map point positions. Immutable after build.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    /// Original index of each reordered point.
    order: Vec<usize>,
    nodes: Vec<Node>,
    bounds: Vec<Bounds>,
    leaf_size: usize,
}

impl SpatialIndex {
    pub fn build(points: &[Point3]) -> Result<Self> {
        Self::with_leaf_size(points, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(points: &[Point3], leaf_size: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("cannot index an empty map".into()));
        }
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Data("non-finite map point".into()));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut tree = SpatialIndex {
            points: Vec::new(),
            order: Vec::new(),
            nodes: Vec::new(),
            bounds: Vec::new(),
            leaf_size: leaf_size.max(1),
        };
        tree.split(points, &mut order, 0);
        tree.points = order.iter().map(|&i| points[i]).collect();
        tree.order = order;
        Ok(tree)
    }

    fn split(&mut self, points: &[Point3], idx: &mut [usize], offset: usize) -> usize {
        let members: Vec<Point3> = idx.iter().map(|&i| points[i]).collect();
        let bounds = Bounds::of(&members);
        let node = self.nodes.len();
        self.nodes.push(Node::Leaf { start: offset, end: offset + idx.len() });
        self.bounds.push(bounds.clone());
        if idx.len() <= self.leaf_size {
            return node;
        }
        let axis = (bounds.hi - bounds.lo).imax();
        if bounds.hi[axis] <= bounds.lo[axis] {
            // All remaining points coincide.
            return node;
        }
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let (l, r) = idx.split_at_mut(mid);
        let left = self.split(points, l, offset);
        let right = self.split(points, r, offset + mid);
        self.nodes[node] = Node::Split { axis, left, right, start: offset, end: offset + idx.len() };
        node
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], n: usize) -> usize {
            match nodes[n] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Calls `found` with the original index of every point within `r` of `q` (inclusive).
    pub fn for_each_within(&self, q: &Point3, r: f64, mut found: impl FnMut(usize)) {
        let r2 = r * r;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            if self.bounds[n].dist2(q) > r2 {
                continue;
            }
            match self.nodes[n] {
                Node::Leaf { start, end } => {
                    for i in start..end {
                        if (self.points[i] - q).norm_squared() <= r2 {
                            found(self.order[i]);
                        }
                    }
                }
                Node::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
    }

    /// Marks every point within `r` of any query as `mark[original index] = true`.
    ///
    /// Subtrees whose box lies inside a ball are marked in bulk and skipped by
    /// later queries.
    pub fn mark_within_any(&self, queries: &[Point3], r: f64, mark: &mut [bool]) {
        assert_eq!(mark.len(), self.len(), "mark buffer must match the index size");
        let r2 = r * r;
        let mut covered = vec![false; self.nodes.len()];
        let mut local = vec![false; self.len()];
        let mut stack = Vec::new();
        for q in queries {
            stack.push(0usize);
            while let Some(n) = stack.pop() {
                if covered[n] || self.bounds[n].dist2(q) > r2 {
                    continue;
                }
                if self.bounds[n].max_dist2(q) <= r2 {
                    covered[n] = true;
                    continue;
                }
                match self.nodes[n] {
                    Node::Leaf { start, end } => {
                        for i in start..end {
                            if !local[i] && (self.points[i] - q).norm_squared() <= r2 {
                                local[i] = true;
                            }
                        }
                    }
                    Node::Split { left, right, .. } => {
                        stack.push(right);
                        stack.push(left);
                    }
                }
            }
        }
        // Covered nodes mark their whole range; descendants of a covered node are skipped.
        stack.push(0);
        while let Some(n) = stack.pop() {
            let (start, end) = self.range(n);
            if covered[n] {
                local[start..end].fill(true);
                continue;
            }
            if let Node::Split { left, right, .. } = self.nodes[n] {
                stack.push(right);
                stack.push(left);
            }
        }
        for (i, &m) in local.iter().enumerate() {
            if m {
                mark[self.order[i]] = true;
            }
        }
    }

    fn range(&self, n: usize) -> (usize, usize) {
        match self.nodes[n] {
            Node::Leaf { start, end } | Node::Split { start, end, .. } => (start, end),
        }
    }

    /// Original indices of all points within `r` of `q`, ascending.
    pub fn within_radius(&self, q: &Point3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(q, r, |i| out.push(i));
        out.sort_unstable();
        out
    }

    /// Heap bytes held by the index.
    pub fn storage_bytes(&self) -> usize {
        self.points.len() * std::mem::size_of::<Point3>()
            + self.order.len() * std::mem::size_of::<usize>()
            + self.nodes.len() * std::mem::size_of::<Node>()
            + self.bounds.len() * std::mem::size_of::<Bounds>()
    }
}

pub fn build_spatial_index(points: &[Point3]) -> Result<SpatialIndex> {
    SpatialIndex::build(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0)))
            .collect()
    }

    #[test]
    fn single_point_tree() {
        let t = build_spatial_index(&[Point3::new(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(t.depth(), 0);
        assert_eq!(t.within_radius(&Point3::new(1.0, 2.0, 3.5), 0.5), vec![0]);
        assert!(t.within_radius(&Point3::new(1.0, 2.0, 3.6), 0.5).is_empty());
    }

    #[test]
    fn empty_is_an_error() {
        assert!(build_spatial_index(&[]).is_err());
    }

    #[test]
    fn matches_brute_force() {
        let pts = cloud(1, 1000);
        let t = build_spatial_index(&pts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let q = Point3::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(-8.0..8.0));
            let r = rng.random_range(0.1..20.0);
            let brute: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - q).norm_squared() <= r * r).collect();
            assert_eq!(t.within_radius(&q, r), brute);
        }
    }

    #[test]
    fn duplicates_and_determinism() {
        let mut pts = vec![Point3::new(1.0, 1.0, 1.0); 100];
        pts.extend(cloud(3, 50));
        let a = build_spatial_index(&pts).unwrap();
        let b = build_spatial_index(&pts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.within_radius(&Point3::new(1.0, 1.0, 1.0), 0.0).len(), 100);
    }

    #[test]
    fn balanced_depth() {
        let t = SpatialIndex::with_leaf_size(&cloud(4, 4096), 1).unwrap();
        assert_eq!(t.depth(), 12);
    }

    #[test]
    fn union_marks_match_brute_force() {
        let pts = cloud(5, 3000);
        let t = build_spatial_index(&pts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..40 {
            let qs: Vec<Point3> = (0..rng.random_range(1..60))
                .map(|_| Point3::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(-8.0..8.0)))
                .collect();
            let r = rng.random_range(0.0..40.0);
            let mut mark = vec![false; pts.len()];
            t.mark_within_any(&qs, r, &mut mark);
            for (i, p) in pts.iter().enumerate() {
                let want = qs.iter().any(|q| (p - q).norm_squared() <= r * r);
                assert_eq!(mark[i], want, "point {i} radius {r}");
            }
        }
    }
}
