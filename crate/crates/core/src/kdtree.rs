//! Static 3D kd-tree for exact nearest-neighbour queries.
//!
//! Distances are the plain squared Euclidean distance, so results equal a
//! brute-force scan bit for bit. Ties resolve to the smaller point index.

use alloc::vec::Vec;

use crate::geometry::Point3;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    /// Point indices laid out as an implicit balanced tree: the node of a
    /// slice is its midpoint, split along `depth % 3`.
    order: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance_sq: f64,
}

impl Neighbor {
    #[inline]
    pub fn distance(&self) -> f64 {
        libm::sqrt(self.distance_sq)
    }

    #[inline]
    fn better_than(&self, o: &Neighbor) -> bool {
        self.distance_sq < o.distance_sq
            || (self.distance_sq == o.distance_sq && self.index < o.index)
    }
}

impl KdTree {
    pub fn new(points: Vec<Point3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        Self { points, order }
    }

    pub fn from_slice(points: &[Point3]) -> Self {
        Self::new(points.to_vec())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn nearest(&self, q: Point3) -> Option<Neighbor> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Neighbor {
            index: usize::MAX,
            distance_sq: f64::INFINITY,
        };
        self.nearest_in(q, &self.order, 0, &mut best);
        Some(best)
    }

    /// The `k` nearest points, closest first.
    pub fn k_nearest(&self, q: Point3, k: usize) -> Vec<Neighbor> {
        let mut heap: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.knn_in(q, k, &self.order, 0, &mut heap);
        }
        heap
    }

    fn nearest_in(&self, q: Point3, slice: &[usize], depth: usize, best: &mut Neighbor) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let idx = slice[mid];
        let p = self.points[idx];
        let cand = Neighbor {
            index: idx,
            distance_sq: p.distance_sq(q),
        };
        if cand.better_than(best) {
            *best = cand;
        }
        let axis = depth % 3;
        let diff = q.component(axis) - p.component(axis);
        let (near, far) = if diff < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.nearest_in(q, near, depth + 1, best);
        if diff * diff <= best.distance_sq {
            self.nearest_in(q, far, depth + 1, best);
        }
    }

    fn knn_in(&self, q: Point3, k: usize, slice: &[usize], depth: usize, heap: &mut Vec<Neighbor>) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let idx = slice[mid];
        let p = self.points[idx];
        let cand = Neighbor {
            index: idx,
            distance_sq: p.distance_sq(q),
        };
        if heap.len() < k || cand.better_than(&heap[heap.len() - 1]) {
            let pos = heap
                .iter()
                .position(|n| cand.better_than(n))
                .unwrap_or(heap.len());
            heap.insert(pos, cand);
            heap.truncate(k);
        }
        let axis = depth % 3;
        let diff = q.component(axis) - p.component(axis);
        let (near, far) = if diff < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.knn_in(q, k, near, depth + 1, heap);
        if heap.len() < k || diff * diff <= heap[heap.len() - 1].distance_sq {
            self.knn_in(q, k, far, depth + 1, heap);
        }
    }
}

fn build(points: &[Point3], slice: &mut [usize], depth: usize) {
    if slice.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a]
            .component(axis)
            .total_cmp(&points[b].component(axis))
            .then(a.cmp(&b))
    });
    let (left, right) = slice.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}
