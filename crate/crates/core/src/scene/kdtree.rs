//! Exact nearest-neighbor search over a static 3D point set.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

pub const LEAF_SIZE: usize = 16;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Squared Euclidean distance, evaluated in a fixed order so that every
/// caller agrees bit-for-bit.
#[inline]
pub fn dist2(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Balanced kd-tree splitting on the widest axis at the median.
///
/// Every query is exact; equal distances resolve to the lowest point index.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    /// Point ids in leaf order.
    perm: Vec<usize>,
    nodes: Vec<Node>,
    /// Bounding box of each node's points.
    bounds: Vec<(Vector3<f64>, Vector3<f64>)>,
}

/// Squared distance from `q` to an axis-aligned box; never exceeds
/// [`dist2`] to any point inside it.
#[inline]
fn box_dist2(q: &Vector3<f64>, (lo, hi): &(Vector3<f64>, Vector3<f64>)) -> f64 {
    let gap = |k: usize| {
        if q[k] < lo[k] {
            lo[k] - q[k]
        } else if q[k] > hi[k] {
            q[k] - hi[k]
        } else {
            0.0
        }
    };
    let (dx, dy, dz) = (gap(0), gap(1), gap(2));
    dx * dx + dy * dy + dz * dz
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    d2: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn build(points: Vec<Vector3<f64>>) -> Self {
        let mut tree = KdTree {
            perm: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
            bounds: Vec::new(),
        };
        if !tree.points.is_empty() {
            let n = tree.points.len();
            tree.build_node(0, n);
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.perm[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        self.bounds.push((lo, hi));
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.perm[start..end].select_nth_unstable_by(mid - start, |a, b| {
            points[*a][axis].total_cmp(&points[*b][axis]).then(a.cmp(b))
        });
        let value = self.points[self.perm[mid]][axis];
        // Placeholder, patched once both children exist.
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[slot] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    /// Index and squared distance of the nearest point, or `None` when empty.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Candidate {
            d2: f64::INFINITY,
            id: usize::MAX,
        };
        self.nearest_in(0, q, &mut best);
        Some((best.id, best.d2))
    }

    fn nearest_in(&self, node: usize, q: &Vector3<f64>, best: &mut Candidate) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let c = Candidate {
                        d2: dist2(q, &self.points[i]),
                        id: i,
                    };
                    if c < *best {
                        *best = c;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let (near, far) = if q[axis] < value { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                // Ties must still be visited so the lowest index can win.
                if box_dist2(q, &self.bounds[far]) <= best.d2 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points sorted by (distance, index).
    pub fn knn(&self, q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_in(0, q, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.id, c.d2)).collect()
    }

    fn knn_in(&self, node: usize, q: &Vector3<f64>, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let c = Candidate {
                        d2: dist2(q, &self.points[i]),
                        id: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap holds k items") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let (near, far) = if q[axis] < value { (left, right) } else { (right, left) };
                self.knn_in(near, q, k, heap);
                let bound = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().map_or(f64::INFINITY, |c| c.d2)
                };
                if box_dist2(q, &self.bounds[far]) <= bound {
                    self.knn_in(far, q, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vector3<f64>], q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let (dx, dy, dz) = (q.x - p.x, q.y - p.y, q.z - p.z);
            let d = dx * dx + dy * dy + dz * dz;
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn self_query_and_ties() {
        let pts = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, 5.0, 0.0),
        ];
        let t = KdTree::build(pts.clone());
        assert_eq!(t.nearest(&pts[2]), Some((2, 0.0)));
        assert_eq!(t.nearest(&Vector3::zeros()).unwrap().0, 0);
    }

    #[test]
    fn ties_across_leaves_resolve_to_lowest_index() {
        // Many duplicates force equal distances into different subtrees.
        let mut pts = Vec::new();
        for i in 0..200 {
            pts.push(Vector3::new((i % 7) as f64, (i % 3) as f64, 0.0));
        }
        let t = KdTree::build(pts.clone());
        for q in [Vector3::new(3.0, 1.0, 0.0), Vector3::new(0.5, 0.5, 0.0)] {
            assert_eq!(t.nearest(&q).unwrap(), brute(&pts, &q));
        }
    }

    #[test]
    fn knn_matches_sorted_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..500)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let t = KdTree::build(pts.clone());
        let q = Vector3::new(0.4, 0.5, 0.6);
        let mut all: Vec<(usize, f64)> = pts.iter().enumerate().map(|(i, p)| (i, dist2(&q, p))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        assert_eq!(t.knn(&q, 16), all[..16].to_vec());
        assert_eq!(t.knn(&q, 1000).len(), 500);
    }

    #[test]
    fn empty_tree() {
        let t = KdTree::build(Vec::new());
        assert!(t.nearest(&Vector3::zeros()).is_none());
        assert!(t.knn(&Vector3::zeros(), 3).is_empty());
    }
}
