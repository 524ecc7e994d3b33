//! Axis-aligned kd-tree over point positions for exact k-NN and radius
//! queries.
//!
//! Queries are exact: they return the same id sets as a linear scan. Ties in
//! k-NN distance break toward the smaller point id.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
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

/// Immutable spatial index; safe to share across threads.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    /// Point ids, permuted so that each leaf owns a contiguous range.
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: usize,
}

/// Candidate ordered by (distance, id); used as a max-heap entry so the
/// worst of the current k best sits on top.
#[derive(PartialEq)]
struct Candidate {
    dist2: f64,
    id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .partial_cmp(&other.dist2)
            .unwrap()
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl SpatialIndex {
    pub fn build(positions: &[[f64; 3]]) -> Self {
        Self::with_leaf_size(positions, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(positions: &[[f64; 3]], leaf_size: usize) -> Self {
        assert!(!positions.is_empty(), "cannot index an empty cloud");
        let leaf_size = leaf_size.max(1);
        let mut order: Vec<u32> = (0..positions.len() as u32).collect();
        let mut nodes = Vec::new();
        let n = positions.len();
        let root = build_node(positions, &mut order, 0, n, leaf_size, &mut nodes);
        Self {
            points: positions.to_vec(),
            order,
            nodes,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Ids of the `k` nearest points, ascending by distance, ties toward the
    /// smaller id. Panics if `k` exceeds the number of indexed points.
    pub fn knn(&self, query: &[f64; 3], k: usize) -> Vec<u32> {
        assert!(
            k <= self.points.len(),
            "knn: k={} exceeds cloud size {}",
            k,
            self.points.len()
        );
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_node(self.root, query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| c.id).collect()
    }

    fn knn_node(&self, node: usize, query: &[f64; 3], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let d2 = dist2(query, &self.points[id as usize]);
                    let cand = Candidate { dist2: d2, id };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[axis] - value;
                let (near, far) = if delta <= 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, query, k, heap);
                // Visit the far side if the splitting plane may still hold a
                // candidate no worse than the current k-th (ties included,
                // so equal-distance smaller ids are never missed).
                if heap.len() < k || delta * delta <= heap.peek().unwrap().dist2 {
                    self.knn_node(far, query, k, heap);
                }
            }
        }
    }

    /// Ids of all points with Euclidean distance `<= r` from `query`,
    /// ascending by id.
    pub fn radius(&self, query: &[f64; 3], r: f64) -> Vec<u32> {
        assert!(r > 0.0, "radius must be positive");
        let mut out = Vec::new();
        self.radius_node(self.root, query, r * r, &mut out);
        out.sort_unstable();
        out
    }

    fn radius_node(&self, node: usize, query: &[f64; 3], r2: f64, out: &mut Vec<u32>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    if dist2(query, &self.points[id as usize]) <= r2 {
                        out.push(id);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[axis] - value;
                let (near, far) = if delta <= 0.0 { (left, right) } else { (right, left) };
                self.radius_node(near, query, r2, out);
                if delta * delta <= r2 {
                    self.radius_node(far, query, r2, out);
                }
            }
        }
    }
}

fn build_node(
    positions: &[[f64; 3]],
    order: &mut [u32],
    start: usize,
    end: usize,
    leaf_size: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    if end - start <= leaf_size {
        nodes.push(Node::Leaf { start, end });
        return nodes.len() - 1;
    }
    // Split on the widest axis at the median.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &id in &order[start..end] {
        let p = &positions[id as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
        .unwrap();
    if hi[axis] - lo[axis] == 0.0 {
        // All points coincide on every axis; further splits cannot help.
        nodes.push(Node::Leaf { start, end });
        return nodes.len() - 1;
    }
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        positions[a as usize][axis]
            .partial_cmp(&positions[b as usize][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let value = positions[order[mid] as usize][axis];
    let left = build_node(positions, order, start, mid, leaf_size, nodes);
    let right = build_node(positions, order, mid, end, leaf_size, nodes);
    nodes.push(Node::Split {
        axis,
        value,
        left,
        right,
    });
    nodes.len() - 1
}

/// Linear-scan references used by the oracle tests and the acceptance gate.
pub mod brute {
    use super::dist2;

    pub fn knn(positions: &[[f64; 3]], query: &[f64; 3], k: usize) -> Vec<u32> {
        let mut ids: Vec<u32> = (0..positions.len() as u32).collect();
        ids.sort_by(|&a, &b| {
            dist2(query, &positions[a as usize])
                .partial_cmp(&dist2(query, &positions[b as usize]))
                .unwrap()
                .then(a.cmp(&b))
        });
        ids.truncate(k);
        ids
    }

    pub fn radius(positions: &[[f64; 3]], query: &[f64; 3], r: f64) -> Vec<u32> {
        let r2 = r * r;
        (0..positions.len() as u32)
            .filter(|&id| dist2(query, &positions[id as usize]) <= r2)
            .collect()
    }
}
