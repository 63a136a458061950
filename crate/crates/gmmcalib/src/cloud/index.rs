//! Exact nearest-neighbour queries over a point cloud.
//!
//! A plain kd-tree with median splits. Queries prune subtrees only when the
//! splitting plane is provably farther than the current best, so results match
//! a linear scan exactly; there is no approximation knob to misconfigure.

use super::{CloudError, PointCloud};
use crate::se3::Vec3;

#[derive(Debug)]
struct Node {
    /// Index into `points`.
    point: usize,
    axis: usize,
    left: Option<Box<Node>>,
    right: Option<Box<Node>>,
}

#[derive(Debug)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    root: Node,
}

impl SpatialIndex {
    /// Build an index over the cloud's points. Errors on an empty cloud.
    pub fn build(cloud: &PointCloud) -> Result<Self, CloudError> {
        Self::from_points(cloud.points().to_vec())
    }

    pub fn from_points(points: Vec<Vec3>) -> Result<Self, CloudError> {
        if points.is_empty() {
            return Err(CloudError::EmptyCloud);
        }
        let mut indices: Vec<usize> = (0..points.len()).collect();
        let root = build_node(&points, &mut indices, 0).expect("non-empty slice builds a node");
        Ok(Self { points, root })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty clouds
    }

    /// Index and Euclidean distance of the exact closest point to `query`.
    pub fn nearest(&self, query: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(&self.root, query, &mut best);
        (best.0, best.1.sqrt())
    }

    fn nearest_rec(&self, node: &Node, query: &Vec3, best: &mut (usize, f64)) {
        let d2 = (self.points[node.point] - query).norm_squared();
        if d2 < best.1 {
            *best = (node.point, d2);
        }
        let delta = query[node.axis] - self.points[node.point][node.axis];
        let (near, far) = if delta < 0.0 {
            (&node.left, &node.right)
        } else {
            (&node.right, &node.left)
        };
        if let Some(n) = near {
            self.nearest_rec(n, query, best);
        }
        if let Some(f) = far {
            if delta * delta <= best.1 {
                self.nearest_rec(f, query, best);
            }
        }
    }

    /// The `k` exact closest points, ascending by distance. Returns fewer
    /// entries when the index holds fewer than `k` points.
    pub fn k_nearest(&self, query: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        // Bounded worst-first heap as a sorted vec; k is small (tens) in
        // every caller, so linear insertion is fine.
        let mut heap: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        self.k_nearest_rec(&self.root, query, k, &mut heap);
        heap.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
    }

    fn k_nearest_rec(&self, node: &Node, query: &Vec3, k: usize, heap: &mut Vec<(usize, f64)>) {
        let d2 = (self.points[node.point] - query).norm_squared();
        let worst = heap.last().map(|&(_, d)| d).unwrap_or(f64::INFINITY);
        if heap.len() < k || d2 < worst {
            let pos = heap.partition_point(|&(_, d)| d <= d2);
            heap.insert(pos, (node.point, d2));
            heap.truncate(k);
        }
        let delta = query[node.axis] - self.points[node.point][node.axis];
        let (near, far) = if delta < 0.0 {
            (&node.left, &node.right)
        } else {
            (&node.right, &node.left)
        };
        if let Some(n) = near {
            self.k_nearest_rec(n, query, k, heap);
        }
        if let Some(f) = far {
            let worst = heap.last().map(|&(_, d)| d).unwrap_or(f64::INFINITY);
            if heap.len() < k || delta * delta <= worst {
                self.k_nearest_rec(f, query, k, heap);
            }
        }
    }
}

fn build_node(points: &[Vec3], indices: &mut [usize], depth: usize) -> Option<Node> {
    if indices.is_empty() {
        return None;
    }
    let axis = depth % 3;
    let mid = indices.len() / 2;
    indices.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let point = indices[mid];
    let (left, rest) = indices.split_at_mut(mid);
    let right = &mut rest[1..];
    Some(Node {
        point,
        axis,
        left: build_node(points, left, depth + 1).map(Box::new),
        right: build_node(points, right, depth + 1).map(Box::new),
    })
}
