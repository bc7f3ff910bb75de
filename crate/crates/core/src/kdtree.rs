//! Static 3-d tree for nearest-neighbor queries over point clouds.

use crate::prelude::*;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    point: usize,
    axis: u8,
    left: usize,
    right: usize,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    nodes: Vec<Node>,
    root: usize,
}

impl KdTree {
    pub fn new(points: Vec<Point3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut tree = Self { points, nodes: Vec::new(), root: NONE };
        tree.nodes.reserve(order.len());
        tree.root = tree.build(&mut order);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    fn build(&mut self, idx: &mut [usize]) -> usize {
        if idx.is_empty() {
            return NONE;
        }
        let mut lo = self.points[idx[0]];
        let mut hi = lo;
        for &i in idx.iter() {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let ext = hi - lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = idx.len() / 2;
        let pts = &self.points;
        idx.select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        let node = self.nodes.len();
        self.nodes.push(Node { point: idx[mid], axis: axis as u8, left: NONE, right: NONE });
        let (left, rest) = idx.split_at_mut(mid);
        let l = self.build(left);
        let r = self.build(&mut rest[1..]);
        self.nodes[node].left = l;
        self.nodes[node].right = r;
        node
    }

    /// Index of and squared distance to the nearest point.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        let mut best = (NONE, f64::INFINITY);
        self.nearest_rec(self.root, q, &mut best);
        (best.0 != NONE).then_some(best)
    }

    fn nearest_rec(&self, n: usize, q: &Point3, best: &mut (usize, f64)) {
        if n == NONE {
            return;
        }
        let node = self.nodes[n];
        let p = &self.points[node.point];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && node.point < best.0) {
            *best = (node.point, d2);
        }
        let diff = q[node.axis as usize] - p[node.axis as usize];
        let (first, second) = if diff < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        self.nearest_rec(first, q, best);
        if diff * diff <= best.1 {
            self.nearest_rec(second, q, best);
        }
    }

    /// The `k` nearest points, sorted by increasing distance.
    pub fn k_nearest(&self, q: &Point3, k: usize) -> Vec<(usize, f64)> {
        let mut heap: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.knn_rec(self.root, q, k, &mut heap);
        }
        heap
    }

    fn knn_rec(&self, n: usize, q: &Point3, k: usize, best: &mut Vec<(usize, f64)>) {
        if n == NONE {
            return;
        }
        let node = self.nodes[n];
        let p = &self.points[node.point];
        let d2 = (p - q).norm_squared();
        if best.len() < k || d2 < best[best.len() - 1].1 {
            let pos = best.partition_point(|e| e.1 < d2 || (e.1 == d2 && e.0 < node.point));
            best.insert(pos, (node.point, d2));
            best.truncate(k);
        }
        let diff = q[node.axis as usize] - p[node.axis as usize];
        let (first, second) = if diff < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        self.knn_rec(first, q, k, best);
        if best.len() < k || diff * diff <= best[best.len() - 1].1 {
            self.knn_rec(second, q, k, best);
        }
    }

    /// All points within `radius` of `q`, in index order.
    pub fn within_radius(&self, q: &Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        let r2 = radius * radius;
        while let Some(n) = stack.pop() {
            if n == NONE {
                continue;
            }
            let node = self.nodes[n];
            let p = &self.points[node.point];
            if (p - q).norm_squared() <= r2 {
                out.push(node.point);
            }
            let diff = q[node.axis as usize] - p[node.axis as usize];
            if diff <= radius {
                stack.push(node.left);
            }
            if diff >= -radius {
                stack.push(node.right);
            }
        }
        out.sort_unstable();
        out
    }
}
