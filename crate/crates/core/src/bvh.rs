//! Axis-aligned bounding-box hierarchy over mesh faces, used for nearest
//! triangle queries and ray casting.

use crate::distance::point_to_triangle_distance;
use crate::mesh::TriangleMesh;
use crate::prelude::*;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point3,
    hi: Point3,
}

impl Aabb {
    fn empty() -> Self {
        let inf = f64::INFINITY;
        Self { lo: Point3::new(inf, inf, inf), hi: Point3::new(-inf, -inf, -inf) }
    }

    fn grow(&mut self, p: &Point3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn squared_distance(&self, p: &Point3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let e = if p[k] < self.lo[k] {
                self.lo[k] - p[k]
            } else if p[k] > self.hi[k] {
                p[k] - self.hi[k]
            } else {
                0.0
            };
            d += e * e;
        }
        d
    }

    /// Entry parameter of the slab test, or `None` on a miss.
    fn ray_entry(&self, origin: &Point3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.lo[k] - origin[k]) * inv_dir[k];
            let b = (self.hi[k] - origin[k]) * inv_dir[k];
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            // NaN (0 * inf) means the origin lies on the slab plane: no constraint.
            if near.is_finite() || near == f64::INFINITY {
                t0 = t0.max(near);
            }
            if far.is_finite() || far == f64::NEG_INFINITY {
                t1 = t1.min(far);
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf { bounds: Aabb, start: usize, count: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Result of a ray cast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Ray parameter (distance along a unit direction).
    pub t: f64,
    pub face: usize,
    pub barycentric: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Bvh {
    triangles: Vec<[Point3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl Bvh {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let triangles: Vec<[Point3; 3]> = (0..mesh.faces().len()).map(|f| mesh.face_points(f)).collect();
        Self::from_triangles(triangles)
    }

    pub fn from_triangles(triangles: Vec<[Point3; 3]>) -> Self {
        let mut bvh = Self { order: (0..triangles.len()).collect(), triangles, nodes: Vec::new() };
        if !bvh.triangles.is_empty() {
            let centroids: Vec<Point3> = bvh
                .triangles
                .iter()
                .map(|t| Point3::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
                .collect();
            let n = bvh.triangles.len();
            bvh.build(&centroids, 0, n);
        }
        bvh
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, face: usize) -> &[Point3; 3] {
        &self.triangles[face]
    }

    fn build(&mut self, centroids: &[Point3], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &f in &self.order[start..end] {
            for p in &self.triangles[f] {
                bounds.grow(p);
            }
            cbounds.grow(&centroids[f]);
        }
        let index = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, count: end - start });
            return index;
        }
        let extent = cbounds.hi - cbounds.lo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        self.order[start..end].sort_unstable_by(|&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        self.nodes.push(Node::Leaf { bounds, start, count: 0 });
        let left = self.build(centroids, start, mid);
        let right = self.build(centroids, mid, end);
        self.nodes[index] = Node::Inner { bounds, left, right };
        index
    }

    /// Distance to, and index of, the nearest face. Identical to an
    /// exhaustive minimum over all faces.
    pub fn nearest(&self, p: &Point3) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().squared_distance(p) > best.0 * best.0 {
                continue;
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for &f in &self.order[start..start + count] {
                        let d = point_to_triangle_distance(p, &self.triangles[f]);
                        if d < best.0 || (d == best.0 && f < best.1) {
                            best = (d, f);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().squared_distance(p);
                    let dr = self.nodes[right].bounds().squared_distance(p);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        Some(best)
    }

    /// First intersection of `origin + t·dir` (`dir` need not be unit; `t`
    /// is in its units) with `0 < t ≤ t_max`. Faces are two-sided.
    pub fn raycast(&self, origin: &Point3, dir: &Vec3, t_max: f64) -> Option<RayHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv_dir = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<RayHit> = None;
        let mut limit = t_max;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().ray_entry(origin, &inv_dir, limit).is_none() {
                continue;
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for &f in &self.order[start..start + count] {
                        if let Some((t, bary)) = ray_triangle(origin, dir, &self.triangles[f]) {
                            let better = match best {
                                None => t <= limit,
                                Some(b) => t < b.t || (t == b.t && f < b.face),
                            };
                            if better {
                                best = Some(RayHit { t, face: f, barycentric: bary });
                                limit = t;
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }
}

/// Möller–Trumbore intersection, two-sided; returns `(t, barycentric)` for
/// `t > 0`.
pub fn ray_triangle(origin: &Point3, dir: &Vec3, tri: &[Point3; 3]) -> Option<(f64, [f64; 3])> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - tri[0];
    let u = tvec.dot(&pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv;
    if t <= 0.0 {
        return None;
    }
    Some((t, [1.0 - u - v, u, v]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{grid_mesh, unit_cube};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearest_matches_exhaustive() {
        let mesh = grid_mesh(Point3::origin(), Vec3::new(3.0, 0.0, 0.5), Vec3::new(0.0, 2.0, 0.0), 7, 5);
        let bvh = Bvh::new(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = Point3::new(rng.gen_range(-1.0..4.0), rng.gen_range(-1.0..3.0), rng.gen_range(-1.0..2.0));
            let brute = (0..mesh.faces().len())
                .map(|f| point_to_triangle_distance(&p, &mesh.face_points(f)))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(bvh.nearest(&p).unwrap().0, brute);
        }
    }

    #[test]
    fn raycast_hits_nearest_face() {
        let bvh = Bvh::new(&unit_cube());
        let hit = bvh.raycast(&Point3::new(0.5, 0.5, -2.0), &Vec3::z(), f64::INFINITY).unwrap();
        assert!((hit.t - 2.0).abs() < 1e-12);
        let hit = bvh.raycast(&Point3::new(0.25, 0.5, 0.5), &Vec3::x(), f64::INFINITY).unwrap();
        assert!((hit.t - 0.75).abs() < 1e-12);
        assert!(bvh.raycast(&Point3::new(0.5, 0.5, -2.0), &Vec3::z(), 1.0).is_none());
        assert!(bvh.raycast(&Point3::new(5.0, 0.5, 0.5), &Vec3::y(), 10.0).is_none());
    }
}
