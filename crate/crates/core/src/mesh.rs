//! Indexed triangle meshes.

use alloc::collections::BTreeMap;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::geom::SurfacePoint;
use crate::prelude::*;

/// Faces with an area below this are rejected as degenerate.
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    manifold: bool,
}

impl TriangleMesh {
    /// Validates indices, finiteness and face areas.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.iter().any(|p| !crate::geom::is_finite(p)) {
            return Err(Error::NonFinite);
        }
        let mesh = Self { vertices, faces, manifold: false };
        for (f, face) in mesh.faces.iter().enumerate() {
            for &v in face {
                if v >= mesh.vertices.len() {
                    return Err(Error::FaceIndexOutOfRange {
                        face: f,
                        vertex: v,
                        count: mesh.vertices.len(),
                    });
                }
            }
            let area = mesh.face_area(f);
            if !(area >= MIN_FACE_AREA) {
                return Err(Error::DegenerateFace { face: f, area });
            }
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    /// Mutable vertex positions; the connectivity is fixed.
    pub fn vertices_mut(&mut self) -> &mut [Point3] {
        &mut self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Whether the mesh has been verified (or constructed) as a 2-manifold.
    pub fn is_manifold(&self) -> bool {
        self.manifold
    }

    /// Runs the manifold verifier and stores the result in the flag.
    pub fn flag_manifold(&mut self) -> bool {
        self.manifold = self.verify_manifold();
        self.manifold
    }

    pub fn face_points(&self, face: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Cross product of the two edges leaving the first corner; its length
    /// is twice the face area.
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.face_points(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    /// Unit normal following the stored winding (counter-clockwise when
    /// seen from the side it points to).
    pub fn face_normal(&self, face: usize) -> Result<Vec3> {
        let n = self.face_cross(face);
        let area = 0.5 * n.norm();
        if !(area >= MIN_FACE_AREA) {
            return Err(Error::DegenerateFace { face, area });
        }
        Ok(n / (2.0 * area))
    }

    /// Area-weighted average of incident face normals, renormalized. Vertices
    /// without incident faces get a zero vector.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![Vec3::zeros(); self.vertices.len()];
        for (f, face) in self.faces.iter().enumerate() {
            let n = self.face_cross(f);
            for &v in face {
                normals[v] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Sorted one-ring neighbor indices of every vertex.
    pub fn one_rings(&self) -> Vec<Vec<usize>> {
        let mut rings = vec![Vec::new(); self.vertices.len()];
        for &[a, b, c] in &self.faces {
            rings[a].extend_from_slice(&[b, c]);
            rings[b].extend_from_slice(&[c, a]);
            rings[c].extend_from_slice(&[a, b]);
        }
        for r in &mut rings {
            r.sort_unstable();
            r.dedup();
        }
        rings
    }

    /// Indices of the faces incident to each vertex.
    pub fn vertex_faces(&self) -> Vec<Vec<usize>> {
        let mut incident = vec![Vec::new(); self.vertices.len()];
        for (f, face) in self.faces.iter().enumerate() {
            for &v in face {
                incident[v].push(f);
            }
        }
        incident
    }

    pub fn surface_point(&self, face: usize, barycentric: [f64; 3]) -> Result<SurfacePoint> {
        let [a, b, c] = self.face_points(face);
        let position = Point3::from(
            a.coords * barycentric[0] + b.coords * barycentric[1] + c.coords * barycentric[2],
        );
        Ok(SurfacePoint { face, barycentric, position, normal: self.face_normal(face)? })
    }

    /// Number of faces incident to every undirected edge.
    pub fn edge_face_counts(&self) -> BTreeMap<(usize, usize), usize> {
        let mut counts = BTreeMap::new();
        for face in &self.faces {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Fans of faces around each vertex: faces are in the same fan when
    /// they are linked through edges incident to the vertex.
    fn vertex_fans(&self, incident: &[Vec<usize>]) -> Vec<Vec<Vec<usize>>> {
        let mut all = Vec::with_capacity(self.vertices.len());
        for (v, faces) in incident.iter().enumerate() {
            let mut parent: Vec<usize> = (0..faces.len()).collect();
            fn find(parent: &mut [usize], mut i: usize) -> usize {
                while parent[i] != i {
                    parent[i] = parent[parent[i]];
                    i = parent[i];
                }
                i
            }
            // (other endpoint, local face index) for both edges through `v`.
            let mut spokes: Vec<(usize, usize)> = Vec::with_capacity(2 * faces.len());
            for (local, &f) in faces.iter().enumerate() {
                for &u in &self.faces[f] {
                    if u != v {
                        spokes.push((u, local));
                    }
                }
            }
            spokes.sort_unstable();
            for pair in spokes.windows(2) {
                if pair[0].0 == pair[1].0 {
                    let (ra, rb) = (find(&mut parent, pair[0].1), find(&mut parent, pair[1].1));
                    parent[ra] = rb;
                }
            }
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for local in 0..faces.len() {
                let root = find(&mut parent, local);
                groups.entry(root).or_default().push(faces[local]);
            }
            all.push(groups.into_values().collect());
        }
        all
    }

    /// Every edge bounds one or two faces and the faces around every vertex
    /// form a single fan.
    pub fn verify_manifold(&self) -> bool {
        if self.edge_face_counts().values().any(|&c| c == 0 || c > 2) {
            return false;
        }
        let incident = self.vertex_faces();
        self.vertex_fans(&incident).iter().all(|fans| fans.len() <= 1)
    }

    /// Duplicates vertices whose incident faces form several fans so each
    /// copy carries one fan. Returns the number of vertices added.
    pub fn split_nonmanifold_vertices(&mut self) -> usize {
        let incident = self.vertex_faces();
        let fans = self.vertex_fans(&incident);
        let mut added = 0;
        for (v, vertex_fans) in fans.into_iter().enumerate() {
            for fan in vertex_fans.into_iter().skip(1) {
                let copy = self.vertices.len();
                self.vertices.push(self.vertices[v]);
                for f in fan {
                    for slot in &mut self.faces[f] {
                        if *slot == v {
                            *slot = copy;
                        }
                    }
                }
                added += 1;
            }
        }
        added
    }

    /// Drops vertices no face references and renumbers the rest in order.
    pub fn remove_unreferenced_vertices(&mut self) {
        let mut used = vec![false; self.vertices.len()];
        for face in &self.faces {
            for &v in face {
                used[v] = true;
            }
        }
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for (v, p) in self.vertices.iter().enumerate() {
            if used[v] {
                remap[v] = kept.len();
                kept.push(*p);
            }
        }
        for face in &mut self.faces {
            for v in face.iter_mut() {
                *v = remap[*v];
            }
        }
        self.vertices = kept;
    }

    /// Disjoint union; the result keeps the manifold flag only when both
    /// inputs carry it.
    pub fn append(&mut self, other: &TriangleMesh) {
        let offset = self.vertices.len();
        let was_empty = self.faces.is_empty();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(other.faces.iter().map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]));
        self.manifold = if was_empty { other.manifold } else { self.manifold && other.manifold };
    }

    /// Number of connected components (faces linked through shared vertices).
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for &[a, b, c] in &self.faces {
            for (x, y) in [(a, b), (b, c)] {
                let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
                if rx != ry {
                    parent[rx] = ry;
                }
            }
        }
        let mut roots: Vec<usize> = self.faces.iter().map(|f| find(&mut parent, f[0])).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for face in &self.faces {
            for &v in face {
                used[v] = true;
            }
        }
        let v = used.iter().filter(|u| **u).count() as i64;
        let e = self.edge_face_counts().len() as i64;
        v - e + self.faces.len() as i64
    }

    /// Signed enclosed volume (positive for closed meshes with outward normals).
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (self.vertices[a].coords, self.vertices[b].coords, self.vertices[c].coords);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn bounding_box(&self) -> Option<(Point3, Point3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    /// Reverses the winding of every face.
    pub fn flip(&mut self) {
        for f in &mut self.faces {
            f.swap(1, 2);
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }
}

/// Axis-aligned unit cube `[0,1]^3` with outward normals (12 faces).
pub fn unit_cube() -> TriangleMesh {
    box_mesh(Point3::origin(), Point3::new(1.0, 1.0, 1.0))
}

/// Axis-aligned box with outward-facing winding.
pub fn box_mesh(lo: Point3, hi: Point3) -> TriangleMesh {
    let v = |x: usize, y: usize, z: usize| {
        Point3::new(
            if x == 0 { lo.x } else { hi.x },
            if y == 0 { lo.y } else { hi.y },
            if z == 0 { lo.z } else { hi.z },
        )
    };
    let vertices = vec![
        v(0, 0, 0), v(1, 0, 0), v(1, 1, 0), v(0, 1, 0),
        v(0, 0, 1), v(1, 0, 1), v(1, 1, 1), v(0, 1, 1),
    ];
    let faces = vec![
        [0, 2, 1], [0, 3, 2], // z = lo
        [4, 5, 6], [4, 6, 7], // z = hi
        [0, 1, 5], [0, 5, 4], // y = lo
        [3, 7, 6], [3, 6, 2], // y = hi
        [0, 4, 7], [0, 7, 3], // x = lo
        [1, 2, 6], [1, 6, 5], // x = hi
    ];
    let mut mesh = TriangleMesh::new(vertices, faces).expect("box must be non-degenerate");
    mesh.flag_manifold();
    mesh
}

/// Regular grid of `nx × ny` quads (two triangles each) spanning
/// `origin + s·u + t·v` for `s, t ∈ [0, 1]`.
pub fn grid_mesh(origin: Point3, u: Vec3, v: Vec3, nx: usize, ny: usize) -> TriangleMesh {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(origin + u * (i as f64 / nx as f64) + v * (j as f64 / ny as f64));
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let mut mesh = TriangleMesh::new(vertices, faces).expect("grid must be non-degenerate");
    mesh.flag_manifold();
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tri(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> TriangleMesh {
        TriangleMesh::new(
            vec![Point3::from(a), Point3::from(b), Point3::from(c)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn face_normal_orientation_and_scale() {
        let m = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert_eq!(m.face_normal(0).unwrap(), Vec3::new(0.0, 0.0, 1.0));
        let r = tri([0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]);
        assert_eq!(r.face_normal(0).unwrap(), Vec3::new(0.0, 0.0, -1.0));
        let s = tri([0.0, 0.0, 0.0], [7.0, 0.0, 0.0], [0.0, 7.0, 0.0]);
        assert_eq!(s.face_normal(0).unwrap(), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn degenerate_faces_rejected() {
        let err = TriangleMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        );
        assert!(matches!(err, Err(Error::DegenerateFace { face: 0, .. })));
        let err = TriangleMesh::new(vec![Point3::origin()], vec![[0, 1, 2]]);
        assert!(matches!(err, Err(Error::FaceIndexOutOfRange { .. })));
    }

    #[test]
    fn cube_is_closed_manifold() {
        let cube = unit_cube();
        assert!(cube.verify_manifold());
        assert_eq!(cube.euler_characteristic(), 2);
        assert_relative_eq!(cube.signed_volume(), 1.0, epsilon = 1e-12);
        for f in 0..12 {
            let n = cube.face_normal(f).unwrap();
            let c = cube.face_points(f).iter().fold(Vec3::zeros(), |s, p| s + p.coords) / 3.0;
            // Outward: normal points away from the cube center.
            assert!(n.dot(&(c - Vec3::new(0.5, 0.5, 0.5))) > 0.0);
        }
    }

    #[test]
    fn cubes_sharing_one_edge_rejected() {
        let mut m = unit_cube();
        let other = box_mesh(Point3::new(1.0, 1.0, 0.0), Point3::new(2.0, 2.0, 1.0));
        // Weld the coincident vertices so the two cubes share the edge x=1,y=1.
        let mut verts = m.vertices().to_vec();
        let mut faces = m.faces().to_vec();
        let mut remap = Vec::new();
        for p in other.vertices() {
            match verts.iter().position(|q| q == p) {
                Some(i) => remap.push(i),
                None => {
                    verts.push(*p);
                    remap.push(verts.len() - 1);
                }
            }
        }
        faces.extend(other.faces().iter().map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]]));
        m = TriangleMesh::new(verts, faces).unwrap();
        assert!(!m.verify_manifold());
    }

    #[test]
    fn bowtie_vertex_is_split() {
        // Two triangles touching at a single vertex.
        let verts = vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, -1.0, 0.0),
        ];
        let mut m = TriangleMesh::new(verts, vec![[0, 1, 2], [0, 3, 4]]).unwrap();
        assert!(!m.verify_manifold());
        assert_eq!(m.split_nonmanifold_vertices(), 1);
        assert!(m.verify_manifold());
        assert_eq!(m.vertices().len(), 6);
    }

    #[test]
    fn append_counts_components() {
        let mut m = unit_cube();
        m.append(&box_mesh(Point3::new(3.0, 0.0, 0.0), Point3::new(4.0, 1.0, 1.0)));
        assert_eq!(m.component_count(), 2);
        assert_eq!(m.faces().len(), 24);
        assert!(m.is_manifold());
    }

    #[test]
    fn vertex_normals_are_unit() {
        let g = grid_mesh(Point3::origin(), Vec3::x() * 2.0, Vec3::y(), 3, 2);
        for n in g.vertex_normals() {
            assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(n, Vec3::z(), epsilon = 1e-12);
        }
        assert!(g.verify_manifold());
        assert_eq!(g.euler_characteristic(), 1);
    }

    #[test]
    fn one_ring_of_grid_interior() {
        let g = grid_mesh(Point3::origin(), Vec3::x(), Vec3::y(), 2, 2);
        let rings = g.one_rings();
        assert_eq!(rings[4].len(), 6);
    }

    #[test]
    fn remove_unreferenced_compacts() {
        let mut m = TriangleMesh::new(
            vec![Point3::new(9.0, 9.0, 9.0), Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[1, 2, 3]],
        )
        .unwrap();
        m.remove_unreferenced_vertices();
        assert_eq!(m.vertices().len(), 3);
        assert_eq!(m.faces()[0], [0, 1, 2]);
    }
}
