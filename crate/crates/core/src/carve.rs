//! Visibility carving: Delaunay tetrahedralization of the cloud, free-space
//! votes from sensor-to-point rays and manifold boundary extraction.

use crate::geom::ScanPoint;
use crate::mesh::{TriangleMesh, MIN_FACE_AREA};
use crate::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NONE: usize = usize::MAX;

/// Vertex slots of the face opposite each vertex, counterclockwise seen from
/// outside a positively oriented tetrahedron.
pub const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

/// Jitter amplitude applied to input points (meters).
pub const JITTER: f64 = 1e-6;
pub const JITTER_SEED: u64 = 0x6361_7276_656d_6170;

fn coord(p: &Point3) -> robust::Coord3D<f64> {
    robust::Coord3D { x: p.x, y: p.y, z: p.z }
}

/// Positive when `d` is on the side of `(b − a) × (c − a)`.
pub fn orient(a: &Point3, b: &Point3, c: &Point3, d: &Point3) -> f64 {
    -robust::orient3d(coord(a), coord(b), coord(c), coord(d))
}

/// Positive when `e` is strictly inside the circumsphere of the positively
/// oriented tetrahedron `a, b, c, d`.
pub fn in_sphere(a: &Point3, b: &Point3, c: &Point3, d: &Point3, e: &Point3) -> f64 {
    -robust::insphere(coord(a), coord(b), coord(c), coord(d), coord(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum VertexKind {
    Data,
    /// One of the 8 bounding-box corners.
    Sky,
    /// Corner of the enclosing simplex used to seed the construction.
    Super,
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    /// Jittered positions used by every predicate.
    vertices: Vec<Point3>,
    kinds: Vec<VertexKind>,
    /// Whether each data point made it into the complex (exact duplicates do not).
    inserted: Vec<bool>,
    n_data: usize,
    tets: Vec<[usize; 4]>,
    neighbors: Vec<[usize; 4]>,
}

impl Triangulation {
    /// Delaunay tetrahedralization of `points` plus 8 far bounding-box
    /// corners enclosing both the points and `extra` (sensor centers).
    pub fn build(points: &[Point3], extra: &[Point3]) -> Result<Self> {
        Self::build_with(points, extra, true)
    }

    /// Like [`Triangulation::build`] but only the enclosing simplex bounds
    /// the complex; keeps small test complexes small.
    pub fn build_without_sky(points: &[Point3]) -> Result<Self> {
        Self::build_with(points, &[], false)
    }

    fn build_with(points: &[Point3], extra: &[Point3], sky: bool) -> Result<Self> {
        if points.len() < 5 {
            return Err(Error::TooFewPoints { needed: 5, got: points.len() });
        }
        if points.iter().chain(extra).any(|p| !crate::geom::is_finite(p)) {
            return Err(Error::NonFinite);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(JITTER_SEED);
        let mut jitter = |p: &Point3| p + Vec3::new(rng.gen_range(-JITTER..=JITTER), rng.gen_range(-JITTER..=JITTER), rng.gen_range(-JITTER..=JITTER));
        let mut vertices: Vec<Point3> = points.iter().map(&mut jitter).collect();
        let n_data = vertices.len();
        let mut kinds = vec![VertexKind::Data; n_data];

        let (lo, hi) = points.iter().chain(extra).fold((points[0], points[0]), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        let center = nalgebra::center(&lo, &hi);
        let size = (hi - lo).norm().max(1.0);
        let half = (hi - lo) / 2.0 + Vec3::repeat(0.5 * size);
        for k in 0..if sky { 8 } else { 0 } {
            let s = Vec3::new(
                if k & 1 == 0 { -1.0 } else { 1.0 },
                if k & 2 == 0 { -1.0 } else { 1.0 },
                if k & 4 == 0 { -1.0 } else { 1.0 },
            );
            vertices.push(jitter(&(center + half.component_mul(&s))));
            kinds.push(VertexKind::Sky);
        }
        let r = 1e3 * size;
        let first_super = vertices.len();
        for d in [Vec3::new(1.0, 1.0, 1.0), Vec3::new(1.0, -1.0, -1.0), Vec3::new(-1.0, 1.0, -1.0), Vec3::new(-1.0, -1.0, 1.0)] {
            vertices.push(center + d * r);
            kinds.push(VertexKind::Super);
        }
        let s = first_super;
        let mut first = [s, s + 1, s + 2, s + 3];
        if orient(&vertices[s], &vertices[s + 1], &vertices[s + 2], &vertices[s + 3]) < 0.0 {
            first.swap(0, 1);
        }
        let mut tri = Self {
            vertices,
            kinds,
            inserted: vec![false; n_data],
            n_data,
            tets: vec![first],
            neighbors: vec![[NONE; 4]],
        };

        // Sky corners first, then data in Morton order for walk locality.
        let mut order: Vec<usize> = (n_data..first_super).collect();
        let mut data: Vec<(u64, usize)> = (0..n_data).map(|i| (morton(&tri.vertices[i], &lo, &hi), i)).collect();
        data.sort_unstable();
        order.extend(data.into_iter().map(|(_, i)| i));

        let mut alive = vec![true];
        let mut hint = 0;
        for v in order {
            if let Some(t) = tri.insert(v, hint, &mut alive) {
                hint = t;
                if v < n_data {
                    tri.inserted[v] = true;
                }
            }
        }
        tri.compact(&alive);
        Ok(tri)
    }

    /// Bowyer–Watson insertion; returns a new tetrahedron incident to `v`.
    fn insert(&mut self, v: usize, hint: usize, alive: &mut Vec<bool>) -> Option<usize> {
        let p = self.vertices[v];
        let start = self.walk(&p, hint, Some(alive))?;
        let t = self.tets[start];
        if in_sphere(&self.vertices[t[0]], &self.vertices[t[1]], &self.vertices[t[2]], &self.vertices[t[3]], &p) <= 0.0 {
            // Coincides with an existing vertex.
            return None;
        }
        let mut cavity = vec![start];
        let mut in_cavity = BTreeSet::new();
        in_cavity.insert(start);
        let mut i = 0;
        while i < cavity.len() {
            let c = cavity[i];
            i += 1;
            for &n in &self.neighbors[c] {
                if n == NONE || in_cavity.contains(&n) {
                    continue;
                }
                let q = self.tets[n];
                if in_sphere(&self.vertices[q[0]], &self.vertices[q[1]], &self.vertices[q[2]], &self.vertices[q[3]], &p) > 0.0 {
                    in_cavity.insert(n);
                    cavity.push(n);
                }
            }
        }

        // One new tetrahedron per cavity boundary face.
        let mut created: Vec<usize> = Vec::new();
        let mut open_edges: Vec<((usize, usize), usize, usize)> = Vec::new();
        for &c in &cavity {
            for (slot, face) in FACES.iter().enumerate() {
                let outside = self.neighbors[c][slot];
                if outside != NONE && in_cavity.contains(&outside) {
                    continue;
                }
                let [a, b, cc] = face.map(|k| self.tets[c][k]);
                let tet = [a, cc, b, v];
                let id = self.tets.len();
                self.tets.push(tet);
                self.neighbors.push([NONE, NONE, NONE, outside]);
                alive.push(true);
                if outside != NONE {
                    let back = self.neighbors[outside].iter().position(|&x| x == c).expect("adjacency is symmetric");
                    self.neighbors[outside][back] = id;
                }
                for k in 0..3 {
                    let (x, y) = match k {
                        0 => (cc, b),
                        1 => (a, b),
                        _ => (a, cc),
                    };
                    let key = (x.min(y), x.max(y));
                    if let Some(pos) = open_edges.iter().position(|e| e.0 == key) {
                        let (_, other, other_slot) = open_edges.swap_remove(pos);
                        self.neighbors[id][k] = other;
                        self.neighbors[other][other_slot] = id;
                    } else {
                        open_edges.push((key, id, k));
                    }
                }
                created.push(id);
            }
        }
        debug_assert!(open_edges.is_empty());
        for &c in &cavity {
            alive[c] = false;
        }
        created.first().copied()
    }

    /// Visibility walk from `start` to the tetrahedron containing `p`.
    fn walk(&self, p: &Point3, start: usize, alive: Option<&[bool]>) -> Option<usize> {
        let mut t = match alive {
            Some(alive) if !alive[start] => alive.iter().rposition(|&a| a)?,
            _ => start,
        };
        let mut turn = 0usize;
        for _ in 0..self.tets.len() + 16 {
            turn = turn.wrapping_add(1);
            let tet = self.tets[t];
            let mut moved = false;
            for j in 0..4 {
                let slot = (j + turn) % 4;
                let [a, b, c] = FACES[slot].map(|k| self.vertices[tet[k]]);
                if orient(&a, &b, &c, p) > 0.0 {
                    let n = self.neighbors[t][slot];
                    if n == NONE {
                        return None;
                    }
                    t = n;
                    moved = true;
                    break;
                }
            }
            if !moved {
                return Some(t);
            }
        }
        None
    }

    fn compact(&mut self, alive: &[bool]) {
        let mut remap = vec![NONE; self.tets.len()];
        let mut n = 0;
        for (t, &a) in alive.iter().enumerate() {
            if a {
                remap[t] = n;
                n += 1;
            }
        }
        let mut tets = Vec::with_capacity(n);
        let mut neighbors = Vec::with_capacity(n);
        for (t, &a) in alive.iter().enumerate() {
            if a {
                tets.push(self.tets[t]);
                neighbors.push(self.neighbors[t].map(|x| if x == NONE { NONE } else { remap[x] }));
            }
        }
        self.tets = tets;
        self.neighbors = neighbors;
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn kind(&self, v: usize) -> VertexKind {
        self.kinds[v]
    }

    pub fn data_len(&self) -> usize {
        self.n_data
    }

    pub fn is_inserted(&self, v: usize) -> bool {
        v < self.n_data && self.inserted[v]
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn neighbors(&self) -> &[[usize; 4]] {
        &self.neighbors
    }

    pub fn len(&self) -> usize {
        self.tets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tets.is_empty()
    }

    pub fn tet_points(&self, t: usize) -> [Point3; 4] {
        self.tets[t].map(|v| self.vertices[v])
    }

    /// Tetrahedron containing `p` (inside or on its boundary).
    pub fn locate(&self, p: &Point3) -> Option<usize> {
        if self.tets.is_empty() {
            return None;
        }
        self.walk(p, 0, None)
    }

    /// Brute-force empty-circumsphere check over all vertex/tetrahedron pairs.
    pub fn is_delaunay(&self) -> bool {
        self.tets.iter().all(|t| {
            let [a, b, c, d] = t.map(|v| self.vertices[v]);
            (0..self.vertices.len())
                .filter(|v| !t.contains(v) && (*v >= self.n_data || self.inserted[*v]))
                .all(|v| in_sphere(&a, &b, &c, &d, &self.vertices[v]) <= 0.0)
        })
    }

    /// Every tetrahedron is positively oriented and adjacency is symmetric
    /// with matching shared faces.
    pub fn is_valid(&self) -> bool {
        self.tets.iter().enumerate().all(|(t, tet)| {
            let [a, b, c, d] = tet.map(|v| self.vertices[v]);
            orient(&a, &b, &c, &d) > 0.0
                && (0..4).all(|slot| {
                    let n = self.neighbors[t][slot];
                    if n == NONE {
                        return true;
                    }
                    let mut mine: Vec<usize> = FACES[slot].iter().map(|&k| tet[k]).collect();
                    mine.sort_unstable();
                    self.neighbors[n].iter().enumerate().any(|(s, &m)| {
                        let mut theirs: Vec<usize> = FACES[s].iter().map(|&k| self.tets[n][k]).collect();
                        theirs.sort_unstable();
                        m == t && theirs == mine
                    })
                })
        })
    }

    /// Tetrahedra crossed by the segment from `origin` to data vertex
    /// `target`, in traversal order. `None` when the walk stalls.
    pub fn traverse(&self, origin: &Point3, target: usize) -> Option<Vec<usize>> {
        if !self.is_inserted(target) {
            return None;
        }
        let end = self.vertices[target];
        let dir = end - origin;
        let mut t = self.locate(origin)?;
        let mut entry = NONE;
        let mut path = Vec::new();
        for _ in 0..self.tets.len() + 1 {
            path.push(t);
            let tet = self.tets[t];
            // A segment ending at a vertex can still clip another cell of
            // that vertex's star just before arriving, so containing the
            // target is not enough to stop.
            let holds_target = tet.contains(&target);
            let mut exit = (f64::INFINITY, NONE);
            for slot in 0..4 {
                let n = self.neighbors[t][slot];
                if n == entry && entry != NONE {
                    continue;
                }
                let [a, b, c] = FACES[slot].map(|k| self.vertices[tet[k]]);
                let normal = (b - a).cross(&(c - a));
                // Plane offsets from exact orientations, so a face through
                // the target puts the crossing at exactly 1.
                let (h0, h1) = (orient(&a, &b, &c, origin), orient(&a, &b, &c, &end));
                let denom = h1 - h0;
                if denom <= 1e-12 * normal.norm() * dir.norm() {
                    continue;
                }
                let s = -h0 / denom;
                if s < exit.0 {
                    exit = (s, slot);
                }
            }
            if exit.1 == NONE {
                return holds_target.then_some(path);
            }
            if exit.0 >= 1.0 - SEGMENT_EPS {
                // Target reached inside this cell.
                return Some(path);
            }
            let next = self.neighbors[t][exit.1];
            if next == NONE {
                return holds_target.then_some(path);
            }
            entry = t;
            t = next;
        }
        None
    }

    /// Whether the segment `a → b` overlaps the interior of tetrahedron `t`
    /// over a positive length (half-space clipping). Overlaps shorter than
    /// 1e-7 of the segment are rounding noise at shared vertices.
    pub fn segment_crosses(&self, t: usize, a: &Point3, b: &Point3) -> bool {
        let tet = self.tets[t];
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for face in FACES {
            let [p, q, r] = face.map(|k| self.vertices[tet[k]]);
            // Inside: orient(p, q, r, x) ≤ 0.
            let num = orient(&p, &q, &r, a);
            let den = orient(&p, &q, &r, b) - num;
            if den == 0.0 {
                if num > 0.0 {
                    return false;
                }
            } else if den > 0.0 {
                hi = hi.min(-num / den);
            } else {
                lo = lo.max(-num / den);
            }
        }
        hi - lo > SEGMENT_EPS
    }
}

/// Segment-parameter overlap below which a crossing is rounding noise.
const SEGMENT_EPS: f64 = 1e-7;

fn morton(p: &Point3, lo: &Point3, hi: &Point3) -> u64 {
    let mut code = 0u64;
    let q: [u64; 3] = core::array::from_fn(|k| {
        let ext = (hi[k] - lo[k]).max(1e-12);
        (((p[k] - lo[k]) / ext).clamp(0.0, 1.0) * 1023.0) as u64
    });
    for bit in 0..10 {
        for (k, v) in q.iter().enumerate() {
            code |= ((v >> bit) & 1) << (3 * bit + k);
        }
    }
    code
}

/// Per-tetrahedron ray crossing counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Votes {
    pub counts: Vec<u32>,
    pub rays: usize,
    pub skipped: usize,
}

impl Votes {
    pub fn new(tets: usize) -> Self {
        Self { counts: vec![0; tets], rays: 0, skipped: 0 }
    }
}

/// Casts rays `(sensor center, data vertex)`; each crossed tetrahedron gets
/// one vote per ray. Stalled rays leave no votes and are tallied.
pub fn cast_votes(tri: &Triangulation, rays: &[(Point3, usize)], votes: &mut Votes) {
    for (origin, target) in rays {
        votes.rays += 1;
        match tri.traverse(origin, *target) {
            Some(path) => {
                for t in path {
                    votes.counts[t] += 1;
                }
            }
            None => votes.skipped += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CarveParams {
    /// Minimum votes for a tetrahedron to count as free space.
    pub min_votes: u32,
}

impl Default for CarveParams {
    fn default() -> Self {
        Self { min_votes: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CarveDiagnostics {
    pub points: usize,
    pub tetrahedra: usize,
    pub free: usize,
    pub matter: usize,
    /// Free tetrahedra admitted by the manifold-preserving growth.
    pub grown: usize,
    pub rays: usize,
    pub skipped_rays: usize,
    pub boundary_faces: usize,
    pub sky_faces_dropped: usize,
    pub degenerate_faces_dropped: usize,
    pub vertices_split: usize,
}

/// Whether the boundary of `set` is a manifold around vertex `v`: its
/// boundary faces' link edges form a single cycle (or nothing).
fn link_is_disk(tri: &Triangulation, star: &[usize], v: usize, set: &dyn Fn(usize) -> bool) -> bool {
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for &t in star {
        if !set(t) {
            continue;
        }
        let tet = tri.tets[t];
        for (slot, face) in FACES.iter().enumerate() {
            if tet[slot] == v {
                continue;
            }
            let n = tri.neighbors[t][slot];
            if n != NONE && set(n) {
                continue;
            }
            let others: Vec<usize> = face.iter().map(|&k| tet[k]).filter(|&u| u != v).collect();
            edges.push((others[0], others[1]));
        }
    }
    if edges.is_empty() {
        return true;
    }
    let mut degree: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in &edges {
        degree.entry(a).or_default().push(b);
        degree.entry(b).or_default().push(a);
    }
    if degree.values().any(|n| n.len() != 2) {
        return false;
    }
    // Walk the cycle through the first link vertex.
    let (&start, _) = degree.iter().next().expect("nonempty");
    let (mut prev, mut cur) = (start, degree[&start][0]);
    let mut steps = 1;
    while cur != start {
        let n = &degree[&cur];
        let next = if n[0] == prev { n[1] } else { n[0] };
        prev = cur;
        cur = next;
        steps += 1;
        if steps > edges.len() {
            return false;
        }
    }
    steps == edges.len()
}

/// Manifold-preserving growth of the free set, highest vote first, then
/// extraction of its boundary oriented toward free space.
pub fn extract_surface(tri: &Triangulation, votes: &Votes, params: &CarveParams) -> Result<(TriangleMesh, CarveDiagnostics)> {
    let n = tri.len();
    let free: Vec<bool> = votes.counts.iter().map(|&c| c >= params.min_votes && c > 0).collect();
    let seed = (0..n).filter(|&t| free[t]).max_by(|&a, &b| votes.counts[a].cmp(&votes.counts[b]).then(b.cmp(&a)));
    let Some(seed) = seed else { return Err(Error::NoVisibilityEvidence) };

    let mut star: Vec<Vec<usize>> = vec![Vec::new(); tri.vertices.len()];
    for (t, tet) in tri.tets.iter().enumerate() {
        for &v in tet {
            star[v].push(t);
        }
    }
    let mut inside = vec![false; n];
    inside[seed] = true;
    let mut heap: BinaryHeap<(u32, core::cmp::Reverse<usize>)> = BinaryHeap::new();
    let push_neighbors = |t: usize, heap: &mut BinaryHeap<(u32, core::cmp::Reverse<usize>)>, inside: &[bool]| {
        for &m in &tri.neighbors[t] {
            if m != NONE && free[m] && !inside[m] {
                heap.push((votes.counts[m], core::cmp::Reverse(m)));
            }
        }
    };
    push_neighbors(seed, &mut heap, &inside);
    while let Some((_, core::cmp::Reverse(t))) = heap.pop() {
        if inside[t] {
            continue;
        }
        let ok = {
            let with = |x: usize| x == t || inside[x];
            tri.tets[t].iter().all(|&v| link_is_disk(tri, &star[v], v, &with))
        };
        if ok {
            inside[t] = true;
            push_neighbors(t, &mut heap, &inside);
        }
    }

    let mut diag = CarveDiagnostics {
        points: tri.n_data,
        tetrahedra: n,
        free: free.iter().filter(|&&f| f).count(),
        rays: votes.rays,
        skipped_rays: votes.skipped,
        grown: inside.iter().filter(|&&f| f).count(),
        ..Default::default()
    };
    diag.matter = n - diag.free;

    let mut faces = Vec::new();
    for t in 0..n {
        if !inside[t] {
            continue;
        }
        for (slot, face) in FACES.iter().enumerate() {
            let m = tri.neighbors[t][slot];
            if m != NONE && inside[m] {
                continue;
            }
            diag.boundary_faces += 1;
            let [a, b, c] = face.map(|k| tri.tets[t][k]);
            if [a, b, c].iter().any(|&v| tri.kinds[v] != VertexKind::Data) {
                diag.sky_faces_dropped += 1;
                continue;
            }
            // Reversed so the normal points into the free tetrahedron.
            let f = [a, c, b];
            let [p, q, r] = f.map(|v| tri.vertices[v]);
            if (q - p).cross(&(r - p)).norm() / 2.0 < MIN_FACE_AREA {
                diag.degenerate_faces_dropped += 1;
                continue;
            }
            faces.push(f);
        }
    }
    let vertices = tri.vertices[..tri.n_data].to_vec();
    let mut mesh = TriangleMesh::new(vertices, faces)?;
    diag.vertices_split = mesh.split_nonmanifold_vertices();
    mesh.remove_unreferenced_vertices();
    mesh.flag_manifold();
    Ok((mesh, diag))
}

/// Carved surface and bookkeeping.
#[derive(Debug, Clone)]
pub struct CarveOutput {
    pub mesh: TriangleMesh,
    pub diagnostics: CarveDiagnostics,
}

/// Full batch carving of a cloud whose points carry their sensor centers.
pub fn carve(points: &[ScanPoint], params: &CarveParams) -> Result<CarveOutput> {
    let positions: Vec<Point3> = points.iter().map(|p| p.position).collect();
    let mut sensors: Vec<Point3> = points.iter().map(|p| p.sensor).collect();
    sensors.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z)));
    sensors.dedup();
    let tri = Triangulation::build(&positions, &sensors)?;
    let rays: Vec<(Point3, usize)> = points.iter().enumerate().map(|(i, p)| (p.sensor, i)).collect();
    let mut votes = Votes::new(tri.len());
    cast_votes(&tri, &rays, &mut votes);
    let (mesh, diagnostics) = extract_surface(&tri, &votes, params)?;
    Ok(CarveOutput { mesh, diagnostics })
}

/// Disjoint union of the carved surface and car hulls.
pub fn merge_car_hulls(scene: &TriangleMesh, hulls: &[TriangleMesh]) -> TriangleMesh {
    let mut out = scene.clone();
    for h in hulls {
        out.append(h);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicate_signs() {
        let (o, x, y, z) = (Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0), Point3::new(0.0, 0.0, 1.0));
        assert!(orient(&o, &x, &y, &z) > 0.0);
        assert!(in_sphere(&o, &x, &y, &z, &Point3::new(0.2, 0.2, 0.2)) > 0.0);
        assert!(in_sphere(&o, &x, &y, &z, &Point3::new(2.0, 2.0, 2.0)) < 0.0);
    }

    #[test]
    fn bipyramid_has_two_data_tets() {
        let pts = [
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-0.5, 0.866, 0.0),
            Point3::new(-0.5, -0.866, 0.0),
            Point3::new(0.0, 0.0, 2.0),
            Point3::new(0.0, 0.0, -2.0),
        ];
        let tri = Triangulation::build(&pts, &[]).unwrap();
        assert!(tri.is_valid());
        assert!(tri.is_delaunay());
        let data_tets: Vec<&[usize; 4]> = tri.tets().iter().filter(|t| t.iter().all(|&v| v < 5)).collect();
        assert_eq!(data_tets.len(), 2);
    }

    #[test]
    fn too_few_points() {
        let pts = [Point3::origin(); 4];
        assert_eq!(Triangulation::build(&pts, &[]).unwrap_err(), Error::TooFewPoints { needed: 5, got: 4 });
    }

    #[test]
    fn ray_inside_one_cell() {
        let pts = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(4.0, 0.0, 0.0),
            Point3::new(0.0, 4.0, 0.0),
            Point3::new(0.0, 0.0, 4.0),
            Point3::new(10.0, 10.0, 10.0),
        ];
        let tri = Triangulation::build(&pts, &[]).unwrap();
        let origin = Point3::new(0.5, 0.5, 0.5);
        let path = tri.traverse(&origin, 0).unwrap();
        assert_eq!(path.len(), 1);
        assert!(tri.tets()[path[0]].contains(&0));
    }

    #[test]
    fn no_rays_means_no_evidence() {
        let pts: Vec<Point3> = (0..8).map(|i| Point3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64)).collect();
        let tri = Triangulation::build(&pts, &[]).unwrap();
        let votes = Votes::new(tri.len());
        assert_eq!(extract_surface(&tri, &votes, &CarveParams::default()).unwrap_err(), Error::NoVisibilityEvidence);
    }
}
