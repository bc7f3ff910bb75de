//! Convex hulls in the plane and in space.

use crate::mesh::TriangleMesh;
use crate::prelude::*;
use robust::Coord3D;

fn coord(p: &Point3) -> Coord3D<f64> {
    Coord3D { x: p.x, y: p.y, z: p.z }
}

/// Positive when `d` lies below the plane of `a, b, c` (counterclockwise
/// seen from above), i.e. on the side opposite the right-hand normal.
pub(crate) fn orient3d(a: &Point3, b: &Point3, c: &Point3, d: &Point3) -> f64 {
    robust::orient3d(coord(a), coord(b), coord(c), coord(d))
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counterclockwise hull by Andrew's monotone chain; collinear points on
/// edges are dropped.
pub fn convex_hull_2d(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        // The upper chain may not pop into the finished lower chain.
        let min_len = if pass == 0 { 2 } else { hull.len() + 1 };
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev().skip(1)) };
        for &p in iter {
            while hull.len() >= min_len && cross2(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
    }
    hull.pop();
    hull
}

/// Whether `p` lies inside or on a counterclockwise convex polygon.
pub fn polygon_contains(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    match hull.len() {
        0 => false,
        1 => hull[0] == p,
        _ => (0..hull.len()).all(|i| cross2(hull[i], hull[(i + 1) % hull.len()], p) >= -1e-12),
    }
}

/// Watertight convex hull of a point set with outward-facing triangles.
/// Fails with `DegenerateHull` when the points are (nearly) coplanar.
pub fn convex_hull_3d(points: &[Point3]) -> Result<TriangleMesh> {
    if points.len() < 4 {
        return Err(Error::DegenerateHull);
    }
    if points.iter().any(|p| !crate::geom::is_finite(p)) {
        return Err(Error::NonFinite);
    }
    let (lo, hi) = points.iter().fold((points[0], points[0]), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    let scale = (hi - lo).norm();
    let eps = 1e-10 * scale.max(1e-300);

    let i0 = (0..points.len()).min_by(|&a, &b| points[a].x.total_cmp(&points[b].x)).unwrap();
    let farthest = |f: &dyn Fn(&Point3) -> f64| {
        (0..points.len()).max_by(|&a, &b| f(&points[a]).total_cmp(&f(&points[b])).then(b.cmp(&a))).unwrap()
    };
    let p0 = points[i0];
    let i1 = farthest(&|p| (p - p0).norm());
    let p1 = points[i1];
    let axis = (p1 - p0).normalize();
    let i2 = farthest(&|p| (p - p0).cross(&axis).norm());
    let p2 = points[i2];
    let normal = (p1 - p0).cross(&(p2 - p0));
    if normal.norm() <= eps * scale {
        return Err(Error::DegenerateHull);
    }
    let unit = normal.normalize();
    let i3 = farthest(&|p| (p - p0).dot(&unit).abs());
    if (points[i3] - p0).dot(&unit).abs() <= eps {
        return Err(Error::DegenerateHull);
    }

    // Faces are counterclockwise seen from outside; a point is visible from
    // a face when it lies strictly above its plane.
    let mut faces: Vec<[usize; 3]> = if orient3d(&p0, &p1, &p2, &points[i3]) > 0.0 {
        vec![[i0, i1, i2], [i0, i3, i1], [i1, i3, i2], [i2, i3, i0]]
    } else {
        vec![[i0, i2, i1], [i0, i1, i3], [i1, i2, i3], [i2, i0, i3]]
    };
    let visible = |f: &[usize; 3], p: &Point3| orient3d(&points[f[0]], &points[f[1]], &points[f[2]], p) < 0.0;

    for (k, p) in points.iter().enumerate() {
        if [i0, i1, i2, i3].contains(&k) {
            continue;
        }
        let seen: Vec<bool> = faces.iter().map(|f| visible(f, p)).collect();
        if !seen.iter().any(|&s| s) {
            continue;
        }
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for (f, _) in faces.iter().zip(&seen).filter(|(_, &s)| s) {
            for e in 0..3 {
                edges.insert((f[e], f[(e + 1) % 3]));
            }
        }
        let horizon: Vec<(usize, usize)> = edges.iter().copied().filter(|&(a, b)| !edges.contains(&(b, a))).collect();
        let mut kept: Vec<[usize; 3]> = faces.iter().zip(&seen).filter(|(_, &s)| !s).map(|(f, _)| *f).collect();
        kept.extend(horizon.into_iter().map(|(a, b)| [a, b, k]));
        faces = kept;
    }

    let mut remap = vec![usize::MAX; points.len()];
    let mut vertices = Vec::new();
    for f in &mut faces {
        for v in f.iter_mut() {
            if remap[*v] == usize::MAX {
                remap[*v] = vertices.len();
                vertices.push(points[*v]);
            }
            *v = remap[*v];
        }
    }
    let mut mesh = TriangleMesh::new(vertices, faces).map_err(|_| Error::DegenerateHull)?;
    mesh.flag_manifold();
    Ok(mesh)
}
