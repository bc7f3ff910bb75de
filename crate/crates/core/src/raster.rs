//! Z-buffer rasterization of triangle meshes into pinhole views.
//!
//! Coverage is decided in screen space on the near-clipped triangle; the
//! stored depth comes from intersecting the pixel ray with the original
//! face plane, so it is exact for any pixel a face covers.

use nalgebra::Point2;

use crate::bvh::ray_triangle;
use crate::geom::{CameraView, Intrinsics, RigidTransform, SurfacePoint};
use crate::mesh::TriangleMesh;
use crate::prelude::*;

pub const NO_FACE: u32 = u32::MAX;
const NEAR: f64 = 1e-4;

/// Depth (camera Z) and face index per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub face: Vec<u32>,
}

impl DepthMap {
    #[inline]
    pub fn face_at(&self, x: usize, y: usize) -> Option<usize> {
        let f = self.face[y * self.width + x];
        (f != NO_FACE).then_some(f as usize)
    }

    #[inline]
    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn covered(&self) -> usize {
        self.face.iter().filter(|f| **f != NO_FACE).count()
    }
}

/// Renders face indices and depths of `mesh` as seen by a camera with the
/// given intrinsics and world-to-camera pose.
pub fn rasterize(
    mesh: &TriangleMesh,
    k: &Intrinsics,
    pose: &RigidTransform,
    width: usize,
    height: usize,
) -> DepthMap {
    let triangles: Vec<[Point3; 3]> = (0..mesh.faces().len()).map(|f| mesh.face_points(f)).collect();
    rasterize_triangles(&triangles, k, pose, width, height)
}

pub fn rasterize_view(mesh: &TriangleMesh, view: &CameraView) -> DepthMap {
    rasterize(mesh, &view.intrinsics, &view.pose, view.width(), view.height())
}

pub fn rasterize_triangles(
    triangles: &[[Point3; 3]],
    k: &Intrinsics,
    pose: &RigidTransform,
    width: usize,
    height: usize,
) -> DepthMap {
    let mut map = DepthMap {
        width,
        height,
        depth: vec![f64::INFINITY; width * height],
        face: vec![NO_FACE; width * height],
    };
    if width == 0 || height == 0 {
        return map;
    }
    for (f, tri) in triangles.iter().enumerate() {
        let cam = [pose.apply(&tri[0]), pose.apply(&tri[1]), pose.apply(&tri[2])];
        let normal = (cam[1] - cam[0]).cross(&(cam[2] - cam[0]));
        let offset = normal.dot(&cam[0].coords);
        let polygon = clip_near(&cam);
        if polygon.len() < 3 {
            continue;
        }
        let screen: Vec<Point2<f64>> = polygon
            .iter()
            .map(|c| Point2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy))
            .collect();
        for i in 1..screen.len() - 1 {
            let s = [screen[0], screen[i], screen[i + 1]];
            fill_triangle(&mut map, &s, f as u32, k, &normal, offset);
        }
    }
    map
}

fn clip_near(cam: &[Point3; 3]) -> Vec<Point3> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = cam[i];
        let b = cam[(i + 1) % 3];
        let a_in = a.z >= NEAR;
        let b_in = b.z >= NEAR;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let s = (NEAR - a.z) / (b.z - a.z);
            out.push(a + (b - a) * s);
        }
    }
    out
}

fn fill_triangle(
    map: &mut DepthMap,
    s: &[Point2<f64>; 3],
    face: u32,
    k: &Intrinsics,
    normal: &Vec3,
    offset: f64,
) {
    let area = (s[1].x - s[0].x) * (s[2].y - s[0].y) - (s[1].y - s[0].y) * (s[2].x - s[0].x);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    let xmin = s.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let xmax = s.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor().min((map.width - 1) as f64);
    let ymin = s.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let ymax = s.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor().min((map.height - 1) as f64);
    if xmin > xmax || ymin > ymax {
        return;
    }
    let sign = area.signum();
    let eps = -1e-9 * area.abs();
    let edge = |a: &Point2<f64>, b: &Point2<f64>, x: f64, y: f64| {
        sign * ((b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x))
    };
    for y in ymin as usize..=ymax as usize {
        let py = y as f64;
        for x in xmin as usize..=xmax as usize {
            let px = x as f64;
            if edge(&s[0], &s[1], px, py) < eps
                || edge(&s[1], &s[2], px, py) < eps
                || edge(&s[2], &s[0], px, py) < eps
            {
                continue;
            }
            let d = Vec3::new((px - k.cx) / k.fx, (py - k.cy) / k.fy, 1.0);
            let denom = normal.dot(&d);
            if denom == 0.0 {
                continue;
            }
            let z = offset / denom;
            if !(z >= NEAR) || !z.is_finite() {
                continue;
            }
            let i = y * map.width + x;
            if z < map.depth[i] {
                map.depth[i] = z;
                map.face[i] = face;
            }
        }
    }
}

/// Exact surface point seen through pixel `(u, v)` on `face`, using the
/// camera ray/face-plane intersection. Barycentrics may fall marginally
/// outside `[0, 1]` for pixels on face borders.
pub fn pixel_surface_point(
    mesh: &TriangleMesh,
    view: &CameraView,
    face: usize,
    u: f64,
    v: f64,
) -> Option<SurfacePoint> {
    let center = view.center();
    let dir = view.pixel_ray(u, v);
    let tri = mesh.face_points(face);
    let (t, bary) = ray_plane_barycentric(&center, &dir, &tri)?;
    let position = center + dir * t;
    let normal = mesh.face_normal(face).ok()?;
    Some(SurfacePoint { face, barycentric: bary, position, normal })
}

/// Intersection with the (unbounded) plane of `tri`, with barycentric
/// coordinates of the hit (not clamped to the triangle).
pub fn ray_plane_barycentric(origin: &Point3, dir: &Vec3, tri: &[Point3; 3]) -> Option<(f64, [f64; 3])> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let n = e1.cross(&e2);
    let denom = n.dot(dir);
    if denom == 0.0 {
        return None;
    }
    let t = n.dot(&(tri[0] - origin)) / denom;
    if !(t > 0.0) {
        return None;
    }
    let p = origin + dir * t;
    let nn = n.norm_squared();
    let w1 = (p - tri[0]).cross(&e2).dot(&n) / nn;
    let w2 = e1.cross(&(p - tri[0])).dot(&n) / nn;
    Some((t, [1.0 - w1 - w2, w1, w2]))
}

/// Whether `p` (on `face`) is visible through the depth map: the face at
/// its pixel is `face` itself, or whatever is there is not closer than
/// `tolerance` meters along the viewing ray.
pub fn is_visible(
    map: &DepthMap,
    mesh: &TriangleMesh,
    view: &CameraView,
    p: &Point3,
    face: usize,
    tolerance: f64,
) -> bool {
    let Some(px) = view.project(p) else { return false };
    let (x, y) = (px.x.round(), px.y.round());
    if x < 0.0 || y < 0.0 || x >= map.width as f64 || y >= map.height as f64 {
        return false;
    }
    let Some(seen) = map.face_at(x as usize, y as usize) else { return true };
    if seen == face {
        return true;
    }
    let center = view.center();
    let to_p = p - center;
    let dist = to_p.norm();
    let dir = to_p / dist;
    match ray_triangle(&center, &dir, &mesh.face_points(seen)) {
        Some((t, _)) => t >= dist - tolerance,
        None => match ray_plane_barycentric(&center, &dir, &mesh.face_points(seen)) {
            Some((t, _)) => t >= dist - tolerance,
            None => true,
        },
    }
}
