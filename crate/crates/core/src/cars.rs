//! Parked-car detection on the static cloud: height-gated occupancy grid,
//! oriented box filter and side-silhouette ramp test.

use crate::geom::BinaryMask;
use crate::ground::GroundHeightMap;
use crate::hull::{convex_hull_2d, convex_hull_3d, polygon_contains};
use crate::mesh::TriangleMesh;
use crate::morphology::{close, connected_components, Element};
use crate::prelude::*;
use core::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CarParams {
    /// Grid cell edge for both the top view and the side view (meters).
    pub cell: f64,
    /// Cells holding any point higher than this above ground are emptied.
    pub max_height: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Minimum mean ramp angle of the first and last silhouette bins.
    pub ramp_angle: f64,
    /// Maximum absolute mean slope angle of the middle bin.
    pub flat_angle: f64,
}

impl Default for CarParams {
    fn default() -> Self {
        Self {
            cell: 0.1,
            max_height: 2.2,
            radius_min: 1.5,
            radius_max: 5.5,
            ratio_min: 1.2 / 5.0,
            ratio_max: 3.5 / 5.0,
            ramp_angle: PI / 6.0,
            flat_angle: PI / 3.0,
        }
    }
}

/// Oriented rectangle in the ground plane; `length ≥ width`, `yaw` is the
/// direction of the long side.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrientedBox {
    pub center: [f64; 2],
    pub length: f64,
    pub width: f64,
    pub yaw: f64,
}

impl OrientedBox {
    /// Radius of the circle circumscribing the box.
    pub fn radius(&self) -> f64 {
        ((self.length / 2.0).powi(2) + (self.width / 2.0).powi(2)).sqrt()
    }

    pub fn ratio(&self) -> f64 {
        self.width / self.length
    }

    pub fn axis(&self) -> [f64; 2] {
        [self.yaw.cos(), self.yaw.sin()]
    }

    /// Coordinates of `p` along the long and short axes, relative to the center.
    pub fn local(&self, p: [f64; 2]) -> [f64; 2] {
        let [c, s] = self.axis();
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn contains(&self, p: [f64; 2], margin: f64) -> bool {
        let [a, b] = self.local(p);
        a.abs() <= self.length / 2.0 + margin && b.abs() <= self.width / 2.0 + margin
    }
}

/// Minimum-area enclosing rectangle by rotating calipers over the hull edges.
pub fn min_area_rectangle(points: &[[f64; 2]]) -> Option<OrientedBox> {
    let hull = convex_hull_2d(points);
    if hull.is_empty() {
        return None;
    }
    if hull.len() < 3 {
        let (a, b) = (hull[0], hull[hull.len() - 1]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        return Some(OrientedBox {
            center: [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0],
            length: (dx * dx + dy * dy).sqrt(),
            width: 0.0,
            yaw: dy.atan2(dx),
        });
    }
    let mut best: Option<(f64, OrientedBox)> = None;
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let n = (dx * dx + dy * dy).sqrt();
        let (ux, uy) = (dx / n, dy / n);
        let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let (pu, pv) = (p[0] * ux + p[1] * uy, -p[0] * uy + p[1] * ux);
            lo_u = lo_u.min(pu);
            hi_u = hi_u.max(pu);
            lo_v = lo_v.min(pv);
            hi_v = hi_v.max(pv);
        }
        let area = (hi_u - lo_u) * (hi_v - lo_v);
        if best.as_ref().map_or(true, |(a, _)| area < *a - 1e-12) {
            let (cu, cv) = ((lo_u + hi_u) / 2.0, (lo_v + hi_v) / 2.0);
            let center = [cu * ux - cv * uy, cu * uy + cv * ux];
            let (eu, ev) = (hi_u - lo_u, hi_v - lo_v);
            let rect = if eu >= ev {
                OrientedBox { center, length: eu, width: ev, yaw: uy.atan2(ux) }
            } else {
                OrientedBox { center, length: ev, width: eu, yaw: ux.atan2(-uy) }
            };
            best = Some((area, rect));
        }
    }
    best.map(|(_, r)| r)
}

/// Whether the box passes the radius and aspect-ratio gates.
pub fn box_filter(rect: &OrientedBox, params: &CarParams) -> bool {
    let (r, q) = (rect.radius(), rect.ratio());
    params.radius_min < r && r < params.radius_max && params.ratio_min < q && q < params.ratio_max
}

/// Top-view occupancy grid and its connected regions.
#[derive(Debug, Clone)]
pub struct CandidateGrid {
    pub origin: [f64; 2],
    pub cell: f64,
    pub occupancy: BinaryMask,
    /// Cells that held a point above the height threshold.
    pub tall: BinaryMask,
    /// 8-connected regions as linear cell indices.
    pub regions: Vec<Vec<usize>>,
    /// Linear cell index of every input point.
    pub point_cells: Vec<usize>,
}

impl CandidateGrid {
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let ix = ((x - self.origin[0]) / self.cell).floor();
        let iy = ((y - self.origin[1]) / self.cell).floor();
        let (w, h) = (self.occupancy.width() as f64, self.occupancy.height() as f64);
        (ix >= 0.0 && iy >= 0.0 && ix < w && iy < h).then(|| iy as usize * self.occupancy.width() + ix as usize)
    }

    /// The four corners of a cell.
    pub fn cell_corners(&self, index: usize) -> [[f64; 2]; 4] {
        let w = self.occupancy.width();
        let (x0, y0) = (self.origin[0] + (index % w) as f64 * self.cell, self.origin[1] + (index / w) as f64 * self.cell);
        let c = self.cell;
        [[x0, y0], [x0 + c, y0], [x0, y0 + c], [x0 + c, y0 + c]]
    }
}

/// Projects points (with heights above local ground) into the top-view
/// grid, empties tall cells, closes small holes and extracts regions.
pub fn rasterize_candidates(points: &[Point3], heights: &[f64], params: &CarParams) -> Result<CandidateGrid> {
    if points.len() != heights.len() {
        return Err(Error::LengthMismatch { left: points.len(), right: heights.len() });
    }
    let pad = 3.0 * params.cell;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        lo = [lo[0].min(p.x), lo[1].min(p.y)];
        hi = [hi[0].max(p.x), hi[1].max(p.y)];
    }
    if points.is_empty() {
        lo = [0.0; 2];
        hi = [0.0; 2];
    }
    let origin = [lo[0] - pad, lo[1] - pad];
    let w = ((hi[0] + pad - origin[0]) / params.cell).ceil() as usize + 1;
    let h = ((hi[1] + pad - origin[1]) / params.cell).ceil() as usize + 1;
    let mut grid = CandidateGrid {
        origin,
        cell: params.cell,
        occupancy: BinaryMask::new(w, h),
        tall: BinaryMask::new(w, h),
        regions: Vec::new(),
        point_cells: Vec::with_capacity(points.len()),
    };
    let mut filled = BinaryMask::new(w, h);
    for (p, &z) in points.iter().zip(heights) {
        let c = grid.cell_of(p.x, p.y).ok_or(Error::NonFinite)?;
        grid.point_cells.push(c);
        filled.set(c % w, c / w, true);
        if z > params.max_height {
            grid.tall.set(c % w, c / w, true);
        }
    }
    let mut gated = BinaryMask::new(w, h);
    for c in 0..w * h {
        gated.set(c % w, c / w, filled.bits()[c] && !grid.tall.bits()[c]);
    }
    grid.occupancy = close(&gated, &Element::square(1));
    // Closing may refill an emptied cell; tall cells stay out.
    for c in 0..w * h {
        if grid.tall.bits()[c] {
            grid.occupancy.set(c % w, c / w, false);
        }
    }
    grid.regions = connected_components(&grid.occupancy);
    Ok(grid)
}

/// Side-view profile statistics of a cluster.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Silhouette {
    /// Filled cells per column of the rasterized hull.
    pub column_heights: Vec<usize>,
    /// Mean slope angle of the three derivative bins (radians).
    pub bin_angles: [f64; 3],
}

/// Side silhouette from `(s, z)` samples: `s` along the box's long axis and
/// `z` height above ground, both in meters.
pub fn side_silhouette(samples: &[[f64; 2]], cell: f64) -> Option<Silhouette> {
    let hull = convex_hull_2d(samples);
    if hull.len() < 3 {
        return None;
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &hull {
        lo = [lo[0].min(p[0]), lo[1].min(p[1])];
        hi = [hi[0].max(p[0]), hi[1].max(p[1])];
    }
    let cols = ((hi[0] - lo[0]) / cell).ceil().max(1.0) as usize;
    let rows = ((hi[1] - lo[1]) / cell).ceil().max(1.0) as usize;
    let column_heights: Vec<usize> = (0..cols)
        .map(|c| {
            let s = lo[0] + (c as f64 + 0.5) * cell;
            (0..rows).filter(|&r| polygon_contains(&hull, [s, lo[1] + (r as f64 + 0.5) * cell])).count()
        })
        .collect();
    if column_heights.len() < 3 {
        return None;
    }
    let deriv: Vec<f64> = column_heights.windows(2).map(|w| w[1] as f64 - w[0] as f64).collect();
    let n = deriv.len();
    let bin_angles = [0, 1, 2].map(|b| {
        let bin = &deriv[b * n / 3..(b + 1) * n / 3];
        if bin.is_empty() {
            return 0.0;
        }
        let mean = bin.iter().sum::<f64>() / bin.len() as f64;
        // Rows and columns share the cell size, so the aspect is 1.
        mean.atan()
    });
    Some(Silhouette { column_heights, bin_angles })
}

/// Rising first bin, nearly flat middle bin, falling last bin.
pub fn silhouette_filter(silhouette: &Silhouette, params: &CarParams) -> bool {
    let [a, b, c] = silhouette.bin_angles;
    a >= params.ramp_angle && b.abs() <= params.flat_angle && c <= -params.ramp_angle
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CarCluster {
    /// Indices into the input cloud.
    pub members: Vec<usize>,
    pub points: Vec<Point3>,
    pub bounds: OrientedBox,
}

impl CarCluster {
    pub fn radius(&self) -> f64 {
        self.bounds.radius()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarDetection {
    pub cars: Vec<CarCluster>,
    /// Indices of the points not assigned to any car, ascending.
    pub kept: Vec<usize>,
}

/// Runs the grid, box and silhouette filters over a static non-ground cloud.
pub fn detect_cars(points: &[Point3], ground: &GroundHeightMap, params: &CarParams) -> Result<CarDetection> {
    let heights: Vec<f64> = points.iter().map(|p| p.z - ground.height_at(p.x, p.y)).collect();
    let grid = rasterize_candidates(points, &heights, params)?;
    let mut region_of = vec![usize::MAX; grid.occupancy.bits().len()];
    for (r, cells) in grid.regions.iter().enumerate() {
        for &c in cells {
            region_of[c] = r;
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); grid.regions.len()];
    for (i, &c) in grid.point_cells.iter().enumerate() {
        if region_of[c] != usize::MAX {
            members[region_of[c]].push(i);
        }
    }
    let mut taken = vec![false; points.len()];
    let mut cars = Vec::new();
    for (cells, idx) in grid.regions.iter().zip(members) {
        if idx.len() < 3 {
            continue;
        }
        let corners: Vec<[f64; 2]> = cells.iter().flat_map(|&c| grid.cell_corners(c)).collect();
        let Some(rect) = min_area_rectangle(&corners) else { continue };
        if !box_filter(&rect, params) {
            continue;
        }
        let samples: Vec<[f64; 2]> = idx.iter().map(|&i| [rect.local([points[i].x, points[i].y])[0], heights[i]]).collect();
        let Some(sil) = side_silhouette(&samples, params.cell) else { continue };
        if !silhouette_filter(&sil, params) {
            continue;
        }
        for &i in &idx {
            taken[i] = true;
        }
        cars.push(CarCluster { points: idx.iter().map(|&i| points[i]).collect(), members: idx, bounds: rect });
    }
    let kept = (0..points.len()).filter(|&i| !taken[i]).collect();
    Ok(CarDetection { cars, kept })
}

/// Convex hull replacement meshes; degenerate clusters are skipped and
/// their indices returned alongside.
pub fn car_hulls(cars: &[CarCluster]) -> (Vec<TriangleMesh>, Vec<usize>) {
    let mut hulls = Vec::new();
    let mut skipped = Vec::new();
    for (k, car) in cars.iter().enumerate() {
        match convex_hull_3d(&car.points) {
            Ok(h) => hulls.push(h),
            Err(_) => skipped.push(k),
        }
    }
    (hulls, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_points(l: f64, w: f64, yaw: f64) -> Vec<[f64; 2]> {
        let (c, s) = (yaw.cos(), yaw.sin());
        let mut pts = Vec::new();
        for i in 0..=20 {
            for j in 0..=8 {
                let (a, b) = (-l / 2.0 + l * i as f64 / 20.0, -w / 2.0 + w * j as f64 / 8.0);
                pts.push([3.0 + c * a - s * b, -1.0 + s * a + c * b]);
            }
        }
        pts
    }

    #[test]
    fn box_filter_thresholds() {
        let p = CarParams::default();
        let car = OrientedBox { center: [0.0; 2], length: 4.5, width: 1.8, yaw: 0.0 };
        assert!((car.radius() - 2.4233).abs() < 1e-4);
        assert!(box_filter(&car, &p));
        assert!(!box_filter(&OrientedBox { length: 12.0, width: 1.0, ..car }, &p));
        assert!(!box_filter(&OrientedBox { length: 1.0, width: 1.0, ..car }, &p));
        let long = OrientedBox { length: 5.4, width: 1.8, ..car };
        assert_eq!(box_filter(&long, &p), long.radius() < 5.5);
    }

    #[test]
    fn rotated_rectangle_is_recovered() {
        for yaw in [0.0, 0.3, 1.2, -0.7] {
            let r = min_area_rectangle(&rect_points(4.5, 1.8, yaw)).unwrap();
            assert!((r.length - 4.5).abs() < 1e-9 && (r.width - 1.8).abs() < 1e-9);
            assert!((r.center[0] - 3.0).abs() < 1e-9 && (r.center[1] + 1.0).abs() < 1e-9);
            let d = (r.yaw - yaw).rem_euclid(PI);
            assert!(d < 1e-9 || PI - d < 1e-9);
        }
    }

    fn profile(points: &[(f64, f64)]) -> Vec<[f64; 2]> {
        points.iter().map(|&(s, z)| [s, z]).collect()
    }

    #[test]
    fn trapezoid_passes_rectangle_and_wedge_fail() {
        let p = CarParams::default();
        let trapezoid = profile(&[(-2.25, 0.3), (2.25, 0.3), (0.75, 1.5), (-0.75, 1.5)]);
        let s = side_silhouette(&trapezoid, 0.1).unwrap();
        assert!(silhouette_filter(&s, &p), "{:?}", s.bin_angles);
        let rect = profile(&[(-2.25, 0.3), (2.25, 0.3), (2.25, 1.5), (-2.25, 1.5)]);
        assert!(!silhouette_filter(&side_silhouette(&rect, 0.1).unwrap(), &p));
        let wedge = profile(&[(-2.25, 0.3), (2.25, 0.3), (2.25, 1.5)]);
        assert!(!silhouette_filter(&side_silhouette(&wedge, 0.1).unwrap(), &p));
    }

    #[test]
    fn narrow_silhouette_is_degenerate() {
        assert!(side_silhouette(&profile(&[(0.0, 0.0), (0.15, 0.0), (0.1, 1.0)]), 0.1).is_none());
    }

    #[test]
    fn tall_cells_are_emptied() {
        let pts: Vec<Point3> = (0..30).map(|i| Point3::new(i as f64 * 0.1, 0.05, 0.0)).collect();
        let mut heights = vec![1.0; 30];
        heights[10] = 3.0;
        let g = rasterize_candidates(&pts, &heights, &CarParams::default()).unwrap();
        assert_eq!(g.regions.len(), 2);
        let c = g.cell_of(1.05, 0.05).unwrap();
        assert!(!g.occupancy.bits()[c]);
    }
}
