//! Ground classification by seeded region growing on a 2-D height grid.

use alloc::collections::VecDeque;

use crate::geom::ScanPoint;
use crate::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundParams {
    /// Grid cell edge (meters).
    pub cell: f64,
    /// Largest height step between neighboring ground cells (meters).
    pub max_step: f64,
    /// A point is ground when within this height of its cell's ground level.
    pub band: f64,
    /// When the cell under the sensor holds no return, the lowest occupied
    /// cell within this horizontal distance seeds the growth instead; 0
    /// requires returns under the sensor.
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed_radius: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self { cell: 0.5, max_step: 0.15, band: 0.20, seed_radius: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundCell {
    /// Height of the lowest point in the cell.
    pub height: f64,
    pub classified: bool,
}

/// Grid over the XY footprint of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundGrid {
    pub cell: f64,
    /// Integer index of column 0 / row 0.
    pub origin: (i64, i64),
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<Option<GroundCell>>,
    pub seed: (usize, usize),
}

impl GroundGrid {
    fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let ix = (x / self.cell).floor() as i64 - self.origin.0;
        let iy = (y / self.cell).floor() as i64 - self.origin.1;
        (ix >= 0 && iy >= 0 && (ix as usize) < self.nx && (iy as usize) < self.ny)
            .then_some((ix as usize, iy as usize))
    }

    pub fn get(&self, ix: usize, iy: usize) -> Option<&GroundCell> {
        self.cells[iy * self.nx + ix].as_ref()
    }

    pub fn classified_count(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.classified).count()
    }

    /// Whether the classified cells form one 8-connected component
    /// containing the seed.
    pub fn classified_connected(&self) -> bool {
        let total = self.classified_count();
        if total == 0 {
            return true;
        }
        let seed = self.seed.1 * self.nx + self.seed.0;
        if !self.cells[seed].is_some_and(|c| c.classified) {
            return false;
        }
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::from([self.seed]);
        seen[seed] = true;
        let mut reached = 0;
        while let Some((x, y)) = queue.pop_front() {
            reached += 1;
            for (nx, ny) in neighbors(x, y, self.nx, self.ny) {
                let i = ny * self.nx + nx;
                if !seen[i] && self.cells[i].is_some_and(|c| c.classified) {
                    seen[i] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
        reached == total
    }
}

fn neighbors(x: usize, y: usize, nx: usize, ny: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1).flat_map(move |dy| (-1i64..=1).map(move |dx| (dx, dy))).filter_map(move |(dx, dy)| {
        if dx == 0 && dy == 0 {
            return None;
        }
        let (a, b) = (x as i64 + dx, y as i64 + dy);
        (a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny).then_some((a as usize, b as usize))
    })
}

/// Partition of a cloud into ground and non-ground point indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundSegmentation {
    pub ground: Vec<usize>,
    pub non_ground: Vec<usize>,
    pub grid: GroundGrid,
}

/// Grows the ground region breadth-first from the cell under the sensor.
/// A cell joins when its lowest point is within `max_step` of an adjacent
/// ground cell; a point is ground when its cell is ground and it lies within
/// `band` of the cell's lowest point.
pub fn segment_ground(points: &[Point3], sensor: &Point3, params: &GroundParams) -> Result<GroundSegmentation> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let cell = params.cell;
    let key = |x: f64, y: f64| ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let (mut lo, mut hi) = (key(sensor.x, sensor.y), key(sensor.x, sensor.y));
    for p in points {
        let k = key(p.x, p.y);
        lo = (lo.0.min(k.0), lo.1.min(k.1));
        hi = (hi.0.max(k.0), hi.1.max(k.1));
    }
    let nx = (hi.0 - lo.0 + 1) as usize;
    let ny = (hi.1 - lo.1 + 1) as usize;
    let mut grid = GroundGrid { cell, origin: lo, nx, ny, cells: vec![None; nx * ny], seed: (0, 0) };
    let mut point_cell = Vec::with_capacity(points.len());
    for p in points {
        let (x, y) = grid.cell_of(p.x, p.y).expect("grid covers all points");
        let slot = &mut grid.cells[y * nx + x];
        match slot {
            Some(c) => c.height = c.height.min(p.z),
            None => *slot = Some(GroundCell { height: p.z, classified: false }),
        }
        point_cell.push(y * nx + x);
    }
    let under = grid.cell_of(sensor.x, sensor.y).expect("grid covers the sensor");
    let seed = if grid.cells[under.1 * nx + under.0].is_some() {
        under
    } else {
        lowest_cell_within(&grid, sensor, params.seed_radius).ok_or(Error::NoGroundUnderSensor)?
    };
    grid.seed = seed;
    let seed_cell = grid.cells[seed.1 * nx + seed.0].as_mut().expect("seed cell is occupied");
    seed_cell.classified = true;
    let mut queue = VecDeque::from([seed]);
    while let Some((x, y)) = queue.pop_front() {
        let h = grid.cells[y * nx + x].expect("classified cells are occupied").height;
        for (a, b) in neighbors(x, y, nx, ny) {
            if let Some(c) = grid.cells[b * nx + a].as_mut() {
                if !c.classified && (c.height - h).abs() <= params.max_step {
                    c.classified = true;
                    queue.push_back((a, b));
                }
            }
        }
    }
    let (mut ground, mut non_ground) = (Vec::new(), Vec::new());
    for (i, p) in points.iter().enumerate() {
        let c = grid.cells[point_cell[i]].expect("occupied");
        if c.classified && p.z - c.height <= params.band {
            ground.push(i);
        } else {
            non_ground.push(i);
        }
    }
    Ok(GroundSegmentation { ground, non_ground, grid })
}

/// Occupied cell with the lowest ground level whose center lies within
/// `radius` of the sensor's ground projection; ties go to the lower index.
fn lowest_cell_within(grid: &GroundGrid, sensor: &Point3, radius: f64) -> Option<(usize, usize)> {
    if !(radius > 0.0) {
        return None;
    }
    let mut best: Option<((usize, usize), f64)> = None;
    for y in 0..grid.ny {
        for x in 0..grid.nx {
            let Some(c) = grid.cells[y * grid.nx + x] else { continue };
            let cx = (grid.origin.0 + x as i64) as f64 * grid.cell + grid.cell / 2.0;
            let cy = (grid.origin.1 + y as i64) as f64 * grid.cell + grid.cell / 2.0;
            if (cx - sensor.x).hypot(cy - sensor.y) > radius {
                continue;
            }
            if best.is_none_or(|(_, h)| c.height < h) {
                best = Some(((x, y), c.height));
            }
        }
    }
    best.map(|(cell, _)| cell)
}

/// Union of the pipeline cloud and the ground points set aside for motion
/// detection; rays are carried unchanged.
pub fn restore_ground(non_ground: &[ScanPoint], ground: &[ScanPoint]) -> Vec<ScanPoint> {
    let mut all = Vec::with_capacity(non_ground.len() + ground.len());
    all.extend_from_slice(non_ground);
    all.extend_from_slice(ground);
    all
}

/// Lowest ground height per cell with nearest-cell fill, used to measure
/// heights above the local ground.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundHeightMap {
    cell: f64,
    origin: (i64, i64),
    nx: usize,
    ny: usize,
    heights: Vec<Option<f64>>,
    fallback: f64,
}

impl GroundHeightMap {
    pub fn new(ground_points: &[Point3], cell: f64) -> Self {
        if ground_points.is_empty() {
            return Self { cell, origin: (0, 0), nx: 0, ny: 0, heights: Vec::new(), fallback: 0.0 };
        }
        let key = |p: &Point3| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
        let k0 = key(&ground_points[0]);
        let (mut lo, mut hi) = (k0, k0);
        for p in ground_points {
            let k = key(p);
            lo = (lo.0.min(k.0), lo.1.min(k.1));
            hi = (hi.0.max(k.0), hi.1.max(k.1));
        }
        let nx = (hi.0 - lo.0 + 1) as usize;
        let ny = (hi.1 - lo.1 + 1) as usize;
        let mut heights: Vec<Option<f64>> = vec![None; nx * ny];
        for p in ground_points {
            let k = key(p);
            let i = (k.1 - lo.1) as usize * nx + (k.0 - lo.0) as usize;
            heights[i] = Some(heights[i].map_or(p.z, |h| h.min(p.z)));
        }
        let mut sorted: Vec<f64> = ground_points.iter().map(|p| p.z).collect();
        sorted.sort_by(f64::total_cmp);
        let fallback = sorted[sorted.len() / 2];
        Self { cell, origin: lo, nx, ny, heights, fallback }
    }

    /// Ground height under `(x, y)`: the cell's own value, else the mean of
    /// the nearest ring of known cells (up to 8 rings), else the median
    /// ground height.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let ix = (x / self.cell).floor() as i64 - self.origin.0;
        let iy = (y / self.cell).floor() as i64 - self.origin.1;
        for r in 0i64..=8 {
            let mut sum = 0.0;
            let mut n = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs() != r && dy.abs() != r {
                        continue;
                    }
                    let (a, b) = (ix + dx, iy + dy);
                    if a < 0 || b < 0 || a as usize >= self.nx || b as usize >= self.ny {
                        continue;
                    }
                    if let Some(h) = self.heights[b as usize * self.nx + a as usize] {
                        sum += h;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                return sum / n as f64;
            }
        }
        self.fallback
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(lo: f64, hi: f64, z: f64, step: f64) -> Vec<Point3> {
        let n = ((hi - lo) / step) as usize;
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Point3::new(lo + i as f64 * step + 0.01, lo + j as f64 * step + 0.01, z));
            }
        }
        pts
    }

    #[test]
    fn flat_plane_is_all_ground() {
        let pts = plane(-10.0, 10.0, 0.0, 0.2);
        let s = segment_ground(&pts, &Point3::new(0.0, 0.0, 1.7), &GroundParams::default()).unwrap();
        assert_eq!(s.ground.len(), pts.len());
        assert!(s.non_ground.is_empty());
        assert!(s.grid.classified_connected());
    }

    #[test]
    fn box_walls_are_not_ground() {
        let mut pts = plane(-10.0, 10.0, 0.0, 0.2);
        let n_plane = pts.len();
        // 2 m tall box walls on x = 3 and y = 3 faces of a 2x2 box.
        for i in 0..20 {
            for k in 1..20 {
                let (s, z) = (3.0 + i as f64 * 0.1, k as f64 * 0.1);
                pts.push(Point3::new(s, 3.0, z));
                pts.push(Point3::new(3.0, s, z));
            }
        }
        let s = segment_ground(&pts, &Point3::new(0.0, 0.0, 1.7), &GroundParams::default()).unwrap();
        let ground_on_plane = s.ground.iter().filter(|&&i| i < n_plane).count();
        let wall_ground = s.ground.iter().filter(|&&i| i >= n_plane && pts[i].z > 0.2).count();
        assert!(ground_on_plane as f64 >= 0.99 * n_plane as f64);
        assert_eq!(wall_ground, 0);
        let walls_above_band = (n_plane..pts.len()).filter(|&i| pts[i].z > 0.2 + 1e-9).count();
        let walls_non_ground = s.non_ground.iter().filter(|&&i| i >= n_plane && pts[i].z > 0.2 + 1e-9).count();
        assert_eq!(walls_non_ground, walls_above_band);
    }

    #[test]
    fn cliff_stops_growth() {
        let mut pts: Vec<Point3> = plane(-10.0, 10.0, 0.0, 0.2).into_iter().filter(|p| p.x < 0.0).collect();
        let lower = pts.len();
        pts.extend(plane(-10.0, 10.0, 10.0, 0.2).into_iter().filter(|p| p.x >= 0.0));
        let s = segment_ground(&pts, &Point3::new(-5.0, 0.0, 1.7), &GroundParams::default()).unwrap();
        assert_eq!(s.ground.len(), lower);
        assert!(s.ground.iter().all(|&i| i < lower));
    }

    #[test]
    fn empty_seed_cell_errors() {
        let pts = plane(5.0, 10.0, 0.0, 0.2);
        let r = segment_ground(&pts, &Point3::new(0.0, 0.0, 1.7), &GroundParams::default());
        assert_eq!(r.unwrap_err(), Error::NoGroundUnderSensor);
    }

    #[test]
    fn seed_radius_picks_lowest_nearby_cell() {
        // Blind ring around the sensor, with a 1 m tall block closer than the floor.
        let mut pts: Vec<Point3> = plane(-10.0, 10.0, 0.0, 0.2).into_iter().filter(|p| p.x.hypot(p.y) > 3.0).collect();
        let floor = pts.len();
        for i in 0..10 {
            for k in 0..10 {
                pts.push(Point3::new(1.0 + 0.1 * i as f64, 0.1 * k as f64, 1.0));
            }
        }
        let params = GroundParams { seed_radius: 5.0, ..GroundParams::default() };
        let s = segment_ground(&pts, &Point3::new(0.0, 0.0, 1.7), &params).unwrap();
        assert_eq!(s.ground, (0..floor).collect::<Vec<_>>());
        let far = GroundParams { seed_radius: 1.0, ..GroundParams::default() };
        assert_eq!(segment_ground(&pts[..floor], &Point3::new(0.0, 0.0, 1.7), &far).unwrap_err(), Error::NoGroundUnderSensor);
    }

    #[test]
    fn restore_is_disjoint_union() {
        let p = |x: f64| ScanPoint { position: Point3::new(x, 0.0, 0.0), sensor: Point3::origin(), scan: 0 };
        let n = vec![p(1.0), p(2.0)];
        let g = vec![p(3.0)];
        assert_eq!(restore_ground(&[], &g), g);
        assert_eq!(restore_ground(&n, &[]), n);
        assert_eq!(restore_ground(&n, &g).len(), 3);
    }

    #[test]
    fn height_map_fills_from_neighbors() {
        let pts = vec![Point3::new(0.1, 0.1, 0.5), Point3::new(1.1, 0.1, 0.7)];
        let m = GroundHeightMap::new(&pts, 0.5);
        assert_eq!(m.height_at(0.2, 0.2), 0.5);
        assert!((m.height_at(0.6, 0.1) - 0.6).abs() < 1e-12);
    }
}
