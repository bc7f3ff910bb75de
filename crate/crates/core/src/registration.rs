//! Scan alignment, range filtering and voxel downsampling.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector6};

use crate::geom::{RigidTransform, ScanPoint};
use crate::kdtree::KdTree;
use crate::prelude::*;

/// Default far-point threshold (meters).
pub const DEFAULT_MAX_RANGE: f64 = 30.0;
/// Default downsampling fraction (two orders of magnitude).
pub const DEFAULT_DOWNSAMPLE_FRACTION: f64 = 0.01;

/// A scan expressed in the world frame.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlignedScan {
    pub id: usize,
    pub points: Vec<Point3>,
    pub sensor_center: Point3,
    pub pose: RigidTransform,
}

impl AlignedScan {
    /// Moves sensor-frame points into the world with the sensor→world `pose`.
    pub fn from_sensor_frame(id: usize, raw: &[Point3], pose: RigidTransform) -> Self {
        Self {
            id,
            points: raw.iter().map(|p| pose.apply(p)).collect(),
            sensor_center: Point3::from(pose.translation),
            pose,
        }
    }

    pub fn scan_points(&self) -> Vec<ScanPoint> {
        self.points
            .iter()
            .map(|&position| ScanPoint { position, sensor: self.sensor_center, scan: self.id })
            .collect()
    }
}

/// Keeps exactly the points within `max_range` of the sensor center.
pub fn range_filter(scan: &AlignedScan, max_range: f64) -> AlignedScan {
    let c = scan.sensor_center;
    AlignedScan {
        points: scan.points.iter().copied().filter(|p| (p - c).norm() <= max_range).collect(),
        ..scan.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Convergence threshold on the change of the mean residual (meters).
    pub tolerance: f64,
    /// Correspondences farther than this are outliers (meters).
    pub max_correspondence: f64,
    /// Minimum inlier fraction at convergence.
    pub min_inlier_fraction: f64,
    /// Neighbors used to estimate reference normals.
    pub normal_neighbors: usize,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-5,
            max_correspondence: 1.0,
            min_inlier_fraction: 0.3,
            normal_neighbors: 10,
        }
    }
}

/// Correspondence cost used by [`align_scan`].
pub trait CorrespondenceCost {
    /// Residual and its Jacobian with respect to `[rotation vector, translation]`
    /// for a transformed source point matched to reference point `target`
    /// with normal `normal`.
    fn linearize(&self, source: &Point3, target: &Point3, normal: &Vec3) -> (f64, Vector6<f64>);
}

/// Signed distance of the source point to the reference tangent plane.
#[derive(Debug, Clone, Copy, Default)]
pub struct PointToPlane;

impl CorrespondenceCost for PointToPlane {
    fn linearize(&self, source: &Point3, target: &Point3, normal: &Vec3) -> (f64, Vector6<f64>) {
        let r = normal.dot(&(source - target));
        let c = source.coords.cross(normal);
        (r, Vector6::new(c.x, c.y, c.z, normal.x, normal.y, normal.z))
    }
}

/// Reference cloud with its search index and estimated normals.
#[derive(Debug, Clone)]
pub struct IcpReference {
    tree: KdTree,
    normals: Vec<Vec3>,
}

impl IcpReference {
    pub fn new(points: Vec<Point3>, neighbors: usize) -> Self {
        let tree = KdTree::new(points);
        let normals = tree
            .points()
            .iter()
            .map(|p| estimate_normal(&tree, p, neighbors.max(3)))
            .collect();
        Self { tree, normals }
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    /// Mean distance from each transformed source point to its nearest
    /// reference point.
    pub fn mean_nearest_distance(&self, source: &[Point3], transform: &RigidTransform) -> f64 {
        let total: f64 = source
            .iter()
            .filter_map(|p| self.tree.nearest(&transform.apply(p)))
            .map(|(_, d2)| d2.sqrt())
            .sum();
        total / source.len().max(1) as f64
    }
}

fn estimate_normal(tree: &KdTree, p: &Point3, k: usize) -> Vec3 {
    let nn = tree.k_nearest(p, k);
    let pts = tree.points();
    let mean = nn.iter().fold(Vec3::zeros(), |s, (i, _)| s + pts[*i].coords) / nn.len() as f64;
    let mut cov = Matrix3::zeros();
    for (i, _) in &nn {
        let d = pts[*i].coords - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (imin, _) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, v)| {
        if *v < acc.1 { (i, *v) } else { acc }
    });
    eig.eigenvectors.column(imin).into_owned()
}

/// Outcome of a successful alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub transform: RigidTransform,
    pub iterations: usize,
    pub inlier_fraction: f64,
    pub mean_residual: f64,
}

/// Point-to-plane ICP aligning `source` (sensor frame) to `reference`,
/// starting from `initial`. The returned transform maps source points into
/// the reference frame.
pub fn align_scan(
    source: &[Point3],
    reference: &IcpReference,
    initial: RigidTransform,
    params: &IcpParams,
) -> Result<Alignment> {
    align_scan_with(source, reference, initial, params, &PointToPlane)
}

pub fn align_scan_with<C: CorrespondenceCost>(
    source: &[Point3],
    reference: &IcpReference,
    initial: RigidTransform,
    params: &IcpParams,
    cost: &C,
) -> Result<Alignment> {
    const MIN_POINTS: usize = 100;
    if source.len() < MIN_POINTS || reference.len() < MIN_POINTS {
        return Err(Error::TooFewPoints { needed: MIN_POINTS, got: source.len().min(reference.len()) });
    }
    let max_d2 = params.max_correspondence * params.max_correspondence;
    let mut transform = initial;
    let mut previous = f64::INFINITY;
    let mut iterations = 0;
    let mut inliers;
    let mut mean_residual;
    loop {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        let mut residual_sum = 0.0;
        inliers = 0usize;
        for p in source {
            let moved = transform.apply(p);
            let Some((j, d2)) = reference.tree.nearest(&moved) else { continue };
            if d2 > max_d2 {
                continue;
            }
            inliers += 1;
            let (r, jac) = cost.linearize(&moved, &reference.tree.points()[j], &reference.normals[j]);
            h += jac * jac.transpose();
            g += jac * r;
            residual_sum += r.abs();
        }
        let fraction = inliers as f64 / source.len() as f64;
        if inliers < 6 {
            return Err(Error::RegistrationFailure { inliers: fraction });
        }
        mean_residual = residual_sum / inliers as f64;
        if (previous - mean_residual).abs() < params.tolerance || iterations >= params.max_iterations {
            if fraction < params.min_inlier_fraction {
                return Err(Error::RegistrationFailure { inliers: fraction });
            }
            return Ok(Alignment { transform, iterations, inlier_fraction: fraction, mean_residual });
        }
        previous = mean_residual;
        // Levenberg-style damping keeps degenerate (e.g. planar) scenes solvable.
        let damping = 1e-9 * (h.trace() / 6.0).max(1e-12);
        let step = (h + Matrix6::identity() * damping)
            .cholesky()
            .map(|c| c.solve(&(-g)))
            .ok_or(Error::RegistrationFailure { inliers: fraction })?;
        let delta = RigidTransform::from_rotation_vector(
            Vec3::new(step[0], step[1], step[2]),
            Vec3::new(step[3], step[4], step[5]),
        );
        transform = delta.compose(&transform);
        iterations += 1;
    }
}

/// Voxel-grid downsampling result.
#[derive(Debug, Clone, PartialEq)]
pub struct Downsampled {
    /// One centroid per occupied voxel, carrying the sensor ray (and scan)
    /// of the original point nearest to the centroid.
    pub points: Vec<ScanPoint>,
    /// For each input point, the index of its output point.
    pub assignment: Vec<usize>,
    /// Voxel edge length (meters).
    pub voxel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DownsampleParams {
    pub fraction: f64,
    /// Largest voxel edge the search may use (meters).
    pub max_voxel: f64,
    /// Accepted relative deviation from the target count.
    pub band: f64,
}

impl Default for DownsampleParams {
    fn default() -> Self {
        Self { fraction: DEFAULT_DOWNSAMPLE_FRACTION, max_voxel: 5.0, band: 0.2 }
    }
}

/// Groups point indices by voxel; keys sorted lexicographically.
fn voxelize(points: &[ScanPoint], voxel: f64) -> Vec<((i64, i64, i64), usize)> {
    let mut keyed: Vec<((i64, i64, i64), usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let q = p.position / voxel;
            ((q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64), i)
        })
        .collect();
    keyed.sort_unstable();
    keyed
}

fn count_voxels(points: &[ScanPoint], voxel: f64) -> usize {
    let keyed = voxelize(points, voxel);
    keyed.windows(2).filter(|w| w[0].0 != w[1].0).count() + usize::from(!keyed.is_empty())
}

/// Voxel-grid downsampling to about `fraction` of the input size; the voxel
/// edge is searched by bisection (in log scale) until the output count is
/// within the band around the target, or the best edge found is used.
pub fn downsample(points: &[ScanPoint], params: &DownsampleParams) -> Result<Downsampled> {
    if !(params.fraction > 0.0 && params.fraction <= 1.0) {
        return Err(Error::InvalidParameter("downsample fraction must be in (0, 1]"));
    }
    if points.is_empty() {
        return Ok(Downsampled { points: Vec::new(), assignment: Vec::new(), voxel: params.max_voxel });
    }
    let target = (params.fraction * points.len() as f64).max(1.0);
    let (lo_band, hi_band) = (target * (1.0 - params.band), target * (1.0 + params.band));
    let mut hi = params.max_voxel;
    let mut lo = params.max_voxel * 1e-6;
    let mut best = (hi, count_voxels(points, hi));
    let score = |c: usize| (c as f64 - target).abs();
    if best.1 as f64 > hi_band {
        // Even the coarsest allowed voxel keeps too many points.
        return Ok(build_downsampled(points, hi));
    }
    for _ in 0..64 {
        if (lo_band..=hi_band).contains(&(best.1 as f64)) {
            break;
        }
        let mid = (lo * hi).sqrt();
        let c = count_voxels(points, mid);
        if score(c) < score(best.1) {
            best = (mid, c);
        }
        if c as f64 > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-9 {
            break;
        }
    }
    Ok(build_downsampled(points, best.0))
}

fn build_downsampled(points: &[ScanPoint], voxel: f64) -> Downsampled {
    let keyed = voxelize(points, voxel);
    let mut out = Vec::new();
    let mut assignment = vec![0usize; points.len()];
    let mut start = 0;
    while start < keyed.len() {
        let mut end = start + 1;
        while end < keyed.len() && keyed[end].0 == keyed[start].0 {
            end += 1;
        }
        let members = &keyed[start..end];
        let centroid = members.iter().fold(Vec3::zeros(), |s, (_, i)| s + points[*i].position.coords)
            / members.len() as f64;
        let centroid = Point3::from(centroid);
        let nearest = members
            .iter()
            .map(|(_, i)| *i)
            .min_by(|a, b| {
                let da = (points[*a].position - centroid).norm_squared();
                let db = (points[*b].position - centroid).norm_squared();
                da.total_cmp(&db).then(a.cmp(b))
            })
            .expect("voxel has members");
        for (_, i) in members {
            assignment[*i] = out.len();
        }
        out.push(ScanPoint { position: centroid, sensor: points[nearest].sensor, scan: points[nearest].scan });
        start = end;
    }
    Downsampled { points: out, assignment, voxel }
}
