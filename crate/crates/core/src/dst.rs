//! Dempster–Shafer occupancy evidence over `{empty, occupied, unknown}` and
//! cross-scan conflict classification of points into static and moving.

use crate::geom::{Ray, ScanPoint};
use crate::prelude::*;
use crate::registration::AlignedScan;

/// Mass assignment over the frame `{empty, occupied}`; `unknown` holds the
/// mass of the whole frame.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvidenceMass {
    pub empty: f64,
    pub occupied: f64,
    pub unknown: f64,
}

impl EvidenceMass {
    pub const VACUOUS: Self = Self { empty: 0.0, occupied: 0.0, unknown: 1.0 };

    pub fn new(empty: f64, occupied: f64, unknown: f64) -> Result<Self> {
        let m = Self { empty, occupied, unknown };
        if !m.is_valid() {
            return Err(Error::InvalidParameter("masses must be in [0, 1] and sum to 1"));
        }
        Ok(m)
    }

    pub fn empty(lambda: f64) -> Self {
        Self { empty: lambda, occupied: 0.0, unknown: 1.0 - lambda }
    }

    pub fn occupied(lambda: f64) -> Self {
        Self { empty: 0.0, occupied: lambda, unknown: 1.0 - lambda }
    }

    pub fn is_valid(&self) -> bool {
        let in_range = |v: f64| (0.0..=1.0).contains(&v);
        in_range(self.empty)
            && in_range(self.occupied)
            && in_range(self.unknown)
            && (self.empty + self.occupied + self.unknown - 1.0).abs() <= 1e-9
    }

    /// Conflict `κ` between two masses.
    pub fn conflict(&self, other: &Self) -> f64 {
        self.empty * other.occupied + self.occupied * other.empty
    }
}

/// Dempster's rule of combination; returns the combined mass and the
/// conflict `κ`. Fully contradictory certain evidence (`κ = 1`) is an error.
pub fn combine(a: &EvidenceMass, b: &EvidenceMass) -> Result<(EvidenceMass, f64)> {
    let kappa = a.conflict(b);
    let norm = 1.0 - kappa;
    if norm <= 0.0 {
        return Err(Error::TotalConflict);
    }
    let empty = (a.empty * b.empty + a.empty * b.unknown + a.unknown * b.empty) / norm;
    let occupied = (a.occupied * b.occupied + a.occupied * b.unknown + a.unknown * b.occupied) / norm;
    let unknown = (a.unknown * b.unknown) / norm;
    Ok((EvidenceMass { empty, occupied, unknown }, kappa))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DstParams {
    /// Mass assigned by a single beam to `empty` or `occupied`.
    pub lambda: f64,
    /// Range tolerance around the beam end (meters).
    pub range_tolerance: f64,
    /// Angular gate around the beam direction (radians).
    pub angular_tolerance: f64,
    /// Scans on each side of the point's own scan that are compared.
    pub window: usize,
    /// Conflict above which a point is moving.
    pub conflict_threshold: f64,
    /// Per-scan aggregation stops once the unknown mass drops below this.
    pub saturation: f64,
}

impl Default for DstParams {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            range_tolerance: 0.1,
            // Half of a 0.36° lidar angular resolution.
            angular_tolerance: 0.18f64.to_radians(),
            window: 5,
            conflict_threshold: 0.5,
            saturation: 0.01,
        }
    }
}

/// Occupancy evidence a single beam gives about point `p`.
pub fn beam_evidence(p: &Point3, beam: &Ray, params: &DstParams) -> EvidenceMass {
    let to_p = p - beam.origin;
    let r_p = to_p.norm();
    let r_b = beam.length();
    if r_p == 0.0 {
        // The sensor center itself is traversed by every beam.
        return EvidenceMass::empty(params.lambda);
    }
    let cos = (to_p.dot(&(beam.target - beam.origin)) / (r_p * r_b)).clamp(-1.0, 1.0);
    if cos.acos() > params.angular_tolerance {
        return EvidenceMass::VACUOUS;
    }
    if r_p < r_b - params.range_tolerance {
        EvidenceMass::empty(params.lambda)
    } else if r_p <= r_b + params.range_tolerance {
        EvidenceMass::occupied(params.lambda)
    } else {
        EvidenceMass::VACUOUS
    }
}

/// Static or moving, with the conflict score that decided it.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MotionLabel {
    pub moving: bool,
    pub conflict: f64,
}

/// Beams of one scan binned by direction for gated lookups.
#[derive(Debug, Clone)]
pub struct BeamIndex {
    sensor: Point3,
    targets: Vec<Point3>,
    /// Bin edge in radians (azimuth and elevation).
    bin: f64,
    n_az: usize,
    n_el: usize,
    /// CSR layout: `starts[b]..starts[b + 1]` indexes `members`.
    starts: Vec<usize>,
    members: Vec<usize>,
}

impl BeamIndex {
    pub fn new(scan: &AlignedScan, angular_tolerance: f64) -> Self {
        let bin = (2.0 * angular_tolerance).max(1e-4);
        let n_az = (2.0 * core::f64::consts::PI / bin).ceil() as usize;
        let n_el = (core::f64::consts::PI / bin).ceil() as usize + 1;
        let sensor = scan.sensor_center;
        let targets: Vec<Point3> = scan.points.iter().copied().filter(|p| *p != sensor).collect();
        let mut keyed: Vec<(usize, usize)> = targets
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let (a, e) = Self::bin_of(p - sensor, bin, n_az, n_el);
                (e * n_az + a, i)
            })
            .collect();
        keyed.sort_unstable();
        let mut starts = vec![0usize; n_az * n_el + 1];
        for (b, _) in &keyed {
            starts[b + 1] += 1;
        }
        for b in 0..n_az * n_el {
            starts[b + 1] += starts[b];
        }
        let members = keyed.into_iter().map(|(_, i)| i).collect();
        Self { sensor, targets, bin, n_az, n_el, starts, members }
    }

    fn bin_of(d: Vec3, bin: f64, n_az: usize, n_el: usize) -> (usize, usize) {
        let az = d.y.atan2(d.x) + core::f64::consts::PI;
        let el = (d.z / d.norm()).clamp(-1.0, 1.0).acos();
        let a = ((az / bin) as usize).min(n_az - 1);
        let e = ((el / bin) as usize).min(n_el - 1);
        (a, e)
    }

    pub fn sensor(&self) -> Point3 {
        self.sensor
    }

    /// Beams whose direction might be within `tolerance` of `p`'s.
    fn candidates(&self, p: &Point3, tolerance: f64) -> impl Iterator<Item = usize> + '_ {
        let d = p - self.sensor;
        let (a, e) = Self::bin_of(d, self.bin, self.n_az, self.n_el);
        let el = (d.z / d.norm()).clamp(-1.0, 1.0).acos();
        let reach_el = (tolerance / self.bin).ceil() as i64 + 1;
        // Azimuth bins shrink near the poles.
        let sin_el = el.sin().abs().max(1e-3);
        let reach_az = ((tolerance / sin_el / self.bin).ceil() as i64 + 1).min(self.n_az as i64 / 2);
        let (n_az, n_el) = (self.n_az as i64, self.n_el as i64);
        (-reach_el..=reach_el)
            .flat_map(move |de| (-reach_az..=reach_az).map(move |da| (de, da)))
            .filter_map(move |(de, da)| {
                let ee = e as i64 + de;
                if ee < 0 || ee >= n_el {
                    return None;
                }
                let aa = (a as i64 + da).rem_euclid(n_az);
                Some((ee * n_az + aa) as usize)
            })
            .flat_map(move |b| self.members[self.starts[b]..self.starts[b + 1]].iter().copied())
    }

    /// Aggregated occupancy mass of `p` with respect to all beams of the scan.
    pub fn aggregate(&self, p: &Point3, params: &DstParams) -> EvidenceMass {
        if *p == self.sensor {
            return EvidenceMass::empty(params.lambda);
        }
        let mut mass = EvidenceMass::VACUOUS;
        let mut beams: Vec<usize> = self.candidates(p, params.angular_tolerance).collect();
        beams.sort_unstable();
        beams.dedup();
        for b in beams {
            let ray = Ray { origin: self.sensor, target: self.targets[b] };
            let e = beam_evidence(p, &ray, params);
            if e == EvidenceMass::VACUOUS {
                continue;
            }
            match combine(&mass, &e) {
                Ok((m, _)) => mass = m,
                Err(_) => continue,
            }
            if mass.unknown < params.saturation {
                break;
            }
        }
        mass
    }
}

/// Classifies `p` (observed in its own scan, hence occupied there) by the
/// largest conflict with the aggregated evidence of the other scans.
pub fn classify_point(p: &Point3, others: &[&BeamIndex], params: &DstParams) -> MotionLabel {
    let own = EvidenceMass::occupied(params.lambda);
    let conflict = others
        .iter()
        .map(|index| own.conflict(&index.aggregate(p, params)))
        .fold(0.0, f64::max);
    MotionLabel { moving: conflict > params.conflict_threshold, conflict }
}

/// Labels every point of a window of aligned scans. `points` carries the
/// points to classify with their scan index (a position in `scans`).
pub fn label_points(points: &[ScanPoint], scans: &[AlignedScan], params: &DstParams) -> Vec<MotionLabel> {
    let indices: Vec<BeamIndex> = scans.iter().map(|s| BeamIndex::new(s, params.angular_tolerance)).collect();
    points
        .iter()
        .map(|sp| {
            let lo = sp.scan.saturating_sub(params.window);
            let hi = (sp.scan + params.window).min(scans.len().saturating_sub(1));
            let others: Vec<&BeamIndex> = (lo..=hi).filter(|&i| i != sp.scan).map(|i| &indices[i]).collect();
            classify_point(&sp.position, &others, params)
        })
        .collect()
}

/// Labels all points of every scan in the window.
pub fn label_cloud(scans: &[AlignedScan], params: &DstParams) -> Vec<Vec<MotionLabel>> {
    let points: Vec<ScanPoint> = scans
        .iter()
        .enumerate()
        .flat_map(|(k, s)| s.points.iter().map(move |&position| ScanPoint { position, sensor: s.sensor_center, scan: k }))
        .collect();
    let flat = label_points(&points, scans, params);
    let mut out = Vec::with_capacity(scans.len());
    let mut offset = 0;
    for s in scans {
        out.push(flat[offset..offset + s.points.len()].to_vec());
        offset += s.points.len();
    }
    out
}
