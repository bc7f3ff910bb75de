//! Mesh accuracy against a reference cloud and label scoring.

use crate::bvh::Bvh;
use crate::mesh::TriangleMesh;
use crate::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub avg: f64,
    /// Population standard deviation of the per-point distances.
    pub std: f64,
    pub distances: Vec<f64>,
}

impl ErrorReport {
    pub fn from_distances(distances: Vec<f64>) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let n = distances.len() as f64;
        let avg = distances.iter().sum::<f64>() / n;
        let var = distances.iter().map(|d| (d - avg) * (d - avg)).sum::<f64>() / n;
        Ok(Self { avg, std: var.sqrt(), distances })
    }

    pub fn n_points(&self) -> usize {
        self.distances.len()
    }
}

/// Distance from every reference point to the nearest mesh triangle.
pub fn mesh_to_cloud_error(mesh: &TriangleMesh, reference: &[Point3]) -> Result<ErrorReport> {
    if mesh.faces().is_empty() {
        return Err(Error::EmptyMesh);
    }
    if reference.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let bvh = Bvh::new(mesh);
    let distances = reference.iter().map(|p| bvh.nearest(p).map(|(d, _)| d).unwrap_or(f64::INFINITY)).collect();
    ErrorReport::from_distances(distances)
}

/// Exhaustive counterpart of [`mesh_to_cloud_error`].
pub fn mesh_to_cloud_error_brute_force(mesh: &TriangleMesh, reference: &[Point3]) -> Result<ErrorReport> {
    if mesh.faces().is_empty() {
        return Err(Error::EmptyMesh);
    }
    let distances = reference
        .iter()
        .map(|p| {
            (0..mesh.faces().len())
                .map(|f| crate::distance::point_to_triangle_distance(p, &mesh.face_points(f)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    ErrorReport::from_distances(distances)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl Confusion {
    /// Precision of the positive class; 1 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        let p = self.true_positive + self.false_positive;
        if p == 0 { 1.0 } else { self.true_positive as f64 / p as f64 }
    }

    /// Recall of the positive class; 1 when there are no positives.
    pub fn recall(&self) -> f64 {
        let p = self.true_positive + self.false_negative;
        if p == 0 { 1.0 } else { self.true_positive as f64 / p as f64 }
    }

    /// Fraction of true negatives predicted positive.
    pub fn false_positive_rate(&self) -> f64 {
        let n = self.false_positive + self.true_negative;
        if n == 0 { 0.0 } else { self.false_positive as f64 / n as f64 }
    }
}

pub fn detection_metrics(predicted: &[bool], truth: &[bool]) -> Result<Confusion> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch { left: predicted.len(), right: truth.len() });
    }
    let mut c = Confusion::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.true_positive += 1,
            (true, false) => c.false_positive += 1,
            (false, false) => c.true_negative += 1,
            (false, true) => c.false_negative += 1,
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_cube;

    #[test]
    fn point_off_a_cube_face() {
        let r = mesh_to_cloud_error(&unit_cube(), &[Point3::new(0.5, 0.5, 1.25)]).unwrap();
        assert!((r.avg - 0.25).abs() < 1e-12);
        assert_eq!(r.std, 0.0);
    }

    #[test]
    fn points_on_the_mesh_have_zero_error() {
        let pts = [Point3::new(0.3, 0.2, 0.0), Point3::new(1.0, 0.5, 0.5), Point3::new(0.0, 0.0, 0.0)];
        let r = mesh_to_cloud_error(&unit_cube(), &pts).unwrap();
        assert!(r.avg < 1e-9 && r.std < 1e-9);
    }

    #[test]
    fn empty_inputs() {
        let empty = TriangleMesh::new(Vec::new(), Vec::new()).unwrap();
        assert_eq!(mesh_to_cloud_error(&empty, &[Point3::origin()]).unwrap_err(), Error::EmptyMesh);
        assert_eq!(mesh_to_cloud_error(&unit_cube(), &[]).unwrap_err(), Error::EmptyCloud);
    }

    #[test]
    fn metrics_edge_cases() {
        let truth = [true, false, true, false];
        let same = detection_metrics(&truth, &truth).unwrap();
        assert_eq!((same.precision(), same.recall()), (1.0, 1.0));
        let none = detection_metrics(&[false; 4], &truth).unwrap();
        assert_eq!(none.recall(), 0.0);
        assert!(detection_metrics(&[true], &truth).is_err());
    }
}
