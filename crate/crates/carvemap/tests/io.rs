use std::fs;
use std::path::Path;

use carvemap::io::{self, Calibration, Dataset, Frame, IoError};
use carvemap_core::mesh::box_mesh;
use carvemap_core::{GrayImage, Intrinsics, Point3, RigidTransform, Vec3};

fn calibration() -> Calibration {
    Calibration {
        intrinsics: Intrinsics { fx: 410.5, fy: 409.25, cx: 79.5, cy: 59.5 },
        lidar_to_camera: RigidTransform::from_axis_angle(Vec3::new(0.2, -1.0, 0.4).normalize(), 1.1, Vec3::new(0.1, -0.3, 0.25)),
    }
}

fn gradient_image(w: usize, h: usize, seed: usize) -> GrayImage {
    let mut img = GrayImage::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            img.set(x, y, ((x * 7 + y * 13 + seed * 31) % 256) as f64 / 255.0);
        }
    }
    img
}

fn small_dataset(n: usize) -> Dataset {
    let scans = (0..n)
        .map(|k| (0..50).map(|i| Point3::new(i as f64 * 0.25, k as f64 - 0.5, 0.125 * (i % 3) as f64)).collect())
        .collect();
    let frames = (0..n).map(|k| Frame { image: gradient_image(16, 12, k), timestamp: 0.1 * k as f64 }).collect();
    let poses = (0..n).map(|k| RigidTransform::from_axis_angle(Vec3::z(), 0.05 * k as f64, Vec3::new(k as f64, 0.5, 0.0))).collect();
    Dataset { scans, frames, calibration: calibration(), poses: Some(poses), dropped: 0 }
}

fn assert_transform_eq(a: &RigidTransform, b: &RigidTransform, tol: f64) {
    for (x, y) in a.to_row_major().iter().zip(b.to_row_major().iter()) {
        assert!((x - y).abs() <= tol, "{a:?} != {b:?}");
    }
}

#[test]
fn dataset_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = small_dataset(3);
    io::write_dataset(dir.path(), &d).unwrap();
    let back = io::load_dataset(dir.path()).unwrap();
    assert_eq!(back.scans.len(), 3);
    assert_eq!(back.dropped, 0);
    // Scans are stored as f32; the sample coordinates are exact in f32.
    assert_eq!(back.scans, d.scans);
    for (a, b) in back.frames.iter().zip(&d.frames) {
        assert_eq!(a.image.to_u8(), b.image.to_u8());
        assert!((a.timestamp - b.timestamp).abs() < 1e-12);
    }
    assert_eq!(back.calibration.intrinsics, d.calibration.intrinsics);
    assert_transform_eq(&back.calibration.lidar_to_camera, &d.calibration.lidar_to_camera, 1e-12);
    for (a, b) in back.poses.unwrap().iter().zip(d.poses.as_ref().unwrap()) {
        assert_transform_eq(a, b, 1e-12);
    }
}

#[test]
fn missing_calibration_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    io::write_dataset(dir.path(), &small_dataset(2)).unwrap();
    fs::remove_file(dir.path().join("calib.txt")).unwrap();
    let err = io::load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, IoError::CalibrationNotFound(_)), "{err}");
    assert!(err.to_string().starts_with("calibration not found"));
}

#[test]
fn non_finite_points_are_dropped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.bin");
    let mut bytes = Vec::new();
    for rec in [[1.0f32, 2.0, 3.0, 0.5], [f32::NAN, 0.0, 0.0, 0.0], [4.0, f32::INFINITY, 1.0, 0.0], [-1.0, -2.0, 0.5, 1.0]] {
        for c in rec {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    fs::write(&path, bytes).unwrap();
    let (points, dropped) = io::read_scan(&path).unwrap();
    assert_eq!(dropped, 2);
    assert_eq!(points, vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-1.0, -2.0, 0.5)]);
}

#[test]
fn dataset_load_sums_dropped_points() {
    let dir = tempfile::tempdir().unwrap();
    io::write_dataset(dir.path(), &small_dataset(2)).unwrap();
    let scan = dir.path().join("scans/000001.bin");
    let mut bytes = fs::read(&scan).unwrap();
    bytes[0..4].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&scan, bytes).unwrap();
    let d = io::load_dataset(dir.path()).unwrap();
    assert_eq!(d.dropped, 1);
    assert_eq!(d.scans[1].len(), 49);
}

#[test]
fn truncated_scan_is_unreadable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bin");
    fs::write(&path, [0u8; 20]).unwrap();
    assert!(matches!(io::read_scan(&path), Err(IoError::UnreadableScan { .. })));
}

#[test]
fn scan_and_image_counts_must_match() {
    let dir = tempfile::tempdir().unwrap();
    io::write_dataset(dir.path(), &small_dataset(3)).unwrap();
    fs::remove_file(dir.path().join("images/000002.png")).unwrap();
    let err = io::load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, IoError::CountMismatch { scans: 3, images: 2 }), "{err}");
}

#[test]
fn calibration_text_round_trips() {
    let c = calibration();
    let text = io::format_calibration(&c);
    let back = io::parse_calibration(Path::new("calib.txt"), &text).unwrap();
    assert_eq!(back.intrinsics, c.intrinsics);
    assert_transform_eq(&back.lidar_to_camera, &c.lidar_to_camera, 1e-15);
}

#[test]
fn malformed_pose_lines_are_rejected() {
    assert!(io::parse_poses(Path::new("poses.txt"), "1 0 0 0 0 1 0 0 0 0 1\n").is_err());
    assert!(io::parse_poses(Path::new("poses.txt"), "1 0 0 0 0 1 0 0 0 0 x 0\n").is_err());
}

#[test]
fn pgm_images_load() {
    let dir = tempfile::tempdir().unwrap();
    let img = gradient_image(9, 7, 4);
    let path = dir.path().join("a.pgm");
    io::write_image(&path, &img).unwrap();
    assert_eq!(io::read_image(&path).unwrap().to_u8(), img.to_u8());
}

fn sample_mesh() -> carvemap_core::TriangleMesh {
    box_mesh(Point3::new(-1.0, -0.5, 0.0), Point3::new(1.5, 0.75, 2.0))
}

#[test]
fn ply_mesh_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let m = sample_mesh();
    let path = dir.path().join("m.ply");
    let colors: Vec<f64> = (0..m.vertices().len()).map(|i| i as f64 / 10.0).collect();
    io::write_ply(&path, &m, Some(&colors)).unwrap();
    let back = io::read_mesh_ply(&path).unwrap();
    assert_eq!(back.vertices(), m.vertices());
    assert_eq!(back.faces(), m.faces());
}

#[test]
fn ascii_ply_with_quads_is_triangulated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.ply");
    let text = "ply\nformat ascii 1.0\ncomment unit square\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\n\
                element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 1\n1 0 0 2\n1 1 0 3\n0 1 0 4\n4 0 1 2 3\n";
    fs::write(&path, text).unwrap();
    let m = io::read_mesh_ply(&path).unwrap();
    assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
    assert!((m.total_area() - 1.0).abs() < 1e-12);
}

#[test]
fn clouds_read_from_ply_and_text() {
    let dir = tempfile::tempdir().unwrap();
    let pts = vec![Point3::new(0.5, 1.5, -2.0), Point3::new(3.0, 0.0, 0.25)];
    let ply = dir.path().join("c.ply");
    io::write_cloud_ply(&ply, &pts).unwrap();
    assert_eq!(io::read_cloud(&ply).unwrap(), pts);
    let txt = dir.path().join("c.xyz");
    fs::write(&txt, "# x y z\n0.5 1.5 -2.0\n3 0 0.25 7\n").unwrap();
    assert_eq!(io::read_cloud(&txt).unwrap(), pts);
}

#[test]
fn obj_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let m = sample_mesh();
    let path = dir.path().join("m.obj");
    io::write_obj(&path, &m).unwrap();
    let back = io::read_obj(&path).unwrap();
    assert_eq!(back.faces(), m.faces());
    for (a, b) in back.vertices().iter().zip(m.vertices()) {
        assert!((a - b).norm() < 1e-12);
    }
}
