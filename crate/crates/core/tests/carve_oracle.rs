use carvemap_core::carve::{cast_votes, carve, extract_surface, merge_car_hulls, CarveParams, Triangulation, Votes};
use carvemap_core::eval::mesh_to_cloud_error;
use carvemap_core::mesh::{box_mesh, unit_cube};
use carvemap_core::{Point3, ScanPoint};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    (0..n).map(|_| Point3::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0))).collect()
}

#[test]
fn grid_triangulation_is_delaunay_after_jitter() {
    let mut pts = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                pts.push(Point3::new(i as f64, j as f64, k as f64));
            }
        }
    }
    let tri = Triangulation::build(&pts, &[]).unwrap();
    assert!(tri.is_valid());
    assert!(tri.is_delaunay());
    assert!((0..pts.len()).all(|v| tri.is_inserted(v)));
}

#[test]
fn collinear_input_still_triangulates() {
    let pts: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
    let tri = Triangulation::build(&pts, &[]).unwrap();
    assert!(tri.is_valid());
    assert!(tri.is_delaunay());
}

/// Small complexes: every ray's traversal equals the set of tetrahedra the
/// segment overlaps over a positive length.
#[test]
fn votes_match_segment_oracle_on_small_complexes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 40 {
        let n = rng.gen_range(5..9);
        let pts = random_points(&mut rng, n);
        let tri = Triangulation::build_without_sky(&pts).unwrap();
        if tri.len() > 50 {
            continue;
        }
        checked += 1;
        for _ in 0..20 {
            let origin = Point3::new(rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5));
            let target = rng.gen_range(0..pts.len());
            let mut votes = Votes::new(tri.len());
            cast_votes(&tri, &[(origin, target)], &mut votes);
            assert_eq!(votes.skipped, 0);
            let end = tri.vertices()[target];
            let oracle: Vec<u32> = (0..tri.len()).map(|t| tri.segment_crosses(t, &origin, &end) as u32).collect();
            assert_eq!(votes.counts, oracle);
        }
    }
}

#[test]
fn two_tets_crossed_through_shared_facet() {
    let pts = [
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(-0.5, 0.866, 0.0),
        Point3::new(-0.5, -0.866, 0.0),
        Point3::new(0.0, 0.0, 2.0),
        Point3::new(0.0, 0.0, -2.0),
    ];
    let tri = Triangulation::build(&pts, &[]).unwrap();
    let path = tri.traverse(&Point3::new(0.05, 0.02, 1.0), 4).unwrap();
    assert_eq!(path.len(), 2);
    assert!(path.iter().all(|&t| tri.tets()[t].iter().all(|&v| v < 5)));
}

fn cube_scan(spacing: f64) -> Vec<ScanPoint> {
    let n = (2.0 / spacing).round() as usize;
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let mut sensor = Point3::origin();
            sensor[axis] = 4.0 * sign;
            for i in 0..=n {
                for j in 0..=n {
                    let (a, b) = (-1.0 + i as f64 * spacing, -1.0 + j as f64 * spacing);
                    let mut p = Point3::origin();
                    p[axis] = sign;
                    p[(axis + 1) % 3] = a + rng.gen_range(-0.2..0.2) * spacing;
                    p[(axis + 2) % 3] = b + rng.gen_range(-0.2..0.2) * spacing;
                    for k in 0..3 {
                        if k != axis {
                            p[k] = p[k].clamp(-1.0, 1.0);
                        }
                    }
                    out.push(ScanPoint { position: p, sensor, scan: 2 * axis + (sign > 0.0) as usize });
                }
            }
        }
    }
    out
}

#[test]
fn cube_surface_is_recovered() {
    let spacing = 0.1;
    let pts = cube_scan(spacing);
    let out = carve(&pts, &CarveParams::default()).unwrap();
    assert!(out.mesh.is_manifold());
    assert!(out.mesh.verify_manifold());
    assert_eq!(out.diagnostics.skipped_rays, 0);
    let truth = box_mesh(Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0));
    // Mesh samples against the true cube.
    let samples: Vec<Point3> = (0..out.mesh.faces().len())
        .map(|f| {
            let [a, b, c] = out.mesh.face_points(f);
            Point3::from((a.coords + b.coords + c.coords) / 3.0)
        })
        .collect();
    let err = mesh_to_cloud_error(&truth, &samples).unwrap();
    assert!(err.avg <= 1.5 * spacing, "avg {}", err.avg);
    // The surface covers the cube.
    let reference: Vec<Point3> = pts.iter().map(|p| p.position).collect();
    let cover = mesh_to_cloud_error(&out.mesh, &reference).unwrap();
    assert!(cover.avg <= 1.5 * spacing, "coverage avg {}", cover.avg);
    eprintln!("cube: faces {} components {} chi {} diag {:?}", out.mesh.faces().len(), out.mesh.component_count(), out.mesh.euler_characteristic(), out.diagnostics);
}

#[test]
fn single_wall_gives_open_sheet() {
    let mut pts = Vec::new();
    let sensor = Point3::new(0.0, 0.0, 0.0);
    for i in 0..=30 {
        for j in 0..=20 {
            let p = Point3::new(5.0, -3.0 + i as f64 * 0.2, -2.0 + j as f64 * 0.2);
            pts.push(ScanPoint { position: p, sensor, scan: 0 });
        }
    }
    let out = carve(&pts, &CarveParams::default()).unwrap();
    assert!(out.mesh.is_manifold());
    let (lo, hi) = out.mesh.bounding_box().unwrap();
    assert!((hi.x - 5.0).abs() < 1e-3 && (lo.x - 5.0).abs() < 1e-3);
    assert!(hi.y - lo.y > 5.5 && hi.z - lo.z > 3.5);
    assert!(out.mesh.total_area() > 0.9 * 6.0 * 4.0, "area {}", out.mesh.total_area());
}

#[test]
fn extracted_faces_separate_free_and_matter() {
    let pts = cube_scan(0.25);
    let positions: Vec<Point3> = pts.iter().map(|p| p.position).collect();
    let sensors: Vec<Point3> = pts.iter().map(|p| p.sensor).collect();
    let tri = Triangulation::build(&positions, &sensors).unwrap();
    let rays: Vec<(Point3, usize)> = pts.iter().enumerate().map(|(i, p)| (p.sensor, i)).collect();
    let mut votes = Votes::new(tri.len());
    cast_votes(&tri, &rays, &mut votes);
    let (mesh, diag) = extract_surface(&tri, &votes, &CarveParams::default()).unwrap();
    assert!(mesh.is_manifold());
    assert_eq!(diag.free + diag.matter, diag.tetrahedra);
    assert!(diag.grown <= diag.free);
}

#[test]
fn merging_hulls_adds_components() {
    let scene = box_mesh(Point3::new(-5.0, -5.0, 0.0), Point3::new(5.0, 5.0, 3.0));
    let merged = merge_car_hulls(&scene, &[]);
    assert_eq!(merged, scene);
    let hulls = [unit_cube(), box_mesh(Point3::new(2.0, 2.0, 0.0), Point3::new(3.0, 3.0, 1.0))];
    let merged = merge_car_hulls(&scene, &hulls);
    assert_eq!(merged.component_count(), scene.component_count() + 2);
    assert_eq!(merged.faces().len(), scene.faces().len() + 24);
    assert!(merged.is_manifold());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Adding rays never lowers a vote.
    #[test]
    fn votes_are_monotone(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 30);
        let tri = Triangulation::build(&pts, &[]).unwrap();
        let mut rays: Vec<(Point3, usize)> = (0..20).map(|_| (Point3::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 2.0), rng.gen_range(0..30))).collect();
        let mut a = Votes::new(tri.len());
        cast_votes(&tri, &rays[..10], &mut a);
        let mut b = Votes::new(tri.len());
        rays.truncate(20);
        cast_votes(&tri, &rays, &mut b);
        prop_assert!(a.counts.iter().zip(&b.counts).all(|(x, y)| x <= y));
    }
}
