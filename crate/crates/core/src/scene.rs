//! Synthetic scenes with exact geometry, albedo and motion: a simulated
//! spherical lidar and a z-buffer renderer for oracle tests.

use crate::bvh::Bvh;
use crate::geom::{CameraView, GrayImage, Intrinsics, RigidTransform};
use crate::mesh::{box_mesh, TriangleMesh};
use crate::prelude::*;
use crate::raster::{ray_plane_barycentric, rasterize_triangles};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Scalar albedo field evaluated at object-local positions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Albedo {
    Constant { value: f64 },
    Checker { size: f64, low: f64, high: f64 },
    /// Smooth value noise: two octaves of cubic-interpolated lattice noise.
    Noise { scale: f64, low: f64, high: f64, seed: u64 },
}

impl Albedo {
    pub fn sample(&self, p: &Point3) -> f64 {
        match *self {
            Albedo::Constant { value } => value,
            Albedo::Checker { size, low, high } => {
                let k = (p.x / size).floor() + (p.y / size).floor() + (p.z / size).floor();
                if (k as i64).rem_euclid(2) == 0 { low } else { high }
            }
            Albedo::Noise { scale, low, high, seed } => {
                let q = p.coords / scale;
                let n = 0.65 * value_noise(&q, seed) + 0.35 * value_noise(&(q * 2.03), seed ^ 0x9e37_79b9);
                low + (high - low) * n.clamp(0.0, 1.0)
            }
        }
    }
}

fn lattice(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    // SplitMix64 finalizer over the packed lattice coordinates.
    let mut h = seed
        ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (iz as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(q: &Vec3, seed: u64) -> f64 {
    let base = q.map(|c| c.floor());
    let f = q - base;
    let s = f.map(|t| t * t * (3.0 - 2.0 * t));
    let (bx, by, bz) = (base.x as i64, base.y as i64, base.z as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let w = (if dx == 1 { s.x } else { 1.0 - s.x })
            * (if dy == 1 { s.y } else { 1.0 - s.y })
            * (if dz == 1 { s.z } else { 1.0 - s.z });
        acc += w * lattice(bx + dx as i64, by + dy as i64, bz + dz as i64, seed);
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub mesh: TriangleMesh,
    pub albedo: Albedo,
}

/// Object moving rigidly along keyframed poses (object → world).
#[derive(Debug, Clone, PartialEq)]
pub struct MovingObject {
    pub object: SceneObject,
    /// `(time, pose)` pairs with increasing times.
    pub keyframes: Vec<(f64, RigidTransform)>,
}

impl MovingObject {
    /// Pose at `time`, interpolated between keyframes and held at the ends.
    pub fn pose_at(&self, time: f64) -> RigidTransform {
        let k = &self.keyframes;
        match k.len() {
            0 => RigidTransform::identity(),
            1 => k[0].1,
            _ => {
                if time <= k[0].0 {
                    return k[0].1;
                }
                for w in k.windows(2) {
                    if time <= w[1].0 {
                        let s = (time - w[0].0) / (w[1].0 - w[0].0);
                        return w[0].1.interpolate(&w[1].1, s);
                    }
                }
                k[k.len() - 1].1
            }
        }
    }
}

/// Idealized spinning lidar: `n_azimuth × n_elevation` rays.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LidarModel {
    pub n_azimuth: usize,
    pub n_elevation: usize,
    /// Elevation range in radians (lowest, highest beam).
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub max_range: f64,
    /// Standard deviation of Gaussian range noise (0 = exact).
    pub range_noise: f64,
    pub seed: u64,
}

impl LidarModel {
    pub fn azimuth_step(&self) -> f64 {
        2.0 * core::f64::consts::PI / self.n_azimuth as f64
    }

    pub fn elevation_step(&self) -> f64 {
        if self.n_elevation < 2 {
            0.0
        } else {
            (self.elevation_max - self.elevation_min) / (self.n_elevation - 1) as f64
        }
    }

    /// Finest angular step between neighboring beams.
    pub fn angular_resolution(&self) -> f64 {
        let e = self.elevation_step();
        if e > 0.0 { self.azimuth_step().min(e) } else { self.azimuth_step() }
    }

    /// Unit ray directions in the sensor frame, elevation-major.
    pub fn directions(&self) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.n_azimuth * self.n_elevation);
        for j in 0..self.n_elevation {
            let el = self.elevation_min + j as f64 * self.elevation_step();
            for i in 0..self.n_azimuth {
                let az = i as f64 * self.azimuth_step();
                out.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        out
    }
}

/// Pinhole camera rigidly mounted on the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraRig {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    /// Sensor frame → camera frame.
    pub lidar_to_camera: RigidTransform,
}

impl CameraRig {
    /// World → camera pose for a sensor at `sensor_pose` (sensor → world).
    pub fn camera_pose(&self, sensor_pose: &RigidTransform) -> RigidTransform {
        self.lidar_to_camera.compose(&sensor_pose.inverse())
    }

    /// Camera looking along the sensor's +x axis, with image y pointing down.
    pub fn forward_looking(intrinsics: Intrinsics, width: usize, height: usize) -> Self {
        // Camera axes in sensor coordinates: x_cam = −y, y_cam = −z, z_cam = +x.
        let r = nalgebra::Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        let lidar_to_camera = RigidTransform::new(r, Vec3::zeros()).expect("rotation is orthonormal");
        Self { intrinsics, width, height, lidar_to_camera }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub statics: Vec<SceneObject>,
    pub movers: Vec<MovingObject>,
    /// Sensor → world pose per timestep.
    pub trajectory: Vec<RigidTransform>,
    pub lidar: LidarModel,
    pub camera: CameraRig,
}

/// One simulated sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedScan {
    /// Returns in the sensor frame.
    pub points: Vec<Point3>,
    /// Same returns in the world frame.
    pub world: Vec<Point3>,
    pub moving: Vec<bool>,
}

impl SyntheticScene {
    pub fn timesteps(&self) -> usize {
        self.trajectory.len()
    }

    /// Union of the static meshes (the ground-truth surface).
    pub fn static_mesh(&self) -> TriangleMesh {
        let mut out = TriangleMesh::default();
        for o in &self.statics {
            out.append(&o.mesh);
        }
        out
    }

    /// Triangles of the scene at `time` with `(object, albedo frame)` per
    /// triangle; movers come after statics.
    fn triangles_at(&self, time: f64) -> (Vec<[Point3; 3]>, Vec<(usize, RigidTransform)>) {
        let mut tris = Vec::new();
        let mut owner = Vec::new();
        for (k, o) in self.statics.iter().enumerate() {
            for f in 0..o.mesh.faces().len() {
                tris.push(o.mesh.face_points(f));
                owner.push((k, RigidTransform::identity()));
            }
        }
        for (k, m) in self.movers.iter().enumerate() {
            let pose = m.pose_at(time);
            let inv = pose.inverse();
            for f in 0..m.object.mesh.faces().len() {
                tris.push(m.object.mesh.face_points(f).map(|p| pose.apply(&p)));
                owner.push((self.statics.len() + k, inv));
            }
        }
        (tris, owner)
    }

    fn albedo_of(&self, object: usize) -> &Albedo {
        if object < self.statics.len() {
            &self.statics[object].albedo
        } else {
            &self.movers[object - self.statics.len()].object.albedo
        }
    }

    /// First hits of the lidar fan at `timestep`; rays without a hit within
    /// `max_range` produce no return.
    pub fn simulate_scan(&self, timestep: usize) -> Result<SimulatedScan> {
        let pose = *self.trajectory.get(timestep).ok_or(Error::InvalidParameter("timestep outside the trajectory"))?;
        let (tris, owner) = self.triangles_at(timestep as f64);
        let bvh = Bvh::from_triangles(tris);
        let origin = Point3::from(pose.translation);
        let mut rng = ChaCha8Rng::seed_from_u64(self.lidar.seed ^ (timestep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let noise = Normal::new(0.0, self.lidar.range_noise.max(0.0)).map_err(|_| Error::InvalidParameter("range noise"))?;
        let mut scan = SimulatedScan { points: Vec::new(), world: Vec::new(), moving: Vec::new() };
        for d in self.lidar.directions() {
            let dir = pose.apply_vector(&d);
            let Some(hit) = bvh.raycast(&origin, &dir, self.lidar.max_range) else { continue };
            let mut range = hit.t;
            if self.lidar.range_noise > 0.0 {
                range += noise.sample(&mut rng);
            }
            scan.points.push(Point3::from(d * range));
            scan.world.push(origin + dir * range);
            scan.moving.push(owner[hit.face].0 >= self.statics.len());
        }
        Ok(scan)
    }

    /// Camera view of the scene at `timestep` with an empty moving mask.
    pub fn view_at(&self, timestep: usize) -> Result<CameraView> {
        let pose = *self.trajectory.get(timestep).ok_or(Error::InvalidParameter("timestep outside the trajectory"))?;
        let cam = self.camera.camera_pose(&pose);
        let image = GrayImage::new(self.camera.width, self.camera.height, 0.0);
        let mut view = CameraView::unmasked(self.camera.intrinsics, cam, image)?;
        view.image = self.render_view(&view, timestep as f64);
        Ok(view)
    }

    /// Flat-shaded albedo image seen from `view` at `time`; background 0.
    pub fn render_view(&self, view: &CameraView, time: f64) -> GrayImage {
        let (tris, owner) = self.triangles_at(time);
        let map = rasterize_triangles(&tris, &view.intrinsics, &view.pose, view.width(), view.height());
        let mut image = GrayImage::new(view.width(), view.height(), 0.0);
        let center = view.center();
        for y in 0..view.height() {
            for x in 0..view.width() {
                let Some(face) = map.face_at(x, y) else { continue };
                let dir = view.pixel_ray(x as f64, y as f64);
                let Some((t, _)) = ray_plane_barycentric(&center, &dir, &tris[face]) else { continue };
                let (object, to_local) = owner[face];
                image.set(x, y, self.albedo_of(object).sample(&to_local.apply(&(center + dir * t))));
            }
        }
        image
    }
}

/// Extruded trapezoid car body: `length × width`, floor at `clearance`,
/// roof of length `roof` at `height`. Local frame centered on the ground
/// footprint, long axis along x.
pub fn car_body(length: f64, width: f64, clearance: f64, height: f64, roof: f64) -> TriangleMesh {
    let (l, w, r) = (length / 2.0, width / 2.0, roof / 2.0);
    let profile = [(-l, clearance), (l, clearance), (r, height), (-r, height)];
    let mut vertices = Vec::new();
    for y in [-w, w] {
        for &(x, z) in &profile {
            vertices.push(Point3::new(x, y, z));
        }
    }
    // Side caps (y = −w uses 0..4, y = +w uses 4..8), then the 4 strips.
    let mut faces = vec![[0, 1, 2], [0, 2, 3], [4, 6, 5], [4, 7, 6]];
    for i in 0..4 {
        let j = (i + 1) % 4;
        faces.push([i, i + 4, j + 4]);
        faces.push([i, j + 4, j]);
    }
    let mut mesh = TriangleMesh::new(vertices, faces).expect("car body is well formed");
    if mesh.signed_volume() < 0.0 {
        mesh.flip();
    }
    mesh.flag_manifold();
    mesh
}

/// Icosphere of the given radius centered at the origin.
pub fn sphere(radius: f64, subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0), (1.0, t, 0.0), (-1.0, -t, 0.0), (1.0, -t, 0.0),
        (0.0, -1.0, t), (0.0, 1.0, t), (0.0, -1.0, -t), (0.0, 1.0, -t),
        (t, 0.0, -1.0), (t, 0.0, 1.0), (-t, 0.0, -1.0), (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut m = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                m[k] = *mid.entry(key).or_insert_with(|| {
                    v.push(((v[a] + v[b]) / 2.0).normalize());
                    v.len() - 1
                });
            }
            next.push([f[0], m[0], m[2]]);
            next.push([f[1], m[1], m[0]]);
            next.push([f[2], m[2], m[1]]);
            next.push(m);
        }
        faces = next;
    }
    let vertices = v.into_iter().map(|d| Point3::from(d * radius)).collect();
    let mut mesh = TriangleMesh::new(vertices, faces).expect("icosphere is well formed");
    if mesh.signed_volume() < 0.0 {
        mesh.flip();
    }
    mesh.flag_manifold();
    mesh
}

/// Open-top room: floor and four walls with normals facing inward.
pub fn room(half_x: f64, half_y: f64, height: f64, cell: f64) -> TriangleMesh {
    let mut mesh = box_mesh(Point3::new(-half_x, -half_y, 0.0), Point3::new(half_x, half_y, height));
    // Drop the two ceiling triangles, then face inward.
    let keep: Vec<[usize; 3]> = (0..mesh.faces().len())
        .filter(|&f| mesh.face_normal(f).map(|n| n.z < 0.5).unwrap_or(true))
        .map(|f| mesh.faces()[f])
        .collect();
    mesh = TriangleMesh::new(mesh.vertices().to_vec(), keep).expect("subset of a valid mesh");
    mesh.flip();
    let mut refined = subdivide_to(&mesh, cell);
    refined.flag_manifold();
    refined
}

/// Splits faces until every edge is at most `max_edge` long.
pub fn subdivide_to(mesh: &TriangleMesh, max_edge: f64) -> TriangleMesh {
    let mut m = mesh.clone();
    loop {
        let longest = m
            .faces()
            .iter()
            .flat_map(|f| (0..3).map(move |k| (f[k], f[(k + 1) % 3])))
            .map(|(a, b)| (m.vertices()[a] - m.vertices()[b]).norm())
            .fold(0.0, f64::max);
        if longest <= max_edge {
            return m;
        }
        let mut vertices = m.vertices().to_vec();
        let mut mid: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut faces = Vec::with_capacity(m.faces().len() * 4);
        for f in m.faces() {
            let mut c = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                c[k] = *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    vertices.push(nalgebra::center(&vertices[a], &vertices[b]));
                    vertices.len() - 1
                });
            }
            faces.push([f[0], c[0], c[2]]);
            faces.push([f[1], c[1], c[0]]);
            faces.push([f[2], c[2], c[1]]);
            faces.push(c);
        }
        m = TriangleMesh::new(vertices, faces).expect("midpoint subdivision keeps faces valid");
    }
}

/// Parameters of the standard test scene: room, two parked cars and a
/// sphere crossing the sensor's path.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RoomSceneParams {
    pub scans: usize,
    pub n_azimuth: usize,
    pub n_elevation: usize,
    pub width: usize,
    pub height: usize,
    pub range_noise: f64,
}

impl Default for RoomSceneParams {
    fn default() -> Self {
        Self { scans: 5, n_azimuth: 720, n_elevation: 70, width: 640, height: 480, range_noise: 0.0 }
    }
}

pub fn room_scene(params: &RoomSceneParams) -> SyntheticScene {
    let noise = |seed: u64| Albedo::Noise { scale: 0.35, low: 0.15, high: 0.9, seed };
    let place = |mesh: &TriangleMesh, x: f64, y: f64, yaw: f64| {
        let t = RigidTransform::from_axis_angle(Vec3::z(), yaw, Vec3::new(x, y, 0.0));
        let vertices = mesh.vertices().iter().map(|p| t.apply(p)).collect();
        let mut m = TriangleMesh::new(vertices, mesh.faces().to_vec()).expect("rigid motion keeps faces valid");
        m.flag_manifold();
        m
    };
    let car = subdivide_to(&car_body(4.5, 1.8, 0.3, 1.5, 1.5), 0.5);
    let statics = vec![
        SceneObject { mesh: room(12.0, 8.0, 3.0, 1.0), albedo: noise(1) },
        SceneObject { mesh: place(&car, -3.0, 4.2, 0.25), albedo: noise(2) },
        SceneObject { mesh: place(&car, 5.0, -4.5, -0.15), albedo: noise(3) },
    ];
    let ball = sphere(0.6, 2);
    let n = params.scans.max(1);
    let movers = vec![MovingObject {
        object: SceneObject { mesh: ball, albedo: noise(4) },
        keyframes: vec![
            (0.0, RigidTransform::from_translation(Vec3::new(-6.0, -1.5, 0.8))),
            ((n - 1).max(1) as f64, RigidTransform::from_translation(Vec3::new(6.0, -1.5, 0.8))),
        ],
    }];
    let trajectory = (0..n)
        .map(|k| {
            let s = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 };
            RigidTransform::from_axis_angle(Vec3::z(), 0.2 * (s - 0.5), Vec3::new(-4.0 + 8.0 * s, 0.5, 1.7))
        })
        .collect();
    let lidar = LidarModel {
        n_azimuth: params.n_azimuth,
        n_elevation: params.n_elevation,
        elevation_min: (-30f64).to_radians(),
        elevation_max: 10f64.to_radians(),
        max_range: 60.0,
        range_noise: params.range_noise,
        seed: 17,
    };
    let f = 0.8 * params.width as f64;
    let intrinsics = Intrinsics { fx: f, fy: f, cx: (params.width as f64 - 1.0) / 2.0, cy: (params.height as f64 - 1.0) / 2.0 };
    let camera = CameraRig::forward_looking(intrinsics, params.width, params.height);
    SyntheticScene { statics, movers, trajectory, lidar, camera }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall_scene(albedo: f64) -> SyntheticScene {
        let wall = crate::mesh::grid_mesh(Point3::new(5.0, -50.0, -50.0), Vec3::y() * 100.0, Vec3::z() * 100.0, 1, 1);
        let lidar = LidarModel {
            n_azimuth: 1,
            n_elevation: 1,
            elevation_min: 0.0,
            elevation_max: 0.0,
            max_range: 100.0,
            range_noise: 0.0,
            seed: 0,
        };
        let k = Intrinsics { fx: 50.0, fy: 50.0, cx: 31.5, cy: 23.5 };
        SyntheticScene {
            statics: vec![SceneObject { mesh: wall, albedo: Albedo::Constant { value: albedo } }],
            movers: Vec::new(),
            trajectory: vec![RigidTransform::identity()],
            lidar,
            camera: CameraRig::forward_looking(k, 64, 48),
        }
    }

    #[test]
    fn single_ray_hits_wall_at_five() {
        let s = wall_scene(0.5);
        let scan = s.simulate_scan(0).unwrap();
        assert_eq!(scan.points.len(), 1);
        assert!((scan.points[0] - Point3::new(5.0, 0.0, 0.0)).norm() < 1e-9);
        assert_eq!(scan.moving, vec![false]);
    }

    #[test]
    fn empty_scene_has_no_returns_and_black_images() {
        let mut s = wall_scene(0.5);
        s.statics.clear();
        assert!(s.simulate_scan(0).unwrap().points.is_empty());
        assert!(s.view_at(0).unwrap().image.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_frame_wall_renders_its_albedo() {
        let s = wall_scene(0.5);
        let v = s.view_at(0).unwrap();
        assert!(v.image.data().iter().all(|&x| x == 0.5));
        let again = s.view_at(0).unwrap();
        assert_eq!(v.image, again.image);
    }

    #[test]
    fn bodies_are_closed() {
        for m in [car_body(4.5, 1.8, 0.3, 1.5, 1.5), sphere(0.6, 2)] {
            assert!(m.verify_manifold());
            assert_eq!(m.euler_characteristic(), 2);
            assert!(m.signed_volume() > 0.0);
        }
        let r = room(12.0, 8.0, 3.0, 1.0);
        assert!(r.verify_manifold());
    }

    #[test]
    fn noise_albedo_stays_in_range() {
        let a = Albedo::Noise { scale: 0.3, low: 0.2, high: 0.8, seed: 7 };
        for i in 0..1000 {
            let v = a.sample(&Point3::new(i as f64 * 0.137, (i * i) as f64 * 0.01, -(i as f64) * 0.3));
            assert!((0.2..=0.8).contains(&v));
        }
    }
}
