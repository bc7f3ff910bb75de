//! Synthetic scene descriptions and ground-truthed dataset generation.
//!
//! A scene file is JSON. Meshes are OBJ paths relative to the scene file;
//! poses are 12 row-major floats (object → world, sensor → world):
//!
//! ```json
//! {
//!   "statics": [{ "mesh": "room.obj", "albedo": { "kind": "checker", "size": 0.5, "low": 0.2, "high": 0.8 } }],
//!   "movers": [{ "mesh": "ball.obj", "albedo": { "kind": "constant", "value": 0.6 },
//!                "keyframes": [{ "time": 0, "pose": [1,0,0,0, 0,1,0,0, 0,0,1,0] }] }],
//!   "timesteps": 5,
//!   "trajectory": [{ "time": 0, "pose": [...] }, { "time": 4, "pose": [...] }],
//!   "lidar": { "n_azimuth": 720, "n_elevation": 64, "elevation_min": -0.5, "elevation_max": 0.17,
//!              "max_range": 60, "range_noise": 0, "seed": 1 },
//!   "camera": { "intrinsics": { "fx": 500, "fy": 500, "cx": 319.5, "cy": 239.5 }, "width": 640, "height": 480 }
//! }
//! ```
//!
//! `{ "preset": "room" }` (optionally with `"room": { ... }` overrides)
//! selects the built-in room scene instead.

use std::path::{Path, PathBuf};

use carvemap_core::scene::{
    room_scene, Albedo, CameraRig, LidarModel, MovingObject, RoomSceneParams, SceneObject, SyntheticScene,
};
use carvemap_core::{Intrinsics, Point3, RigidTransform};
use serde::{Deserialize, Serialize};

use crate::io::{self, Calibration, Dataset, Frame, IoError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub time: f64,
    pub pose: [f64; 12],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub mesh: PathBuf,
    pub albedo: Albedo,
    #[serde(default)]
    pub keyframes: Vec<Keyframe>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    /// Sensor → camera; a camera looking along the sensor's +x axis when absent.
    #[serde(default)]
    pub lidar_to_camera: Option<[f64; 12]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub room: Option<RoomSceneParams>,
    #[serde(default)]
    pub statics: Vec<ObjectSpec>,
    #[serde(default)]
    pub movers: Vec<ObjectSpec>,
    #[serde(default)]
    pub timesteps: usize,
    #[serde(default)]
    pub trajectory: Vec<Keyframe>,
    #[serde(default)]
    pub lidar: Option<LidarModel>,
    #[serde(default)]
    pub camera: Option<CameraSpec>,
}

fn pose(path: &Path, values: &[f64; 12]) -> Result<RigidTransform> {
    RigidTransform::from_row_major(values)
        .map_err(|e| IoError::Format { path: path.to_path_buf(), message: format!("pose: {e}") })
}

fn keyframes(path: &Path, k: &[Keyframe]) -> Result<Vec<(f64, RigidTransform)>> {
    let frames = k.iter().map(|f| Ok((f.time, pose(path, &f.pose)?))).collect::<Result<Vec<_>>>()?;
    if frames.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(IoError::Format { path: path.to_path_buf(), message: "keyframe times must increase".into() });
    }
    Ok(frames)
}

pub fn load_scene(path: &Path) -> Result<SyntheticScene> {
    let text = io::read_to_string(path)?;
    let spec: SceneFile =
        serde_json::from_str(&text).map_err(|e| IoError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    scene_from_spec(path, &spec)
}

pub fn scene_from_spec(path: &Path, spec: &SceneFile) -> Result<SyntheticScene> {
    let bad = |message: &str| IoError::Format { path: path.to_path_buf(), message: message.to_string() };
    match spec.preset.as_deref() {
        Some("room") => return Ok(room_scene(&spec.room.unwrap_or_default())),
        Some(other) => return Err(bad(&format!("unknown preset {other:?}"))),
        None => {}
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let object = |o: &ObjectSpec| -> Result<SceneObject> {
        let mut mesh = io::read_obj(&base.join(&o.mesh))?;
        mesh.flag_manifold();
        Ok(SceneObject { mesh, albedo: o.albedo.clone() })
    };
    let statics = spec.statics.iter().map(object).collect::<Result<Vec<_>>>()?;
    let movers = spec
        .movers
        .iter()
        .map(|o| Ok(MovingObject { object: object(o)?, keyframes: keyframes(path, &o.keyframes)? }))
        .collect::<Result<Vec<_>>>()?;
    if spec.timesteps == 0 {
        return Err(bad("timesteps must be positive"));
    }
    if spec.trajectory.is_empty() {
        return Err(bad("trajectory needs at least one keyframe"));
    }
    // The sensor path reuses the keyframe interpolation of moving objects.
    let path_object = MovingObject { object: SceneObject { mesh: Default::default(), albedo: Albedo::Constant { value: 0.0 } }, keyframes: keyframes(path, &spec.trajectory)? };
    let trajectory = (0..spec.timesteps).map(|t| path_object.pose_at(t as f64)).collect();
    let lidar = spec.lidar.ok_or_else(|| bad("missing lidar"))?;
    let cam = spec.camera.as_ref().ok_or_else(|| bad("missing camera"))?;
    let mut camera = CameraRig::forward_looking(cam.intrinsics, cam.width, cam.height);
    if let Some(t) = &cam.lidar_to_camera {
        camera.lidar_to_camera = pose(path, t)?;
    }
    Ok(SyntheticScene { statics, movers, trajectory, lidar, camera })
}

/// Simulated dataset together with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    /// Per scan, per point: whether the return hit a moving object.
    pub labels: Vec<Vec<bool>>,
    /// Noiseless static returns of all scans in the world frame.
    pub reference: Vec<Point3>,
}

pub fn simulate(scene: &SyntheticScene) -> Result<SyntheticDataset> {
    let mut noiseless = scene.clone();
    noiseless.lidar.range_noise = 0.0;
    let mut scans = Vec::new();
    let mut labels = Vec::new();
    let mut frames = Vec::new();
    let mut reference = Vec::new();
    for t in 0..scene.timesteps() {
        let scan = scene.simulate_scan(t)?;
        let clean = if scene.lidar.range_noise > 0.0 { noiseless.simulate_scan(t)? } else { scan.clone() };
        reference.extend(clean.world.iter().zip(&clean.moving).filter(|(_, m)| !**m).map(|(p, _)| *p));
        scans.push(scan.points);
        labels.push(scan.moving);
        frames.push(Frame { image: scene.view_at(t)?.image, timestamp: t as f64 });
    }
    let calibration = Calibration { intrinsics: scene.camera.intrinsics, lidar_to_camera: scene.camera.lidar_to_camera };
    let dataset = Dataset { scans, frames, calibration, poses: Some(scene.trajectory.clone()), dropped: 0 };
    Ok(SyntheticDataset { dataset, labels, reference })
}

/// Writes the dataset layout plus `gt_mesh.ply`, `reference.ply` and
/// `labels/NNNNNN.txt` (one 0/1 per return).
pub fn write_synthetic(root: &Path, scene: &SyntheticScene, data: &SyntheticDataset) -> Result<()> {
    io::write_dataset(root, &data.dataset)?;
    io::write_ply(&root.join("gt_mesh.ply"), &scene.static_mesh(), None)?;
    io::write_cloud_ply(&root.join("reference.ply"), &data.reference)?;
    for (k, l) in data.labels.iter().enumerate() {
        let text: String = l.iter().map(|&m| if m { "1\n" } else { "0\n" }).collect();
        io::write_bytes(&root.join("labels").join(format!("{k:06}.txt")), text.as_bytes())?;
    }
    Ok(())
}

pub fn read_labels(root: &Path, scans: usize) -> Result<Vec<Vec<bool>>> {
    (0..scans)
        .map(|k| {
            let path = root.join("labels").join(format!("{k:06}.txt"));
            io::read_to_string(&path)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| match l.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(IoError::Format { path: path.clone(), message: format!("bad label {other:?}") }),
                })
                .collect()
        })
        .collect()
}
