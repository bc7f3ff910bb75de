#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use carvemap::{synth, PipelineConfig};
use carvemap_core::scene::{room_scene, RoomSceneParams};

/// Three short sweeps of the room scene with 160×120 images; the full
/// pipeline runs on it in about a second.
pub fn small_room() -> RoomSceneParams {
    RoomSceneParams { scans: 3, n_azimuth: 360, n_elevation: 32, width: 160, height: 120, range_noise: 0.0 }
}

/// Simulates the small room into `root/data`.
pub fn write_small_room(root: &Path) -> PathBuf {
    let scene = room_scene(&small_room());
    let data = synth::simulate(&scene).unwrap();
    let dir = root.join("data");
    synth::write_synthetic(&dir, &scene, &data).unwrap();
    dir
}

pub fn config(root: &Path, output: &str) -> PipelineConfig {
    let mut c = PipelineConfig::new(root.join("data"), root.join(output));
    c.eval.reference = Some(root.join("data/reference.ply"));
    c
}

/// Every file under `dir` except the stage caches, keyed by relative path.
pub fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap().flatten() {
        let p = e.path();
        if p.is_file() {
            out.insert(e.file_name().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}
