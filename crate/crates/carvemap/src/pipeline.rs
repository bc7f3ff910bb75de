//! Stage-by-stage pipeline driver with on-disk caches.
//!
//! Every stage writes its output to `<output>/cache/<stage>-<key>.*`, where
//! the key hashes the dataset fingerprint and the configuration of that
//! stage and all stages before it. A run with an unchanged prefix loads the
//! cached output instead of recomputing it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use carvemap_core::cars::{car_hulls, detect_cars, CarCluster};
use carvemap_core::carve::{carve, merge_car_hulls, CarveDiagnostics, CarveParams};
use carvemap_core::dst::{classify_point, BeamIndex, MotionLabel};
use carvemap_core::eval::ErrorReport;
use carvemap_core::ground::{segment_ground, GroundHeightMap};
use carvemap_core::morphology::build_moving_mask;
use carvemap_core::refine::{refine_with, RefineOutput};
use carvemap_core::registration::{align_scan, downsample, range_filter, AlignedScan, DownsampleParams, IcpReference};
use carvemap_core::texture::{PackedAtlas, TextureAtlas};
use carvemap_core::bvh::Bvh;
use carvemap_core::{CameraView, Point3, RigidTransform, ScanPoint, TriangleMesh};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, PipelineConfig};
use crate::io::{self, Dataset};
use crate::parallel::{parallel_map, Threaded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Registration,
    Ground,
    Motion,
    Cars,
    Carve,
    Refine,
    Texture,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Registration,
        Stage::Ground,
        Stage::Motion,
        Stage::Cars,
        Stage::Carve,
        Stage::Refine,
        Stage::Texture,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Registration => "registration",
            Stage::Ground => "ground-seg",
            Stage::Motion => "motion-dst",
            Stage::Cars => "car-detect",
            Stage::Carve => "carve",
            Stage::Refine => "refine",
            Stage::Texture => "texture",
            Stage::Eval => "eval",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        let aliases = [("ground", Stage::Ground), ("motion", Stage::Motion), ("dst", Stage::Motion), ("cars", Stage::Cars)];
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .or_else(|| aliases.iter().find(|(a, _)| *a == name).map(|(_, s)| *s))
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("stage is listed")
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage}: {message}")]
    Stage { stage: Stage, message: String },
    #[error("stage {stage}: {required} output missing")]
    Missing { stage: Stage, required: Stage },
}

impl PipelineError {
    fn stage(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError::Stage { stage, message: message.to_string() }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestSummary {
    pub scans: usize,
    pub frames: usize,
    pub points: Vec<usize>,
    pub dropped: usize,
    pub has_poses: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentInfo {
    pub iterations: usize,
    pub inlier_fraction: f64,
    pub mean_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    /// Range-filtered scans in the world frame.
    pub scans: Vec<AlignedScan>,
    /// Scan matching result per scan (`None` for the anchor scan and when
    /// dataset poses are used).
    pub alignments: Vec<Option<AlignmentInfo>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGround {
    pub ground: Vec<usize>,
    pub non_ground: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMotion {
    /// Downsampled non-ground points.
    pub samples: Vec<ScanPoint>,
    pub labels: Vec<MotionLabel>,
    /// Sample index of every non-ground point, in non-ground order.
    pub assignment: Vec<usize>,
    /// Downsampled ground points.
    pub ground_samples: Vec<ScanPoint>,
}

impl ScanMotion {
    /// Whether the `k`-th non-ground point belongs to a moving sample.
    pub fn point_moving(&self, k: usize) -> bool {
        self.labels[self.assignment[k]].moving
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cars {
    pub cars: Vec<CarCluster>,
    pub hulls: Vec<TriangleMesh>,
    /// Per scan, per sample: replaced by a car hull.
    pub removed: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Carved {
    pub mesh: TriangleMesh,
    pub diagnostics: CarveDiagnostics,
    pub input_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refined {
    pub mesh: TriangleMesh,
    pub skipped: bool,
    pub energy: Vec<f64>,
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Textured {
    pub atlas: PackedAtlas,
    pub vertex_colors: Option<Vec<f64>>,
    pub texels_touched: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub avg_m: f64,
    pub std_m: f64,
    pub n_points: usize,
}

impl From<&ErrorReport> for EvalReport {
    fn from(r: &ErrorReport) -> Self {
        EvalReport { avg_m: r.avg, std_m: r.std, n_points: r.n_points() }
    }
}

/// Outcome of one executed or cached stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRun {
    pub stage: Stage,
    pub cache_hit: bool,
    pub seconds: f64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Cheap identity of the dataset files: names, sizes and modification times.
fn dataset_fingerprint(root: &Path) -> String {
    let mut h = Sha256::new();
    h.update(root.to_string_lossy().as_bytes());
    let mut entries = Vec::new();
    for sub in ["", "scans", "images"] {
        let dir = root.join(sub);
        let Ok(rd) = std::fs::read_dir(&dir) else { continue };
        for e in rd.flatten() {
            let Ok(meta) = e.metadata() else { continue };
            if !meta.is_file() {
                continue;
            }
            let mtime = meta.modified().ok().and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok()).map(|d| d.as_nanos());
            entries.push(format!("{sub}/{}:{}:{:?}", e.file_name().to_string_lossy(), meta.len(), mtime));
        }
    }
    entries.sort();
    for e in entries {
        h.update(e.as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize())
}

/// A configured pipeline over one dataset and output directory.
pub struct Pipeline {
    config: PipelineConfig,
    keys: Vec<String>,
    dataset: Option<Dataset>,
}

fn section<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("configuration serializes")
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let reference = c.eval.reference.as_ref().map(|p| {
            let meta = std::fs::metadata(p).ok();
            format!("{}:{:?}:{:?}", p.display(), meta.as_ref().map(|m| m.len()), meta.and_then(|m| m.modified().ok()))
        });
        let sections = [
            dataset_fingerprint(&c.dataset),
            section(&c.registration),
            section(&c.ground),
            section(&(&c.downsample, &c.motion)),
            section(&c.cars),
            section(&c.carve),
            section(&c.refine),
            section(&c.texture),
            section(&reference),
        ];
        let mut h = Sha256::new();
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        let keys = sections
            .iter()
            .map(|s| {
                h.update(s.as_bytes());
                h.update(b"\n");
                hex(&h.clone().finalize()[..8])
            })
            .collect();
        Ok(Self { config, keys, dataset: None })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.config.output.join("cache")
    }

    fn cache_path(&self, stage: Stage) -> PathBuf {
        self.cache_dir().join(format!("{}-{}.json", stage.name(), self.keys[stage.index()]))
    }

    pub fn is_cached(&self, stage: Stage) -> bool {
        self.cache_path(stage).is_file()
    }

    fn load_cache<T: DeserializeOwned>(&self, stage: Stage) -> Result<Option<T>> {
        let path = self.cache_path(stage);
        if !path.is_file() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| PipelineError::stage(stage, format!("corrupt cache {}: {e}", path.display())))
    }

    fn store_cache<T: Serialize>(&self, stage: Stage, value: &T) -> Result<()> {
        let path = self.cache_path(stage);
        let bytes = serde_json::to_vec(value).map_err(|e| PipelineError::stage(stage, e))?;
        let tmp = path.with_extension("tmp");
        io::write_bytes(&tmp, &bytes).map_err(|e| PipelineError::stage(stage, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))
    }

    fn upstream<T: DeserializeOwned>(&self, stage: Stage, required: Stage) -> Result<T> {
        self.load_cache(required)?.ok_or(PipelineError::Missing { stage, required })
    }

    fn dataset(&mut self, stage: Stage) -> Result<&Dataset> {
        if self.dataset.is_none() {
            let d = io::load_dataset(&self.config.dataset).map_err(|e| PipelineError::stage(stage, e))?;
            self.dataset = Some(d);
        }
        Ok(self.dataset.as_ref().expect("dataset loaded"))
    }

    fn output(&self, name: &str) -> PathBuf {
        self.config.output.join(name)
    }

    /// Runs every stage in order, reusing caches.
    pub fn run(&mut self) -> Result<Vec<StageRun>> {
        let mut runs = Vec::new();
        for stage in Stage::ALL {
            runs.push(self.run_stage_cached(stage)?);
        }
        Ok(runs)
    }

    /// Runs `stage` from the cached outputs of its upstream stages; a cached
    /// output of `stage` itself is reused.
    pub fn run_stage_cached(&mut self, stage: Stage) -> Result<StageRun> {
        let start = Instant::now();
        let hit = self.is_cached(stage);
        if hit {
            log::info!("{stage}: cache hit");
        }
        match stage {
            Stage::Ingest => self.stage_ingest(hit)?,
            Stage::Registration => self.stage_registration(hit)?,
            Stage::Ground => self.stage_ground(hit)?,
            Stage::Motion => self.stage_motion(hit)?,
            Stage::Cars => self.stage_cars(hit)?,
            Stage::Carve => self.stage_carve(hit)?,
            Stage::Refine => self.stage_refine(hit)?,
            Stage::Texture => self.stage_texture(hit)?,
            Stage::Eval => self.stage_eval(hit)?,
        }
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{stage}: {seconds:.2} s");
        Ok(StageRun { stage, cache_hit: hit, seconds })
    }

    /// Loads the cached output of `stage` or computes and stores it.
    fn cached<T, F>(&mut self, stage: Stage, hit: bool, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce(&mut Self) -> Result<T>,
    {
        if hit {
            if let Some(v) = self.load_cache(stage)? {
                return Ok(v);
            }
        }
        let v = compute(self)?;
        self.store_cache(stage, &v)?;
        Ok(v)
    }

    fn record(&self, stage: Stage, value: serde_json::Value) -> Result<()> {
        let path = self.output("diagnostics.json");
        let mut all: BTreeMap<String, serde_json::Value> = std::fs::read(&path)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        all.insert(stage.name().to_string(), value);
        let text = serde_json::to_string_pretty(&all).expect("diagnostics serialize");
        io::write_bytes(&path, text.as_bytes()).map_err(|e| PipelineError::stage(stage, e))
    }

    fn write(&self, stage: Stage, name: &str, bytes: &[u8]) -> Result<()> {
        io::write_bytes(&self.output(name), bytes).map_err(|e| PipelineError::stage(stage, e))
    }

    fn stage_ingest(&mut self, hit: bool) -> Result<()> {
        let stage = Stage::Ingest;
        let s: IngestSummary = self.cached(stage, hit, |p| {
            let d = p.dataset(stage)?;
            Ok(IngestSummary {
                scans: d.scans.len(),
                frames: d.frames.len(),
                points: d.scans.iter().map(Vec::len).collect(),
                dropped: d.dropped,
                has_poses: d.poses.is_some(),
            })
        })?;
        log::info!("{stage}: {} scans, {} frames, {} points dropped", s.scans, s.frames, s.dropped);
        self.record(stage, serde_json::to_value(&s).expect("serializes"))
    }

    fn stage_registration(&mut self, hit: bool) -> Result<()> {
        let stage = Stage::Registration;
        let _: IngestSummary = self.upstream(stage, Stage::Ingest)?;
        let r: Registration = self.cached(stage, hit, |p| {
            let config = p.config.registration.clone();
            let d = p.dataset(stage)?;
            register(d, &config).map_err(|m| PipelineError::stage(stage, m))
        })?;
        let poses: Vec<RigidTransform> = r.scans.iter().map(|s| s.pose).collect();
        self.write(stage, "poses_estimated.txt", io::format_poses(&poses).as_bytes())?;
        let points: usize = r.scans.iter().map(|s| s.points.len()).sum();
        log::info!("{stage}: {} scans, {points} points within range", r.scans.len());
        self.record(stage, serde_json::json!({ "points": points, "alignments": r.alignments }))
    }

    fn stage_ground(&mut self, hit: bool) -> Result<()> {
        let stage = Stage::Ground;
        let reg: Registration = self.upstream(stage, Stage::Registration)?;
        let g: Vec<ScanGround> = self.cached(stage, hit, |p| {
            let params = p.config.ground.params();
            let threads = p.config.threads;
            parallel_map(threads, reg.scans.len(), |k| {
                let s = &reg.scans[k];
                segment_ground(&s.points, &s.sensor_center, &params)
                    .map(|seg| ScanGround { ground: seg.ground, non_ground: seg.non_ground })
                    .map_err(|e| PipelineError::stage(stage, format!("scan {k}: {e}")))
            })
            .into_iter()
            .collect()
        })?;
        let ground: usize = g.iter().map(|s| s.ground.len()).sum();
        let non_ground: usize = g.iter().map(|s| s.non_ground.len()).sum();
        log::info!("{stage}: {ground} ground, {non_ground} non-ground points");
        self.record(stage, serde_json::json!({ "ground": ground, "non_ground": non_ground }))
    }

    fn stage_motion(&mut self, hit: bool) -> Result<()> {
        let stage = Stage::Motion;
        let reg: Registration = self.upstream(stage, Stage::Registration)?;
        let ground: Vec<ScanGround> = self.upstream(stage, Stage::Ground)?;
        let m: Vec<ScanMotion> = self.cached(stage, hit, |p| {
            let c = &p.config;
            let ds = DownsampleParams { fraction: c.downsample.fraction, max_voxel: c.downsample.max_voxel, band: c.downsample.band };
            detect_motion(&reg.scans, &ground, &ds, &c.motion.dst(), c.threads).map_err(|e| PipelineError::stage(stage, e))
        })?;
        let mut csv = String::from("scan,x,y,z,conflict,moving\n");
        for (k, s) in m.iter().enumerate() {
            for (sp, l) in s.samples.iter().zip(&s.labels) {
                let p = sp.position;
                csv.push_str(&format!("{k},{},{},{},{},{}\n", p.x, p.y, p.z, l.conflict, u8::from(l.moving)));
            }
        }
        self.write(stage, "dst.csv", csv.as_bytes())?;
        let samples: usize = m.iter().map(|s| s.samples.len()).sum();
        let moving: usize = m.iter().map(|s| s.labels.iter().filter(|l| l.moving).count()).sum();
        log::info!("{stage}: {moving} of {samples} samples moving");
        self.record(stage, serde_json::json!({ "samples": samples, "moving": moving }))
    }

    fn stage_cars(&mut self, hit: bool) -> Result<()> {
        let stage = Stage::Cars;
        let reg: Registration = self.upstream(stage, Stage::Registration)?;
        let ground: Vec<ScanGround> = self.upstream(stage, Stage::Ground)?;
        let motion: Vec<ScanMotion> = self.upstream(stage, Stage::Motion)?;
        let cars: Cars = self.cached(stage, hit, |p| {
            if !p.config.cars.enabled {
                log::info!("{stage}: disabled");
                let removed = motion.iter().map(|m| vec![false; m.samples.len()]).collect();
                return Ok(Cars { cars: Vec::new(), hulls: Vec::new(), removed });
            }
            find_cars(&reg.scans, &ground, &motion, p.config.ground.cell, &p.config.cars.params())
                .map_err(|e| PipelineError::stage(stage, e))
        })?;
        log::info!("{stage}: {} cars, {} hulls", cars.cars.len(), cars.hulls.len());
        let summary: Vec<_> = cars
            .cars
            .iter()
            .map(|c| serde_json::json!({ "points": c.points.len(), "length": c.bounds.length, "width": c.bounds.width, "center": c.bounds.center }))
            .collect();
        self.record(stage, serde_json::json!({ "cars": summary, "enabled": self.config.cars.enabled }))
    }

    fn stage_carve(&mut self, hit: bool) -> Result<()> {
        let stage = Stage::Carve;
        let motion: Vec<ScanMotion> = self.upstream(stage, Stage::Motion)?;
        let cars: Cars = self.upstream(stage, Stage::Cars)?;
        let c: Carved = self.cached(stage, hit, |p| {
            let params = CarveParams { min_votes: p.config.carve.min_votes };
            carve_static(&motion, &cars, &params).map_err(|e| PipelineError::stage(stage, e))
        })?;
        io::write_ply(&self.output("carve.ply"), &c.mesh, None).map_err(|e| PipelineError::stage(stage, e))?;
        log::info!(
            "{stage}: {} points, {} tetrahedra, {} faces",
            c.input_points,
            c.diagnostics.tetrahedra,
            c.mesh.faces().len()
        );
        self.record(stage, serde_json::json!({ "input_points": c.input_points, "faces": c.mesh.faces().len(), "vertices": c.mesh.vertices().len(), "diagnostics": c.diagnostics }))
    }

    fn views(&mut self, stage: Stage, reg: &Registration, ground: &[ScanGround], motion: &[ScanMotion]) -> Result<Vec<CameraView>> {
        let masks = self.config.motion.masks();
        let threads = self.config.threads;
        let d = self.dataset(stage)?;
        build_views(d, reg, ground, motion, &masks, threads).map_err(|e| PipelineError::stage(stage, e))
    }

    fn stage_refine(&mut self, hit: bool) -> Result<()> {
        let stage = Stage::Refine;
        let carved: Carved = self.upstream(stage, Stage::Carve)?;
        let reg: Registration = self.upstream(stage, Stage::Registration)?;
        let ground: Vec<ScanGround> = self.upstream(stage, Stage::Ground)?;
        let motion: Vec<ScanMotion> = self.upstream(stage, Stage::Motion)?;
        let r: Refined = self.cached(stage, hit, |p| {
            if !p.config.refine.enabled {
                log::info!("{stage}: disabled, passing the carved mesh through");
                return Ok(Refined { mesh: carved.mesh.clone(), skipped: true, energy: Vec::new(), objective: Vec::new(), iterations: 0, aborted: false });
            }
            let views = p.views(stage, &reg, &ground, &motion)?;
            let out: RefineOutput = refine_with(&carved.mesh, &views, &p.config.refine.params(), &Threaded { threads: p.config.threads })
                .map_err(|e| PipelineError::stage(stage, e))?;
            Ok(Refined { mesh: out.mesh, skipped: false, energy: out.energy, objective: out.objective, iterations: out.iterations, aborted: out.aborted })
        })?;
        io::write_ply(&self.output("mesh.ply"), &r.mesh, None).map_err(|e| PipelineError::stage(stage, e))?;
        let mut csv = String::from("iteration,e_photo,objective\n");
        for (i, (e, o)) in r.energy.iter().zip(&r.objective).enumerate() {
            csv.push_str(&format!("{i},{e},{o}\n"));
        }
        self.write(stage, "energy.csv", csv.as_bytes())?;
        if let (Some(first), Some(last)) = (r.energy.first(), r.energy.last()) {
            log::info!("{stage}: {} iterations, E_photo {first:.6} -> {last:.6}", r.iterations);
        }
        if r.aborted {
            log::warn!("{stage}: stopped early on a degenerate face");
        }
        self.record(stage, serde_json::json!({ "skipped": r.skipped, "iterations": r.iterations, "aborted": r.aborted, "energy": r.energy }))
    }

    fn stage_texture(&mut self, hit: bool) -> Result<()> {
        let stage = Stage::Texture;
        let refined: Refined = self.upstream(stage, Stage::Refine)?;
        let reg: Registration = self.upstream(stage, Stage::Registration)?;
        let ground: Vec<ScanGround> = self.upstream(stage, Stage::Ground)?;
        let motion: Vec<ScanMotion> = self.upstream(stage, Stage::Motion)?;
        let t: Textured = self.cached(stage, hit, |p| {
            let views = p.views(stage, &reg, &ground, &motion)?;
            let c = &p.config.texture;
            let mut atlas = TextureAtlas::new(&refined.mesh, c.resolution, c.alpha).map_err(|e| PipelineError::stage(stage, e))?;
            let mut touched = 0;
            for v in &views {
                touched += atlas.texture_pass(&refined.mesh, v).map_err(|e| PipelineError::stage(stage, e))?;
            }
            let vertex_colors = c.export_vertex_colors.then(|| atlas.vertex_colors(&refined.mesh));
            Ok(Textured { atlas: atlas.finalize(), vertex_colors, texels_touched: touched })
        })?;
        io::write_textured_obj(&self.config.output, "textured", &refined.mesh, &t.atlas).map_err(|e| PipelineError::stage(stage, e))?;
        if let Some(colors) = &t.vertex_colors {
            io::write_ply(&self.output("mesh_colors.ply"), &refined.mesh, Some(colors)).map_err(|e| PipelineError::stage(stage, e))?;
        }
        let flagged = t.atlas.flagged_fraction();
        log::info!("{stage}: {} texel updates, {:.1}% texels unseen", t.texels_touched, 100.0 * flagged);
        self.record(stage, serde_json::json!({ "texel_updates": t.texels_touched, "unseen_fraction": flagged }))
    }

    fn stage_eval(&mut self, hit: bool) -> Result<()> {
        let stage = Stage::Eval;
        let refined: Refined = self.upstream(stage, Stage::Refine)?;
        let Some(reference) = self.config.eval.reference.clone() else {
            log::info!("{stage}: no reference cloud configured, skipped");
            return Ok(());
        };
        let threads = self.config.threads;
        let report: EvalReport = self.cached(stage, hit, |_| {
            let cloud = io::read_cloud(&reference).map_err(|e| PipelineError::stage(stage, e))?;
            let r = evaluate(&refined.mesh, &cloud, threads).map_err(|e| PipelineError::stage(stage, e))?;
            Ok(EvalReport::from(&r))
        })?;
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        self.write(stage, "report.json", text.as_bytes())?;
        log::info!("{stage}: avg {:.4} m, std {:.4} m over {} points", report.avg_m, report.std_m, report.n_points);
        Ok(())
    }
}

fn subsample(points: &[Point3], n: usize) -> Vec<Point3> {
    if n == 0 || points.len() <= n {
        return points.to_vec();
    }
    (0..n).map(|i| points[i * points.len() / n]).collect()
}

/// Sensor poses from the dataset or by chaining scan-to-scan alignments.
pub fn register(d: &Dataset, c: &crate::config::RegistrationConfig) -> std::result::Result<Registration, String> {
    let n = d.scans.len();
    let in_range = |raw: &[Point3]| -> Vec<Point3> { raw.iter().filter(|p| p.coords.norm() <= c.max_range).copied().collect() };
    let mut poses: Vec<RigidTransform> = Vec::with_capacity(n);
    let mut alignments = vec![None; n];
    if c.use_gt_poses {
        poses = d.poses.clone().ok_or("use_gt_poses is set but the dataset has no poses.txt")?;
    } else {
        // The first scan anchors the map; with dataset poses present the
        // map is expressed in their world frame.
        poses.push(d.poses.as_ref().map_or(RigidTransform::identity(), |p| p[0]));
        let icp = c.icp();
        let mut coarse = icp;
        coarse.max_correspondence *= 4.0;
        for k in 1..n {
            let previous = poses[k - 1];
            let reference_points: Vec<Point3> = in_range(&d.scans[k - 1]).iter().map(|p| previous.apply(p)).collect();
            let reference = IcpReference::new(reference_points, icp.normal_neighbors);
            let source = subsample(&in_range(&d.scans[k]), c.icp_source_points);
            let initial = if k >= 2 { previous.compose(&poses[k - 2].inverse().compose(&previous)) } else { previous };
            let rough = align_scan(&source, &reference, initial, &coarse).map_err(|e| format!("scan {k} (coarse): {e}"))?;
            let fine = align_scan(&source, &reference, rough.transform, &icp).map_err(|e| format!("scan {k}: {e}"))?;
            alignments[k] = Some(AlignmentInfo {
                iterations: rough.iterations + fine.iterations,
                inlier_fraction: fine.inlier_fraction,
                mean_residual: fine.mean_residual,
            });
            poses.push(fine.transform);
        }
    }
    let scans = d
        .scans
        .iter()
        .zip(&poses)
        .enumerate()
        .map(|(k, (raw, pose))| range_filter(&AlignedScan::from_sensor_frame(k, raw, *pose), c.max_range))
        .collect();
    Ok(Registration { scans, alignments })
}

/// Downsamples the non-ground points of each scan and labels the samples
/// against the full-resolution beams of the neighboring scans.
pub fn detect_motion(
    scans: &[AlignedScan],
    ground: &[ScanGround],
    downsample_params: &DownsampleParams,
    dst: &carvemap_core::dst::DstParams,
    threads: usize,
) -> carvemap_core::Result<Vec<ScanMotion>> {
    let beams: Vec<BeamIndex> = parallel_map(threads, scans.len(), |k| BeamIndex::new(&scans[k], dst.angular_tolerance));
    let mut out = Vec::with_capacity(scans.len());
    for (k, (s, g)) in scans.iter().zip(ground).enumerate() {
        let pick = |idx: &[usize]| -> Vec<ScanPoint> {
            idx.iter().map(|&i| ScanPoint { position: s.points[i], sensor: s.sensor_center, scan: k }).collect()
        };
        let non_ground = downsample(&pick(&g.non_ground), downsample_params)?;
        let ground_samples = downsample(&pick(&g.ground), downsample_params)?.points;
        let lo = k.saturating_sub(dst.window);
        let hi = (k + dst.window).min(scans.len() - 1);
        let others: Vec<&BeamIndex> = (lo..=hi).filter(|&i| i != k).map(|i| &beams[i]).collect();
        let labels = parallel_map(threads, non_ground.points.len(), |i| classify_point(&non_ground.points[i].position, &others, dst));
        out.push(ScanMotion { samples: non_ground.points, labels, assignment: non_ground.assignment, ground_samples });
    }
    Ok(out)
}

/// Car detection on the full-resolution static non-ground points of all
/// scans; marks the samples whose points were taken by a car.
pub fn find_cars(
    scans: &[AlignedScan],
    ground: &[ScanGround],
    motion: &[ScanMotion],
    ground_cell: f64,
    params: &carvemap_core::cars::CarParams,
) -> carvemap_core::Result<Cars> {
    let ground_points: Vec<Point3> =
        scans.iter().zip(ground).flat_map(|(s, g)| g.ground.iter().map(move |&i| s.points[i])).collect();
    let height = GroundHeightMap::new(&ground_points, ground_cell);
    let mut points = Vec::new();
    let mut origin = Vec::new();
    for (k, (s, (g, m))) in scans.iter().zip(ground.iter().zip(motion)).enumerate() {
        for (j, &i) in g.non_ground.iter().enumerate() {
            if !m.point_moving(j) {
                points.push(s.points[i]);
                origin.push((k, m.assignment[j]));
            }
        }
    }
    let detection = detect_cars(&points, &height, params)?;
    let (hulls, skipped) = car_hulls(&detection.cars);
    if !skipped.is_empty() {
        log::warn!("{} car clusters had degenerate hulls", skipped.len());
    }
    let mut removed: Vec<Vec<bool>> = motion.iter().map(|m| vec![false; m.samples.len()]).collect();
    for (c, car) in detection.cars.iter().enumerate() {
        if skipped.contains(&c) {
            continue;
        }
        for &i in &car.members {
            let (k, sample) = origin[i];
            removed[k][sample] = true;
        }
    }
    let cars = detection.cars.into_iter().enumerate().filter(|(c, _)| !skipped.contains(c)).map(|(_, car)| car).collect();
    Ok(Cars { cars, hulls, removed })
}

/// Carves the static samples (ground included, car samples excluded) and
/// adds the car hulls.
pub fn carve_static(motion: &[ScanMotion], cars: &Cars, params: &CarveParams) -> carvemap_core::Result<Carved> {
    let mut points = Vec::new();
    for (m, removed) in motion.iter().zip(&cars.removed) {
        for ((sp, l), &r) in m.samples.iter().zip(&m.labels).zip(removed) {
            if !l.moving && !r {
                points.push(*sp);
            }
        }
        points.extend_from_slice(&m.ground_samples);
    }
    let out = carve(&points, params)?;
    Ok(Carved { mesh: merge_car_hulls(&out.mesh, &cars.hulls), diagnostics: out.diagnostics, input_points: points.len() })
}

/// Camera views with moving-object masks from the full-resolution points
/// of the same scan.
pub fn build_views(
    d: &Dataset,
    reg: &Registration,
    ground: &[ScanGround],
    motion: &[ScanMotion],
    masks: &carvemap_core::morphology::MaskParams,
    threads: usize,
) -> carvemap_core::Result<Vec<CameraView>> {
    parallel_map(threads, d.frames.len(), |k| {
        let cal = &d.calibration;
        let pose = cal.lidar_to_camera.compose(&reg.scans[k].pose.inverse());
        let mut view = CameraView::unmasked(cal.intrinsics, pose, d.frames[k].image.clone())?;
        let moving: Vec<Point3> = ground[k]
            .non_ground
            .iter()
            .enumerate()
            .filter(|(j, _)| motion[k].point_moving(*j))
            .map(|(_, &i)| reg.scans[k].points[i])
            .collect();
        view.moving_mask = build_moving_mask(&view, &moving, masks);
        Ok(view)
    })
    .into_iter()
    .collect()
}

/// Mesh-to-cloud error with the queries spread over worker threads.
pub fn evaluate(mesh: &TriangleMesh, cloud: &[Point3], threads: usize) -> carvemap_core::Result<ErrorReport> {
    if mesh.faces().is_empty() {
        return Err(carvemap_core::Error::EmptyMesh);
    }
    let bvh = Bvh::new(mesh);
    let distances = parallel_map(threads, cloud.len(), |i| bvh.nearest(&cloud[i]).map_or(f64::INFINITY, |(d, _)| d));
    ErrorReport::from_distances(distances)
}
