//! Pipeline configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use carvemap_core::cars::CarParams;
use carvemap_core::carve::CarveParams;
use carvemap_core::dst::DstParams;
use carvemap_core::ground::GroundParams;
use carvemap_core::morphology::MaskParams;
use carvemap_core::refine::RefineConfig;
use carvemap_core::registration::{DownsampleParams, IcpParams};
use serde::{Deserialize, Serialize};

/// Annotated configuration with every default spelled out.
pub const TEMPLATE: &str = include_str!("../config/default.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    pub max_range: f64,
    pub use_gt_poses: bool,
    pub icp_max_iterations: usize,
    pub icp_tolerance: f64,
    pub icp_max_correspondence: f64,
    pub icp_min_inlier_fraction: f64,
    pub icp_normal_neighbors: usize,
    /// Source points per scan fed to the aligner (0 keeps all).
    pub icp_source_points: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        let icp = IcpParams::default();
        Self {
            max_range: carvemap_core::registration::DEFAULT_MAX_RANGE,
            use_gt_poses: false,
            icp_max_iterations: icp.max_iterations,
            icp_tolerance: icp.tolerance,
            icp_max_correspondence: icp.max_correspondence,
            icp_min_inlier_fraction: icp.min_inlier_fraction,
            icp_normal_neighbors: icp.normal_neighbors,
            icp_source_points: 5000,
        }
    }
}

impl RegistrationConfig {
    pub fn icp(&self) -> IcpParams {
        IcpParams {
            max_iterations: self.icp_max_iterations,
            tolerance: self.icp_tolerance,
            max_correspondence: self.icp_max_correspondence,
            min_inlier_fraction: self.icp_min_inlier_fraction,
            normal_neighbors: self.icp_normal_neighbors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownsampleConfig {
    pub fraction: f64,
    pub max_voxel: f64,
    pub band: f64,
}

impl Default for DownsampleConfig {
    fn default() -> Self {
        let d = DownsampleParams::default();
        Self { fraction: d.fraction, max_voxel: d.max_voxel, band: d.band }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundConfig {
    pub cell: f64,
    pub max_step: f64,
    pub band: f64,
    pub seed_radius: f64,
}

impl GroundConfig {
    pub fn params(&self) -> GroundParams {
        GroundParams { cell: self.cell, max_step: self.max_step, band: self.band, seed_radius: self.seed_radius }
    }
}

impl Default for GroundConfig {
    fn default() -> Self {
        let g = GroundParams::default();
        Self { cell: g.cell, max_step: g.max_step, band: g.band, seed_radius: 6.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    pub lambda: f64,
    pub range_tolerance: f64,
    pub angular_tolerance_deg: f64,
    pub window: usize,
    pub conflict_threshold: f64,
    pub saturation: f64,
    pub mask_box: usize,
    pub mask_dilate: usize,
    pub mask_erode: usize,
}

impl Default for MotionConfig {
    fn default() -> Self {
        let d = DstParams::default();
        let m = MaskParams::default();
        Self {
            lambda: d.lambda,
            range_tolerance: d.range_tolerance,
            angular_tolerance_deg: 0.18,
            window: d.window,
            conflict_threshold: d.conflict_threshold,
            saturation: d.saturation,
            mask_box: m.box_size,
            mask_dilate: m.dilate_radius,
            mask_erode: m.erode_radius,
        }
    }
}

impl MotionConfig {
    pub fn dst(&self) -> DstParams {
        DstParams {
            lambda: self.lambda,
            range_tolerance: self.range_tolerance,
            angular_tolerance: self.angular_tolerance_deg.to_radians(),
            window: self.window,
            conflict_threshold: self.conflict_threshold,
            saturation: self.saturation,
        }
    }

    pub fn masks(&self) -> MaskParams {
        MaskParams { box_size: self.mask_box, dilate_radius: self.mask_dilate, erode_radius: self.mask_erode }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarsConfig {
    pub enabled: bool,
    pub cell: f64,
    pub max_height: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub ramp_angle_deg: f64,
    pub flat_angle_deg: f64,
}

impl Default for CarsConfig {
    fn default() -> Self {
        let c = CarParams::default();
        Self {
            enabled: true,
            cell: c.cell,
            max_height: c.max_height,
            radius_min: c.radius_min,
            radius_max: c.radius_max,
            ratio_min: c.ratio_min,
            ratio_max: c.ratio_max,
            ramp_angle_deg: 30.0,
            flat_angle_deg: 60.0,
        }
    }
}

impl CarsConfig {
    pub fn params(&self) -> CarParams {
        CarParams {
            cell: self.cell,
            max_height: self.max_height,
            radius_min: self.radius_min,
            radius_max: self.radius_max,
            ratio_min: self.ratio_min,
            ratio_max: self.ratio_max,
            ramp_angle: self.ramp_angle_deg.to_radians(),
            flat_angle: self.flat_angle_deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarveConfig {
    pub min_votes: u32,
}

impl Default for CarveConfig {
    fn default() -> Self {
        Self { min_votes: CarveParams::default().min_votes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineSection {
    pub enabled: bool,
    pub iterations: usize,
    pub patch_half_width: usize,
    pub step: f64,
    pub smoothing: f64,
    pub pairs: usize,
    pub grazing: f64,
    pub visibility_tolerance: f64,
}

impl Default for RefineSection {
    fn default() -> Self {
        let r = RefineConfig::default();
        Self {
            enabled: true,
            iterations: r.iterations,
            patch_half_width: r.patch_half_width,
            step: r.step,
            smoothing: r.smoothing,
            pairs: r.pairs,
            grazing: r.grazing,
            visibility_tolerance: r.visibility_tolerance,
        }
    }
}

impl RefineSection {
    pub fn params(&self) -> RefineConfig {
        RefineConfig {
            patch_half_width: self.patch_half_width,
            step: self.step,
            iterations: self.iterations,
            smoothing: self.smoothing,
            pairs: self.pairs,
            grazing: self.grazing,
            visibility_tolerance: self.visibility_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureConfig {
    pub resolution: usize,
    pub alpha: i32,
    pub export_vertex_colors: bool,
}

impl Default for TextureConfig {
    fn default() -> Self {
        use carvemap_core::texture::{DEFAULT_ALPHA, DEFAULT_RESOLUTION};
        Self { resolution: DEFAULT_RESOLUTION, alpha: DEFAULT_ALPHA, export_vertex_colors: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub registration: RegistrationConfig,
    #[serde(default)]
    pub downsample: DownsampleConfig,
    #[serde(default)]
    pub ground: GroundConfig,
    #[serde(default)]
    pub motion: MotionConfig,
    #[serde(default)]
    pub cars: CarsConfig,
    #[serde(default)]
    pub carve: CarveConfig,
    #[serde(default)]
    pub refine: RefineSection,
    #[serde(default)]
    pub texture: TextureConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Command-line overrides; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub max_range: Option<f64>,
    pub downsample_fraction: Option<f64>,
    pub use_gt_poses: bool,
    pub ground_cell: Option<f64>,
    pub ground_dh: Option<f64>,
    pub ground_delta: Option<f64>,
    pub no_car_detection: bool,
    pub no_refine: bool,
    pub refine_iters: Option<usize>,
    pub patch: Option<usize>,
    pub step: Option<f64>,
    pub smooth: Option<f64>,
    pub pairs: Option<usize>,
    pub export_vertex_colors: bool,
    pub threads: Option<usize>,
}

fn check(ok: bool, what: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(what.to_string()))
    }
}

impl PipelineConfig {
    pub fn new(dataset: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            output: output.into(),
            threads: 0,
            registration: Default::default(),
            downsample: Default::default(),
            ground: Default::default(),
            motion: Default::default(),
            cars: Default::default(),
            carve: Default::default(),
            refine: Default::default(),
            texture: Default::default(),
            eval: Default::default(),
        }
    }

    /// Parses `text`; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut c: Self = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: base.to_path_buf(), message: e.message().to_string() })?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut c.dataset);
        resolve(&mut c.output);
        if let Some(r) = c.eval.reference.as_mut() {
            resolve(r);
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.to_path_buf(), message },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.max_range {
            self.registration.max_range = v;
        }
        if let Some(v) = o.downsample_fraction {
            self.downsample.fraction = v;
        }
        if o.use_gt_poses {
            self.registration.use_gt_poses = true;
        }
        if let Some(v) = o.ground_cell {
            self.ground.cell = v;
        }
        if let Some(v) = o.ground_dh {
            self.ground.max_step = v;
        }
        if let Some(v) = o.ground_delta {
            self.ground.band = v;
        }
        if o.no_car_detection {
            self.cars.enabled = false;
        }
        if o.no_refine {
            self.refine.enabled = false;
        }
        if let Some(v) = o.refine_iters {
            self.refine.iterations = v;
        }
        if let Some(v) = o.patch {
            self.refine.patch_half_width = v;
        }
        if let Some(v) = o.step {
            self.refine.step = v;
        }
        if let Some(v) = o.smooth {
            self.refine.smoothing = v;
        }
        if let Some(v) = o.pairs {
            self.refine.pairs = v;
        }
        if o.export_vertex_colors {
            self.texture.export_vertex_colors = true;
        }
        if let Some(v) = o.threads {
            self.threads = v;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.registration;
        check(r.max_range > 0.0, "registration.max_range must be positive")?;
        check(r.icp_max_correspondence > 0.0, "registration.icp_max_correspondence must be positive")?;
        check((0.0..=1.0).contains(&r.icp_min_inlier_fraction), "registration.icp_min_inlier_fraction must lie in [0, 1]")?;
        check(r.icp_normal_neighbors >= 3, "registration.icp_normal_neighbors must be at least 3")?;
        let d = &self.downsample;
        check(d.fraction > 0.0 && d.fraction <= 1.0, "downsample.fraction must lie in (0, 1]")?;
        check(d.max_voxel > 0.0, "downsample.max_voxel must be positive")?;
        check(d.band > 0.0 && d.band < 1.0, "downsample.band must lie in (0, 1)")?;
        let g = &self.ground;
        check(g.cell > 0.0 && g.max_step > 0.0 && g.band > 0.0, "ground parameters must be positive")?;
        check(g.seed_radius >= 0.0, "ground.seed_radius must be non-negative")?;
        let m = &self.motion;
        check(m.lambda > 0.0 && m.lambda < 1.0, "motion.lambda must lie in (0, 1)")?;
        check(m.range_tolerance > 0.0, "motion.range_tolerance must be positive")?;
        check(m.angular_tolerance_deg > 0.0 && m.angular_tolerance_deg < 90.0, "motion.angular_tolerance_deg must lie in (0, 90)")?;
        check((0.0..=1.0).contains(&m.conflict_threshold), "motion.conflict_threshold must lie in [0, 1]")?;
        check((0.0..1.0).contains(&m.saturation), "motion.saturation must lie in [0, 1)")?;
        check(m.mask_box >= 1, "motion.mask_box must be at least 1")?;
        let c = &self.cars;
        check(c.cell > 0.0 && c.max_height > 0.0, "cars.cell and cars.max_height must be positive")?;
        check(0.0 < c.radius_min && c.radius_min < c.radius_max, "cars radius bounds must satisfy 0 < min < max")?;
        check(0.0 < c.ratio_min && c.ratio_min < c.ratio_max && c.ratio_max <= 1.0, "cars ratio bounds must satisfy 0 < min < max ≤ 1")?;
        check(c.ramp_angle_deg > 0.0 && c.flat_angle_deg > 0.0, "cars angles must be positive")?;
        self.refine.params().validate().map_err(|e| ConfigError::Invalid(format!("refine: {e}")))?;
        check(self.refine.pairs >= 1, "refine.pairs must be at least 1")?;
        check(self.texture.resolution >= 1, "texture.resolution must be at least 1")?;
        check(self.texture.alpha >= 1, "texture.alpha must be at least 1")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_parses_to_defaults() {
        let c = PipelineConfig::from_toml(TEMPLATE, Path::new("/base")).unwrap();
        let mut expected = PipelineConfig::new("/base/dataset", "/base/out");
        expected.eval.reference = c.eval.reference.clone();
        assert_eq!(c, expected);
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = PipelineConfig::new("/data", "/out");
        c.refine.iterations = 7;
        c.eval.reference = Some("/data/ref.ply".into());
        let back = PipelineConfig::from_toml(&c.to_toml(), Path::new("/")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::from_toml("dataset = \"d\"\noutput = \"o\"\n[cars]\nenbled = false\n", Path::new("."));
        assert!(matches!(err, Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn overrides_apply_and_validate() {
        let mut c = PipelineConfig::new("d", "o");
        c.apply(&Overrides { no_refine: true, downsample_fraction: Some(2.0), ..Default::default() });
        assert!(!c.refine.enabled);
        assert!(c.validate().is_err());
    }
}
