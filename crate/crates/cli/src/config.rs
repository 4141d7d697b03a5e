//! Run configuration: one TOML file with a section per command. Relative
//! paths are resolved against the directory of the file they came from.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use semloc_core::annotator::AnnotatorConfig;
use semloc_core::evalkit::ConvergenceParams;
use semloc_core::geometry::CameraModel;
use semloc_core::localizer::MclConfig;
use semloc_core::mapper::MapperConfig;
use semloc_core::noisemodel::NoiseFitConfig;
use semloc_core::simulator::{ClassSpec, DetectorConfig, RunSpec, TrajectorySpec, WorldSpec};
use semloc_core::worldmodel::RoomSegmentationParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Repetitions of `localize`, each with its own filter seed.
    pub runs: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub out: PathBuf,
    pub camera: CameraConfig,
    pub annotate: AnnotateConfig,
    pub fit_noise: FitNoiseConfig,
    pub build_map: BuildMapConfig,
    pub localize: LocalizeConfig,
    pub simulate: SimulateConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 1,
            jobs: 0,
            out: PathBuf::from("out"),
            camera: CameraConfig::default(),
            annotate: AnnotateConfig::default(),
            fit_noise: FitNoiseConfig::default(),
            build_map: BuildMapConfig::default(),
            localize: LocalizeConfig::default(),
            simulate: SimulateConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }
}

impl CameraConfig {
    pub fn model(&self) -> Result<CameraModel> {
        CameraModel::from_focal(self.fx, self.fy, self.cx, self.cy, self.width, self.height).context("camera intrinsics")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub floor_plan: Option<PathBuf>,
    pub gt_map: Option<PathBuf>,
    /// Frame index (JSON lines).
    pub frames: Option<PathBuf>,
    /// 2D detections (JSON lines).
    pub detections: Option<PathBuf>,
    pub annotator: AnnotatorConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitNoiseConfig {
    pub predictions: Option<PathBuf>,
    pub gt_map: Option<PathBuf>,
    pub fit: NoiseFitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildMapConfig {
    pub floor_plan: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    /// Without class models the association falls back to the IoU cost.
    pub noise_models: Option<PathBuf>,
    /// Existing map to continue from.
    pub resume_map: Option<PathBuf>,
    pub event_log: bool,
    pub mapper: MapperConfig,
    pub rooms: RoomSegmentationParams,
}

impl Default for BuildMapConfig {
    fn default() -> Self {
        Self {
            floor_plan: None,
            frames: None,
            noise_models: None,
            resume_map: None,
            event_log: true,
            mapper: MapperConfig::default(),
            rooms: RoomSegmentationParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    pub floor_plan: Option<PathBuf>,
    pub map: Option<PathBuf>,
    pub noise_models: Option<PathBuf>,
    /// Object probability map; instantiated from the class models when absent.
    pub probability_map: Option<PathBuf>,
    pub events: Option<PathBuf>,
    /// Ground-truth trajectory for the report.
    pub ground_truth: Option<PathBuf>,
    pub mcl: MclConfig,
    pub convergence: ConvergenceParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassConfig {
    pub name: String,
    /// [W, H, L] (m)
    pub dims: [f64; 3],
    pub noise_mean: [f64; 2],
    /// Row-major 2×2.
    pub noise_cov: [f64; 4],
}

impl Default for ClassConfig {
    fn default() -> Self {
        Self {
            name: String::new(),
            dims: [0.5, 0.5, 0.5],
            noise_mean: [0.0, 0.0],
            noise_cov: [0.01, 0.0, 0.0, 0.01],
        }
    }
}

impl From<&ClassSpec> for ClassConfig {
    fn from(c: &ClassSpec) -> Self {
        Self {
            name: c.name.clone(),
            dims: c.dims.into(),
            noise_mean: c.noise_mean.into(),
            noise_cov: [c.noise_cov[(0, 0)], c.noise_cov[(0, 1)], c.noise_cov[(1, 0)], c.noise_cov[(1, 1)]],
        }
    }
}

impl ClassConfig {
    fn spec(&self) -> ClassSpec {
        ClassSpec {
            name: self.name.clone(),
            dims: Vector3::from(self.dims),
            noise_mean: Vector2::from(self.noise_mean),
            noise_cov: Matrix2::from_row_slice(&self.noise_cov),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub rooms_x: usize,
    pub rooms_y: usize,
    pub room_width: f64,
    pub room_length: f64,
    pub wall_thickness: f64,
    pub door_width: f64,
    pub resolution: f64,
    pub n_objects: usize,
    pub wall_gap: f64,
    pub clearance: f64,
    pub p_detect: f64,
    pub fp_rate: f64,
    pub classes: Vec<ClassConfig>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let w = WorldSpec::default();
        Self {
            rooms_x: w.rooms_x,
            rooms_y: w.rooms_y,
            room_width: w.room_width,
            room_length: w.room_length,
            wall_thickness: w.wall_thickness,
            door_width: w.door_width,
            resolution: w.resolution,
            n_objects: w.n_objects,
            wall_gap: w.wall_gap,
            clearance: w.clearance,
            p_detect: w.p_detect,
            fp_rate: w.fp_rate,
            classes: w.classes.iter().map(ClassConfig::from).collect(),
        }
    }
}

impl WorldConfig {
    pub fn spec(&self) -> WorldSpec {
        WorldSpec {
            rooms_x: self.rooms_x,
            rooms_y: self.rooms_y,
            room_width: self.room_width,
            room_length: self.room_length,
            wall_thickness: self.wall_thickness,
            door_width: self.door_width,
            resolution: self.resolution,
            n_objects: self.n_objects,
            wall_gap: self.wall_gap,
            clearance: self.clearance,
            p_detect: self.p_detect,
            fp_rate: self.fp_rate,
            classes: self.classes.iter().map(ClassConfig::spec).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Odometry noise of the simulated robot (m, m, rad).
    pub sigma_odom: [f64; 3],
    /// Detections on every n-th trajectory sample.
    pub obs_every: usize,
    pub world: WorldConfig,
    pub trajectory: TrajectorySpec,
    pub detector: DetectorConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let r = RunSpec::default();
        Self {
            sigma_odom: r.sigma_odom,
            obs_every: r.obs_every,
            world: WorldConfig::default(),
            trajectory: TrajectorySpec::default(),
            detector: r.detector,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub built_map: Option<PathBuf>,
    pub gt_map: Option<PathBuf>,
    /// Matched pairs need a 3D IoU above this.
    pub match_iou_min: f64,
    /// Matched pairs need ground-plane centers at most this far apart (m).
    pub delta: f64,
    /// Estimate logs of repeated localization runs.
    pub estimates: Vec<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Row label of the localization table.
    pub method: String,
    pub convergence: ConvergenceParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            built_map: None,
            gt_map: None,
            match_iou_min: 0.0,
            delta: 1.0,
            estimates: Vec::new(),
            ground_truth: None,
            method: "ours".into(),
            convergence: ConvergenceParams::default(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub sensor_model: Option<semloc_core::localizer::SensorModel>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        rebase(base, p);
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`, makes its relative paths relative to the file's directory
    /// and applies the flag overrides.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let mut cfg = Self::parse(&text).with_context(|| format!("parsing config {}", p.display()))?;
                let base = p.parent().unwrap_or(Path::new(""));
                cfg.rebase(base);
                cfg
            }
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(r) = overrides.runs {
            cfg.runs = r;
        }
        if let Some(m) = overrides.sensor_model {
            cfg.localize.mcl.sensor_model = m;
        }
        if let Some(j) = overrides.jobs {
            cfg.jobs = j;
        }
        if let Some(o) = &overrides.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.out);
        let a = &mut self.annotate;
        for p in [&mut a.floor_plan, &mut a.gt_map, &mut a.frames, &mut a.detections] {
            rebase_opt(base, p);
        }
        let f = &mut self.fit_noise;
        for p in [&mut f.predictions, &mut f.gt_map] {
            rebase_opt(base, p);
        }
        let b = &mut self.build_map;
        for p in [&mut b.floor_plan, &mut b.frames, &mut b.noise_models, &mut b.resume_map] {
            rebase_opt(base, p);
        }
        let l = &mut self.localize;
        for p in [&mut l.floor_plan, &mut l.map, &mut l.noise_models, &mut l.probability_map, &mut l.events, &mut l.ground_truth] {
            rebase_opt(base, p);
        }
        let e = &mut self.eval;
        for p in [&mut e.built_map, &mut e.gt_map, &mut e.ground_truth] {
            rebase_opt(base, p);
        }
        for p in &mut e.estimates {
            rebase(base, p);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// The path of a required input, or an error naming the config key.
pub fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| anyhow::anyhow!("missing input path `{key}` in the configuration"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use semloc_core::localizer::SensorModel;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert!(text.contains("n_particles = 5000"));
        assert!(text.contains("d_theta = 0.03"));
    }

    #[test]
    fn partial_files_keep_defaults_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 7\n[localize]\nmap = \"m.json\"\n[localize.mcl]\nn_particles = 100\nsensor_model = \"edt\"\n").unwrap();
        let cfg = RunConfig::load(Some(&p), &Overrides::default()).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.localize.mcl.n_particles, 100);
        assert_eq!(cfg.localize.mcl.sigma_odom, [0.15; 3]);
        assert_eq!(cfg.localize.map.as_deref(), Some(dir.path().join("m.json").as_path()));
        let flags = Overrides {
            seed: Some(3),
            sensor_model: Some(SensorModel::D),
            ..Overrides::default()
        };
        let cfg = RunConfig::load(Some(&p), &flags).unwrap();
        assert_eq!((cfg.seed, cfg.localize.mcl.sensor_model), (3, SensorModel::D));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[build_map.mapper]\ntau_costs = 0.4\n").is_err());
    }

    #[test]
    fn world_config_matches_simulator_defaults() {
        assert_eq!(WorldConfig::default().spec(), WorldSpec::default());
    }
}
