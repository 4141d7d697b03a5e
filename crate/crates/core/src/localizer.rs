//! Monte Carlo localization against an object map.
//!
//! Each detection is reduced once per frame to a ground-plane footprint in
//! the robot frame; weighing a particle then only moves that footprint to
//! the particle's pose. Four sensor models are available: the full object
//! model and the EDT, density-only and overlap-only baselines.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::geometry::{footprint, iou_footprint, normalize_angle, Footprint2, Pose2, Pose3};
use crate::mapper::Detection3D;
use crate::noisemodel::NoiseModels;
use crate::worldmodel::{distance_transform, FloorPlan, ObjectGaussian, ObjectMap, ObjectProbabilityMap};

/// Likelihood floor for the density-only and EDT baselines.
pub const LIKELIHOOD_FLOOR: f64 = 1e-6;
/// EDT spread used for classes without a noise model (m).
pub const DEFAULT_EDT_SIGMA: f64 = 0.2;
const STATIONARY_EPS: f64 = 1e-9;
/// Particle count above which weights are evaluated in parallel.
const PARALLEL_MIN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorModel {
    #[default]
    Object,
    Edt,
    D,
    O,
}

impl SensorModel {
    pub const ALL: [SensorModel; 4] = [SensorModel::Object, SensorModel::Edt, SensorModel::D, SensorModel::O];

    pub fn name(&self) -> &'static str {
        match self {
            SensorModel::Object => "object",
            SensorModel::Edt => "edt",
            SensorModel::D => "d",
            SensorModel::O => "o",
        }
    }
}

impl fmt::Display for SensorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensorModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "object" | "ours" => Ok(SensorModel::Object),
            "edt" => Ok(SensorModel::Edt),
            "d" => Ok(SensorModel::D),
            "o" => Ok(SensorModel::O),
            other => Err(format!("unknown sensor model `{other}` (expected object, edt, d or o)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Pose2,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MclConfig {
    pub n_particles: usize,
    /// Odometry noise (m, m, rad).
    pub sigma_odom: [f64; 3],
    pub eta: f64,
    /// Resample when N_eff falls below this fraction of N.
    pub resample_threshold: f64,
    pub sensor_model: SensorModel,
    pub min_confidence: f64,
}

impl Default for MclConfig {
    fn default() -> Self {
        Self {
            n_particles: 5000,
            sigma_odom: [0.15, 0.15, 0.15],
            eta: 0.3,
            resample_threshold: 0.5,
            sensor_model: SensorModel::Object,
            min_confidence: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub detections: Vec<Detection3D>,
    /// Camera pose expressed in the robot frame (camera→robot).
    pub cam_pose_in_robot: Pose3,
}

/// Per-class distance to the nearest cell covered by an object of that class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEdt {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Pose2,
    pub distances: Vec<f64>,
}

impl ClassEdt {
    /// Rasterizes the footprints on the floor-plan grid (cells whose center
    /// lies inside, plus the cell under each footprint center) and computes
    /// their distance transform.
    pub fn build(plan: &FloorPlan, footprints: &[Footprint2]) -> Self {
        let (w, h) = (plan.width(), plan.height());
        let mut features = vec![false; w * h];
        for fp in footprints {
            if let Some((c, r)) = plan.world_to_cell(&fp.center) {
                features[r * w + c] = true;
            }
            let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
            for corner in fp.corners() {
                let g = plan.to_grid(&corner);
                lo = lo.inf(&g);
                hi = hi.sup(&g);
            }
            let (c0, c1) = (lo.x.floor().max(0.0) as usize, hi.x.ceil().clamp(0.0, w as f64) as usize);
            let (r0, r1) = (lo.y.floor().max(0.0) as usize, hi.y.ceil().clamp(0.0, h as f64) as usize);
            for r in r0..r1 {
                for c in c0..c1 {
                    if fp.contains(&plan.cell_center(c, r)) {
                        features[r * w + c] = true;
                    }
                }
            }
        }
        Self {
            width: w,
            height: h,
            resolution: plan.resolution(),
            origin: plan.origin(),
            distances: distance_transform(w, h, &features, plan.resolution()),
        }
    }

    pub fn distance_at(&self, p: &Vector2<f64>) -> Option<f64> {
        let g = self.origin.inverse().transform_point(p) / self.resolution;
        let (c, r) = (g.x.floor(), g.y.floor());
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        Some(self.distances[r as usize * self.width + c as usize])
    }
}

#[derive(Debug, Clone)]
struct ClassEntry {
    /// Gaussian of each object together with that object's footprint.
    gaussians: Vec<(ObjectGaussian, Footprint2)>,
    footprints: Vec<Footprint2>,
    edt: Option<ClassEdt>,
    edt_sigma: f64,
}

/// Immutable map data the sensor models read, indexed by class.
#[derive(Debug, Clone)]
pub struct SensorMaps {
    classes: BTreeMap<String, ClassEntry>,
    eta: f64,
}

impl SensorMaps {
    /// `with_edt` controls whether the per-class distance transforms are built.
    pub fn new(m_s: &ObjectMap, m_p: &ObjectProbabilityMap, models: &NoiseModels, plan: &FloorPlan, eta: f64, with_edt: bool) -> Self {
        let mut classes: BTreeMap<String, ClassEntry> = BTreeMap::new();
        for o in m_s.objects() {
            let entry = classes.entry(o.class_label.clone()).or_insert_with(|| ClassEntry {
                gaussians: Vec::new(),
                footprints: Vec::new(),
                edt: None,
                edt_sigma: models.get(&o.class_label).map_or(DEFAULT_EDT_SIGMA, |m| m.max_sigma()),
            });
            entry.footprints.push(footprint(&o.obb));
        }
        for g in m_p.gaussians() {
            match m_s.get(g.object_id) {
                Some(o) if o.class_label == g.class_label => {
                    if let Some(entry) = classes.get_mut(&g.class_label) {
                        entry.gaussians.push((g.clone(), footprint(&o.obb)));
                    }
                }
                _ => warn!("probability map object {} has no matching map object", g.object_id),
            }
        }
        if with_edt {
            for entry in classes.values_mut() {
                entry.edt = Some(ClassEdt::build(plan, &entry.footprints));
            }
        }
        Self { classes, eta }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }
}

/// A detection reduced to what the sensor models need.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDetection {
    pub class_label: String,
    pub footprint_robot: Footprint2,
}

pub fn prepare(obs: &Observation, min_confidence: f64) -> Vec<PreparedDetection> {
    obs.detections
        .iter()
        .filter(|d| d.confidence >= min_confidence)
        .map(|d| PreparedDetection {
            class_label: d.class_label.clone(),
            footprint_robot: footprint(&d.box_camera.transformed(&obs.cam_pose_in_robot)),
        })
        .collect()
}

/// Full object model for a world-frame detection footprint.
pub fn weigh_object_footprint(class: &str, fp: &Footprint2, maps: &SensorMaps) -> f64 {
    let Some(entry) = maps.classes.get(class) else {
        return maps.eta;
    };
    let mut best = 0.0;
    let mut best_fp = None;
    for (g, ofp) in &entry.gaussians {
        let p = g.normalized(&fp.center);
        if p > best || best_fp.is_none() {
            best = p;
            best_fp = Some(ofp);
        }
    }
    match best_fp {
        Some(ofp) => {
            let p_g = (-(1.0 - iou_footprint(fp, ofp))).exp();
            best * p_g + (1.0 - best) * maps.eta
        }
        None => maps.eta,
    }
}

pub fn weigh_d_footprint(class: &str, fp: &Footprint2, maps: &SensorMaps) -> f64 {
    let best = maps
        .classes
        .get(class)
        .map_or(0.0, |e| e.gaussians.iter().map(|(g, _)| g.normalized(&fp.center)).fold(0.0, f64::max));
    best.max(LIKELIHOOD_FLOOR)
}

pub fn weigh_o_footprint(class: &str, fp: &Footprint2, maps: &SensorMaps) -> f64 {
    let best = maps
        .classes
        .get(class)
        .map_or(0.0, |e| e.footprints.iter().map(|o| iou_footprint(fp, o)).fold(0.0, f64::max));
    (-(1.0 - best)).exp()
}

pub fn weigh_edt_footprint(class: &str, fp: &Footprint2, maps: &SensorMaps) -> f64 {
    let Some(entry) = maps.classes.get(class) else {
        return maps.eta;
    };
    let Some(edt) = &entry.edt else {
        return maps.eta;
    };
    match edt.distance_at(&fp.center) {
        Some(d) => (-(d * d) / (2.0 * entry.edt_sigma * entry.edt_sigma)).exp().max(LIKELIHOOD_FLOOR),
        None => LIKELIHOOD_FLOOR,
    }
}

fn detection_footprint_world(z: &Detection3D, x_t: &Pose2, cam_pose_in_robot: &Pose3) -> Footprint2 {
    footprint(&z.box_camera.transformed(&x_t.to_pose3().compose(cam_pose_in_robot)))
}

/// Object-model weight of one detection for a particle at `x_t`.
pub fn weigh_object(z: &Detection3D, x_t: &Pose2, cam_pose_in_robot: &Pose3, maps: &SensorMaps) -> f64 {
    weigh_object_footprint(&z.class_label, &detection_footprint_world(z, x_t, cam_pose_in_robot), maps)
}

pub fn weigh_object_edt(z: &Detection3D, x_t: &Pose2, cam_pose_in_robot: &Pose3, maps: &SensorMaps) -> f64 {
    weigh_edt_footprint(&z.class_label, &detection_footprint_world(z, x_t, cam_pose_in_robot), maps)
}

pub fn weigh_object_d(z: &Detection3D, x_t: &Pose2, cam_pose_in_robot: &Pose3, maps: &SensorMaps) -> f64 {
    weigh_d_footprint(&z.class_label, &detection_footprint_world(z, x_t, cam_pose_in_robot), maps)
}

pub fn weigh_object_o(z: &Detection3D, x_t: &Pose2, cam_pose_in_robot: &Pose3, maps: &SensorMaps) -> f64 {
    weigh_o_footprint(&z.class_label, &detection_footprint_world(z, x_t, cam_pose_in_robot), maps)
}

/// Geometric mean of per-detection weights; 1 for an empty frame.
pub fn geometric_mean(weights: &[f64]) -> f64 {
    if weights.is_empty() {
        return 1.0;
    }
    if weights.iter().any(|w| *w <= 0.0) {
        return 0.0;
    }
    (weights.iter().map(|w| w.ln()).sum::<f64>() / weights.len() as f64).exp()
}

/// Frame weight of a particle under the chosen sensor model.
pub fn weigh_frame(dets: &[PreparedDetection], x_t: &Pose2, maps: &SensorMaps, model: SensorModel) -> f64 {
    if dets.is_empty() {
        return 1.0;
    }
    let mut log_sum = 0.0;
    for d in dets {
        let fp = d.footprint_robot.transformed(x_t);
        let w = match model {
            SensorModel::Object => weigh_object_footprint(&d.class_label, &fp, maps),
            SensorModel::Edt => weigh_edt_footprint(&d.class_label, &fp, maps),
            SensorModel::D => weigh_d_footprint(&d.class_label, &fp, maps),
            SensorModel::O => weigh_o_footprint(&d.class_label, &fp, maps),
        };
        if w <= 0.0 {
            return 0.0;
        }
        log_sum += w.ln();
    }
    (log_sum / dets.len() as f64).exp()
}

/// Draws a noisy version of an odometry increment. Standard deviations scale
/// with the distance moved and the angle turned, each with a floor of 10 %
/// of σ; a standing robot (below 1e-9 in both) gets no noise.
pub fn sample_odometry<R: Rng + ?Sized>(delta: &Pose2, sigma: &[f64; 3], rng: &mut R) -> Pose2 {
    let trans = delta.x.hypot(delta.y);
    let rot = delta.theta.abs();
    if trans < STATIONARY_EPS && rot < STATIONARY_EPS {
        return *delta;
    }
    let ts = trans.max(0.1);
    let rs = rot.max(0.1);
    let mut n = || -> f64 { StandardNormal.sample(&mut *rng) };
    Pose2::new(
        delta.x + sigma[0] * ts * n(),
        delta.y + sigma[1] * ts * n(),
        delta.theta + sigma[2] * rs * n(),
    )
}

pub fn predict<R: Rng + ?Sized>(particles: &mut [Particle], delta: &Pose2, sigma: &[f64; 3], rng: &mut R) {
    for p in particles {
        let noisy = sample_odometry(delta, sigma, rng);
        p.pose = p.pose.compose(&noisy);
    }
}

/// Normalizes weights to sum 1. Returns false, and resets them to uniform,
/// when they sum to zero or are not finite.
pub fn normalize(particles: &mut [Particle]) -> bool {
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    if !(total > 0.0) || !total.is_finite() {
        let w = 1.0 / particles.len() as f64;
        for p in particles {
            p.weight = w;
        }
        return false;
    }
    for p in particles {
        p.weight /= total;
    }
    true
}

pub fn effective_sample_size(particles: &[Particle]) -> f64 {
    1.0 / particles.iter().map(|p| p.weight * p.weight).sum::<f64>()
}

/// Low-variance systematic resampling when N_eff < threshold·N. Returns
/// whether resampling took place.
pub fn resample<R: Rng + ?Sized>(particles: &mut Vec<Particle>, threshold: f64, rng: &mut R) -> bool {
    let n = particles.len();
    if n == 0 || effective_sample_size(particles) >= threshold * n as f64 {
        return false;
    }
    let step = 1.0 / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut cumulative = particles[0].weight;
    let mut i = 0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        while u > cumulative && i + 1 < n {
            i += 1;
            cumulative += particles[i].weight;
        }
        out.push(Particle {
            pose: particles[i].pose,
            weight: step,
        });
        u += step;
    }
    *particles = out;
    true
}

/// Weighted mean position and circular mean heading.
pub fn estimate(particles: &[Particle]) -> Pose2 {
    let (mut x, mut y, mut s, mut c, mut total) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in particles {
        x += p.weight * p.pose.x;
        y += p.weight * p.pose.y;
        s += p.weight * p.pose.theta.sin();
        c += p.weight * p.pose.theta.cos();
        total += p.weight;
    }
    if !(total > 0.0) {
        return particles.first().map_or_else(Pose2::identity, |p| p.pose);
    }
    Pose2::new(x / total, y / total, normalize_angle(s.atan2(c)))
}

/// Particles spread uniformly over free cells with uniform headings.
pub fn global_init<R: Rng + ?Sized>(plan: &FloorPlan, n: usize, rng: &mut R) -> Vec<Particle> {
    let free: Vec<(usize, usize)> = plan.free_cells().collect();
    let w = 1.0 / n as f64;
    if free.is_empty() {
        warn!("floor plan has no free cells; particles start at the origin");
        return vec![Particle { pose: Pose2::identity(), weight: w }; n];
    }
    let res = plan.resolution();
    (0..n)
        .map(|_| {
            let (c, r) = free[rng.random_range(0..free.len())];
            let local = Vector2::new((c as f64 + rng.random::<f64>()) * res, (r as f64 + rng.random::<f64>()) * res);
            let p = plan.origin().transform_point(&local);
            let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            Particle {
                pose: Pose2::new(p.x, p.y, theta),
                weight: w,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub estimate: Pose2,
    pub n_eff: f64,
    pub resampled: bool,
}

/// The particle filter. Owns its particles and random stream; the maps are
/// shared read-only.
#[derive(Debug, Clone)]
pub struct Mcl<R: Rng> {
    cfg: MclConfig,
    particles: Vec<Particle>,
    rng: R,
}

impl<R: Rng> Mcl<R> {
    pub fn new(cfg: MclConfig, plan: &FloorPlan, mut rng: R) -> Self {
        let particles = global_init(plan, cfg.n_particles.max(1), &mut rng);
        Self { cfg, particles, rng }
    }

    pub fn with_particles(cfg: MclConfig, particles: Vec<Particle>, rng: R) -> Self {
        Self { cfg, particles, rng }
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn config(&self) -> &MclConfig {
        &self.cfg
    }

    /// Moves the particles; those that leave free space lose their weight.
    pub fn on_odometry(&mut self, delta: &Pose2, plan: &FloorPlan) -> FilterState {
        predict(&mut self.particles, delta, &self.cfg.sigma_odom, &mut self.rng);
        for p in &mut self.particles {
            if !plan.is_free(&p.pose.translation()) {
                p.weight = 0.0;
            }
        }
        if !normalize(&mut self.particles) {
            warn!("all particles left free space; reinitializing");
            self.particles = global_init(plan, self.particles.len(), &mut self.rng);
        }
        self.state(false)
    }

    pub fn on_observation(&mut self, obs: &Observation, maps: &SensorMaps) -> FilterState {
        let dets = prepare(obs, self.cfg.min_confidence);
        if dets.is_empty() {
            return self.state(false);
        }
        let model = self.cfg.sensor_model;
        let weigh = |p: &mut Particle| p.weight *= weigh_frame(&dets, &p.pose, maps, model);
        if self.particles.len() >= PARALLEL_MIN {
            self.particles.par_iter_mut().for_each(weigh);
        } else {
            self.particles.iter_mut().for_each(weigh);
        }
        if !normalize(&mut self.particles) {
            warn!("all particle weights vanished; weights reset to uniform");
        }
        let resampled = resample(&mut self.particles, self.cfg.resample_threshold, &mut self.rng);
        self.state(resampled)
    }

    pub fn state(&self, resampled: bool) -> FilterState {
        FilterState {
            estimate: estimate(&self.particles),
            n_eff: effective_sample_size(&self.particles),
            resampled,
        }
    }
}
