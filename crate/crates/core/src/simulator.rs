//! Synthetic worlds, trajectories and detector emulation.
//!
//! Worlds are grids of rectangular rooms joined by doors in the middle of
//! shared walls, furnished with boxes standing along the walls. A robot
//! drives a coverage route through every room; per-frame randomness comes
//! from independent ChaCha streams derived from one seed, so frames can be
//! generated in parallel and the output never depends on scheduling.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::annotator::{Detection2D, GroundTruthObject};
use crate::geometry::{
    angle_diff, footprint, footprint_intersection_area, mounted_camera, normalize_angle, project_box_to_image, rot2, BBox2, CameraModel,
    Footprint2, OrientedBox3, Pose2, Pose3,
};
use crate::localizer::{sample_odometry, Observation};
use crate::mapper::{Detection3D, MappingFrame};
use crate::noisemodel::{ClassNoiseModel, NoiseModels};
use crate::worldmodel::{object_visible, CellState, FloorPlan, MapObject, ObjectMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("placed {placed} of {requested} objects before running out of attempts")]
    PlacementFailure { placed: usize, requested: usize },
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
}

/// Object class with its nominal size and detector noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    /// (width, height, length) in meters.
    pub dims: Vector3<f64>,
    pub noise_mean: Vector2<f64>,
    pub noise_cov: Matrix2<f64>,
}

impl ClassSpec {
    pub fn new(name: &str, dims: [f64; 3], mean: [f64; 2], var: [f64; 2]) -> Self {
        Self {
            name: name.into(),
            dims: Vector3::from(dims),
            noise_mean: Vector2::from(mean),
            noise_cov: Matrix2::new(var[0], 0.0, 0.0, var[1]),
        }
    }
}

/// Office furniture with center noise between 0.1 and 0.2 m.
pub fn default_classes() -> Vec<ClassSpec> {
    vec![
        ClassSpec::new("table", [1.2, 0.75, 0.8], [0.1, 0.0], [0.04, 0.01]),
        ClassSpec::new("chair", [0.5, 0.9, 0.5], [0.05, 0.0], [0.015, 0.015]),
        ClassSpec::new("drawers", [0.6, 0.8, 0.5], [0.0, 0.05], [0.01, 0.03]),
        ClassSpec::new("sofa", [1.8, 0.8, 0.9], [0.1, 0.05], [0.04, 0.02]),
        ClassSpec::new("bin", [0.4, 0.6, 0.4], [0.0, 0.0], [0.01, 0.01]),
        ClassSpec::new("shelf", [1.0, 1.8, 0.4], [0.0, 0.05], [0.03, 0.01]),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRates {
    pub p_detect: f64,
    /// Expected false positives per frame.
    pub fp_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub rooms_x: usize,
    pub rooms_y: usize,
    /// Interior size of each room along x (m).
    pub room_width: f64,
    /// Interior size of each room along y (m).
    pub room_length: f64,
    pub wall_thickness: f64,
    pub door_width: f64,
    pub resolution: f64,
    pub n_objects: usize,
    /// Distance kept between objects and walls (m).
    pub wall_gap: f64,
    /// Distance kept between objects (m).
    pub clearance: f64,
    pub p_detect: f64,
    /// Expected false positives per frame over all classes.
    pub fp_rate: f64,
    pub classes: Vec<ClassSpec>,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            rooms_x: 2,
            rooms_y: 1,
            room_width: 6.0,
            room_length: 5.0,
            wall_thickness: 0.1,
            door_width: 0.7,
            resolution: 0.05,
            n_objects: 12,
            wall_gap: 0.15,
            clearance: 0.3,
            p_detect: 0.8,
            fp_rate: 0.2,
            classes: default_classes(),
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSpec(m.into()));
        if self.rooms_x == 0 || self.rooms_y == 0 {
            return bad("at least one room is required");
        }
        if !(self.room_width > 0.0 && self.room_length > 0.0 && self.resolution > 0.0 && self.wall_thickness > 0.0) {
            return bad("room sizes, wall thickness and resolution must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_detect) || !(self.fp_rate >= 0.0) {
            return bad("p_detect must be in [0, 1] and fp_rate non-negative");
        }
        if self.n_objects > 0 && self.classes.is_empty() {
            return bad("objects requested but no classes given");
        }
        Ok(())
    }

    fn pitch_x(&self) -> f64 {
        self.room_width + self.wall_thickness
    }

    fn pitch_y(&self) -> f64 {
        self.room_length + self.wall_thickness
    }

    /// Interior (min, max) corners of room (i, j).
    pub fn room_bounds(&self, i: usize, j: usize) -> (Vector2<f64>, Vector2<f64>) {
        let min = Vector2::new(
            self.wall_thickness + i as f64 * self.pitch_x(),
            self.wall_thickness + j as f64 * self.pitch_y(),
        );
        (min, min + Vector2::new(self.room_width, self.room_length))
    }

    pub fn room_center(&self, i: usize, j: usize) -> Vector2<f64> {
        let (lo, hi) = self.room_bounds(i, j);
        (lo + hi) * 0.5
    }

    /// Rooms in serpentine order, so consecutive rooms share a door.
    pub fn room_order(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.rooms_y {
            if j % 2 == 0 {
                out.extend((0..self.rooms_x).map(|i| (i, j)));
            } else {
                out.extend((0..self.rooms_x).rev().map(|i| (i, j)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimWorld {
    pub spec: WorldSpec,
    pub plan: FloorPlan,
    pub gt_objects: Vec<GroundTruthObject>,
    pub noise: NoiseModels,
    pub rates: BTreeMap<String, DetectionRates>,
}

impl SimWorld {
    /// Ground truth as a map with ids equal to the ground-truth ids.
    pub fn gt_map(&self) -> ObjectMap {
        ObjectMap::from_objects(
            self.gt_objects
                .iter()
                .map(|g| MapObject::new(g.id, g.class_label.clone(), g.obb))
                .collect(),
        )
        .expect("ground-truth ids are unique")
    }

    pub fn class_names(&self) -> Vec<String> {
        self.rates.keys().cloned().collect()
    }

    pub fn set_rates(&mut self, p_detect: f64, fp_rate_total: f64) {
        let n = self.rates.len().max(1) as f64;
        for r in self.rates.values_mut() {
            *r = DetectionRates {
                p_detect,
                fp_rate: fp_rate_total / n,
            };
        }
    }
}

fn build_plan(spec: &WorldSpec) -> Result<FloorPlan, SimError> {
    let total_w = spec.rooms_x as f64 * spec.pitch_x() + spec.wall_thickness;
    let total_h = spec.rooms_y as f64 * spec.pitch_y() + spec.wall_thickness;
    let w = (total_w / spec.resolution).round() as usize;
    let h = (total_h / spec.resolution).round() as usize;
    let mut plan = FloorPlan::filled(w, h, CellState::Occupied, spec.resolution, Pose2::identity())
        .map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    for j in 0..spec.rooms_y {
        for i in 0..spec.rooms_x {
            let (lo, hi) = spec.room_bounds(i, j);
            plan.fill_rect(lo, hi, CellState::Free);
            let c = spec.room_center(i, j);
            let half = spec.door_width * 0.5;
            if i + 1 < spec.rooms_x {
                plan.fill_rect(Vector2::new(hi.x, c.y - half), Vector2::new(hi.x + spec.wall_thickness, c.y + half), CellState::Free);
            }
            if j + 1 < spec.rooms_y {
                plan.fill_rect(Vector2::new(c.x - half, hi.y), Vector2::new(c.x + half, hi.y + spec.wall_thickness), CellState::Free);
            }
        }
    }
    Ok(plan)
}

/// Axis-aligned half extents of a footprint.
fn aabb_half(fp: &Footprint2) -> Vector2<f64> {
    let r = rot2(fp.yaw).abs();
    r * fp.extents
}

/// Deterministic world: rooms on a grid, objects placed against walls,
/// facing into the room, away from doors and from each other.
pub fn generate_world(seed: u64, spec: &WorldSpec) -> Result<SimWorld, SimError> {
    spec.validate()?;
    let plan = build_plan(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rooms = spec.room_order();
    let n_classes = spec.classes.len();
    let mut placed: Vec<GroundTruthObject> = Vec::with_capacity(spec.n_objects);
    let mut footprints: Vec<Footprint2> = Vec::new();
    for k in 0..spec.n_objects {
        let class = &spec.classes[k % n_classes];
        let (i, j) = rooms[k % rooms.len()];
        let (lo, hi) = spec.room_bounds(i, j);
        let center = spec.room_center(i, j);
        let mut done = false;
        for _ in 0..1000 {
            // wall 0..4: south, east, north, west; the object faces the room
            let wall = rng.random_range(0..4);
            let facing = [PI / 2.0, PI, -PI / 2.0, 0.0][wall];
            let yaw = normalize_angle(facing - PI / 2.0 + rng.random_range(-0.15..0.15));
            let depth = class.dims.z * 0.5 + spec.wall_gap + rng.random_range(0.0..0.2);
            let along_span = if wall % 2 == 0 { spec.room_width } else { spec.room_length };
            let along = rng.random_range(0.0..along_span);
            let c = match wall {
                0 => Vector2::new(lo.x + along, lo.y + depth),
                1 => Vector2::new(hi.x - depth, lo.y + along),
                2 => Vector2::new(lo.x + along, hi.y - depth),
                _ => Vector2::new(lo.x + depth, lo.y + along),
            };
            let obb = OrientedBox3::upright(Vector3::new(c.x, c.y, class.dims.y * 0.5), class.dims.x, class.dims.y, class.dims.z, yaw);
            let fp = footprint(&obb);
            let half = aabb_half(&fp);
            let inside = c.x - half.x >= lo.x + spec.wall_gap
                && c.x + half.x <= hi.x - spec.wall_gap
                && c.y - half.y >= lo.y + spec.wall_gap
                && c.y + half.y <= hi.y - spec.wall_gap;
            // doors sit in the middle of their wall
            let (offset, half_along) = if wall % 2 == 0 { ((c.x - center.x).abs(), half.x) } else { ((c.y - center.y).abs(), half.y) };
            let clear_of_door = !has_door(spec, i, j, wall) || offset >= half_along + spec.door_width * 0.5 + 0.5;
            if !inside || !clear_of_door {
                continue;
            }
            let grown = Footprint2::new(fp.center, fp.extents + Vector2::repeat(spec.clearance * 0.5), fp.yaw);
            let collides = footprints.iter().any(|o| {
                let og = Footprint2::new(o.center, o.extents + Vector2::repeat(spec.clearance * 0.5), o.yaw);
                footprint_intersection_area(&grown, &og) > 0.0
            });
            if collides {
                continue;
            }
            footprints.push(fp);
            placed.push(GroundTruthObject {
                id: k as u64,
                class_label: class.name.clone(),
                obb,
            });
            done = true;
            break;
        }
        if !done {
            return Err(SimError::PlacementFailure {
                placed: placed.len(),
                requested: spec.n_objects,
            });
        }
    }
    let mut noise = NoiseModels::new();
    let mut rates = BTreeMap::new();
    let used: Vec<&ClassSpec> = spec.classes.iter().take(spec.n_objects.min(n_classes).max(1)).collect();
    for c in &used {
        let model = ClassNoiseModel::new(c.name.clone(), c.noise_mean, c.noise_cov, 0)
            .map_err(|e| SimError::InvalidSpec(format!("class {}: {e}", c.name)))?;
        noise.insert(c.name.clone(), model);
        rates.insert(
            c.name.clone(),
            DetectionRates {
                p_detect: spec.p_detect,
                fp_rate: spec.fp_rate / used.len() as f64,
            },
        );
    }
    Ok(SimWorld {
        spec: spec.clone(),
        plan,
        gt_objects: placed,
        noise,
        rates,
    })
}

/// Whether a wall of room (i, j) has a door (walls: south, east, north, west).
fn has_door(spec: &WorldSpec, i: usize, j: usize, wall: usize) -> bool {
    match wall {
        0 => j > 0,
        1 => i + 1 < spec.rooms_x,
        2 => j + 1 < spec.rooms_y,
        _ => i > 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub timestamp_s: f64,
    pub pose: Pose2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrajectory {
    pub samples: Vec<TrajectorySample>,
    /// Camera pose in the robot frame (camera→robot).
    pub cam_pose_in_robot: Pose3,
}

impl SimTrajectory {
    pub fn robot_to_camera(&self) -> Pose3 {
        self.cam_pose_in_robot.inverse()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.timestamp_s - a.timestamp_s,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    /// m/s
    pub speed: f64,
    /// rad/s
    pub turn_rate: f64,
    /// s
    pub dt: f64,
    /// Distance of the loop in each room from its walls (m).
    pub loop_inset: f64,
    /// Spin in place at every room center.
    pub spin: bool,
    /// Loop along the walls of every room.
    pub room_loop: bool,
    pub camera_height: f64,
    /// Downward camera pitch (rad).
    pub camera_pitch: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            speed: 0.4,
            turn_rate: 0.5,
            dt: 0.1,
            loop_inset: 1.4,
            spin: true,
            room_loop: true,
            camera_height: 1.0,
            camera_pitch: 0.1,
        }
    }
}

pub fn default_camera() -> CameraModel {
    CameraModel::from_focal(525.0, 525.0, 319.5, 239.5, 640, 480).expect("valid intrinsics")
}

struct Driver<'a> {
    spec: &'a TrajectorySpec,
    pose: Pose2,
    t: f64,
    samples: Vec<TrajectorySample>,
}

impl Driver<'_> {
    fn emit(&mut self) {
        self.t += self.spec.dt;
        self.samples.push(TrajectorySample {
            timestamp_s: self.t,
            pose: self.pose,
        });
    }

    fn turn_by(&mut self, angle: f64) {
        let step = self.spec.turn_rate * self.spec.dt;
        let n = (angle.abs() / step).ceil() as usize;
        if n == 0 {
            return;
        }
        let inc = angle / n as f64;
        for _ in 0..n {
            self.pose = Pose2::new(self.pose.x, self.pose.y, self.pose.theta + inc);
            self.emit();
        }
    }

    fn go_to(&mut self, target: Vector2<f64>) {
        let d = target - self.pose.translation();
        let dist = d.norm();
        if dist < 1e-9 {
            return;
        }
        self.turn_by(angle_diff(d.y.atan2(d.x), self.pose.theta));
        let n = (dist / (self.spec.speed * self.spec.dt)).ceil() as usize;
        let start = self.pose.translation();
        for k in 1..=n {
            let p = start + d * (k as f64 / n as f64);
            self.pose = Pose2::new(p.x, p.y, self.pose.theta);
            self.emit();
        }
    }
}

/// Coverage route: in every room a spin at the center and a loop along the
/// walls, then straight through the door to the next room.
pub fn generate_trajectory(world: &SimWorld, spec: &TrajectorySpec) -> SimTrajectory {
    let ws = &world.spec;
    let order = ws.room_order();
    let first = ws.room_center(order[0].0, order[0].1);
    let mut d = Driver {
        spec,
        pose: Pose2::new(first.x, first.y, 0.0),
        t: 0.0,
        samples: vec![TrajectorySample {
            timestamp_s: 0.0,
            pose: Pose2::new(first.x, first.y, 0.0),
        }],
    };
    for &(i, j) in &order {
        let c = ws.room_center(i, j);
        d.go_to(c);
        if spec.spin {
            d.turn_by(TAU);
        }
        if spec.room_loop {
            let (lo, hi) = ws.room_bounds(i, j);
            let inset_x = spec.loop_inset.min(ws.room_width * 0.5 - 0.1);
            let inset_y = spec.loop_inset.min(ws.room_length * 0.5 - 0.1);
            let corners = [
                Vector2::new(lo.x + inset_x, lo.y + inset_y),
                Vector2::new(hi.x - inset_x, lo.y + inset_y),
                Vector2::new(hi.x - inset_x, hi.y - inset_y),
                Vector2::new(lo.x + inset_x, hi.y - inset_y),
            ];
            for k in 0..=4 {
                d.go_to(corners[k % 4]);
            }
            d.go_to(c);
        }
    }
    SimTrajectory {
        samples: d.samples,
        cam_pose_in_robot: mounted_camera(Vector3::new(0.0, 0.0, spec.camera_height), 0.0, spec.camera_pitch).inverse(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Draw center offsets from the class noise models.
    pub center_noise: bool,
    /// Relative standard deviation of each box dimension.
    pub dim_rel_sigma: f64,
    /// Standard deviation of the box heading (rad).
    pub yaw_sigma: f64,
    /// Standard deviation of 2D box corners (px).
    pub pixel_sigma: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            center_noise: true,
            dim_rel_sigma: 0.05,
            yaw_sigma: 0.05,
            pixel_sigma: 4.0,
        }
    }
}

impl DetectorConfig {
    pub fn noiseless() -> Self {
        Self {
            center_noise: false,
            dim_rel_sigma: 0.0,
            yaw_sigma: 0.0,
            pixel_sigma: 0.0,
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Center offset drawn from a class model, expressed in the object frame.
pub fn sample_center_offset<R: Rng + ?Sized>(model: &ClassNoiseModel, rng: &mut R) -> Vector2<f64> {
    let l = model.cov().cholesky().expect("class covariance is positive definite").l();
    model.mean() + l * Vector2::new(normal(rng), normal(rng))
}

/// A noisy world-frame copy of `obb`: center offset from the class model
/// rotated into the object's heading, dimensions scaled, heading jittered.
pub fn perturb_box<R: Rng + ?Sized>(obb: &OrientedBox3, model: Option<&ClassNoiseModel>, cfg: &DetectorConfig, rng: &mut R) -> OrientedBox3 {
    let fp = footprint(obb);
    let mut center = obb.center;
    if cfg.center_noise {
        if let Some(m) = model {
            let off = rot2(fp.yaw) * sample_center_offset(m, rng);
            center.x += off.x;
            center.y += off.y;
        }
    }
    let mut dims = obb.dims;
    if cfg.dim_rel_sigma > 0.0 {
        for k in 0..3 {
            dims[k] = (dims[k] * (1.0 + cfg.dim_rel_sigma * normal(rng))).max(0.05);
        }
    }
    let yaw_noise = if cfg.yaw_sigma > 0.0 { cfg.yaw_sigma * normal(rng) } else { 0.0 };
    if yaw_noise == 0.0 && dims == obb.dims {
        return OrientedBox3 { center, ..*obb };
    }
    OrientedBox3 {
        center,
        dims,
        rotation: crate::geometry::yaw_rotation(yaw_noise) * obb.rotation,
    }
}

/// Uniformly drawn free-space box of class `class` that the camera sees.
fn false_positive<R: Rng + ?Sized>(world: &SimWorld, class: &ClassSpec, w2c: &Pose3, cam: &CameraModel, free: &[(usize, usize)], rng: &mut R) -> Option<OrientedBox3> {
    for _ in 0..50 {
        let (c, r) = free[rng.random_range(0..free.len())];
        let p = world.plan.cell_center(c, r);
        let obb = OrientedBox3::upright(
            Vector3::new(p.x, p.y, class.dims.y * 0.5),
            class.dims.x,
            class.dims.y,
            class.dims.z,
            rng.random_range(-PI..PI),
        );
        if object_visible(&obb, w2c, cam, &world.plan) {
            return Some(obb);
        }
    }
    None
}

fn class_spec<'a>(world: &'a SimWorld, name: &str) -> Option<&'a ClassSpec> {
    world.spec.classes.iter().find(|c| c.name == name)
}

/// Detections for a robot at `pose`: visible objects detected with
/// probability `p_detect` and perturbed, plus Poisson false positives.
pub fn simulate_detections<R: Rng + ?Sized>(
    world: &SimWorld,
    pose: &Pose2,
    robot_to_camera: &Pose3,
    cam: &CameraModel,
    cfg: &DetectorConfig,
    free: &[(usize, usize)],
    rng: &mut R,
) -> Vec<Detection3D> {
    let w2c = Pose3::world_to_camera(pose, robot_to_camera);
    let mut out = Vec::new();
    for g in &world.gt_objects {
        if !object_visible(&g.obb, &w2c, cam, &world.plan) {
            continue;
        }
        let p = world.rates.get(&g.class_label).map_or(1.0, |r| r.p_detect);
        if rng.random::<f64>() >= p {
            continue;
        }
        let noisy = perturb_box(&g.obb, world.noise.get(&g.class_label), cfg, rng);
        out.push(Detection3D {
            class_label: g.class_label.clone(),
            confidence: rng.random_range(0.5..1.0),
            box_camera: noisy.transformed(&w2c),
        });
    }
    if !free.is_empty() {
        for (name, rates) in &world.rates {
            if rates.fp_rate <= 0.0 {
                continue;
            }
            let Some(spec) = class_spec(world, name) else {
                continue;
            };
            let count = Poisson::new(rates.fp_rate).map_or(0.0, |d| d.sample(rng)) as usize;
            for _ in 0..count {
                if let Some(obb) = false_positive(world, spec, &w2c, cam, free, rng) {
                    out.push(Detection3D {
                        class_label: name.clone(),
                        confidence: rng.random_range(0.3..0.9),
                        box_camera: obb.transformed(&w2c),
                    });
                }
            }
        }
    }
    out
}

/// 2D detector output: projections of visible objects, jittered.
pub fn simulate_detections_2d<R: Rng + ?Sized>(
    world: &SimWorld,
    pose: &Pose2,
    robot_to_camera: &Pose3,
    cam: &CameraModel,
    cfg: &DetectorConfig,
    rng: &mut R,
) -> Vec<Detection2D> {
    let w2c = Pose3::world_to_camera(pose, robot_to_camera);
    let mut out = Vec::new();
    for g in &world.gt_objects {
        if !object_visible(&g.obb, &w2c, cam, &world.plan) {
            continue;
        }
        let p = world.rates.get(&g.class_label).map_or(1.0, |r| r.p_detect);
        if rng.random::<f64>() >= p {
            continue;
        }
        let Ok((bb, _)) = project_box_to_image(&g.obb, &w2c, cam) else {
            continue;
        };
        let mut b = bb.to_array();
        if cfg.pixel_sigma > 0.0 {
            let n = Normal::new(0.0, cfg.pixel_sigma).expect("finite sigma");
            for v in &mut b {
                *v += n.sample(rng);
            }
        }
        let bbox = BBox2::new(Vector2::new(b[0].min(b[2]), b[1].min(b[3])), Vector2::new(b[0].max(b[2]), b[1].max(b[3])));
        out.push(Detection2D {
            class_label: g.class_label.clone(),
            bbox,
            confidence: rng.random_range(0.5..1.0),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdomEvent {
    pub timestamp_s: f64,
    pub delta: Pose2,
}

/// Relative motions between consecutive samples, perturbed with the
/// localizer's motion noise.
pub fn corrupt_odometry(traj: &SimTrajectory, sigma: &[f64; 3], seed: u64) -> Vec<OdomEvent> {
    traj.samples
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let mut rng = stream(seed, Purpose::Odometry, k as u64);
            let delta = w[0].pose.between(&w[1].pose);
            OdomEvent {
                timestamp_s: w[1].timestamp_s,
                delta: sample_odometry(&delta, sigma, &mut rng),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Purpose {
    Detections3D = 1,
    Detections2D = 2,
    Odometry = 3,
    Predictions = 4,
}

/// Independent random stream for one (purpose, frame) pair.
fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ purpose as u64);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocalizationEvent {
    Odom(OdomEvent),
    Obs { timestamp_s: f64, observation: Observation },
}

impl LocalizationEvent {
    pub fn timestamp_s(&self) -> f64 {
        match self {
            LocalizationEvent::Odom(o) => o.timestamp_s,
            LocalizationEvent::Obs { timestamp_s, .. } => *timestamp_s,
        }
    }
}

/// Posed 2D detections for the annotator.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame2D {
    pub frame_id: u64,
    pub timestamp_s: f64,
    pub robot_pose: Pose2,
    pub cam_pose_in_robot: Pose3,
    pub detections: Vec<Detection2D>,
}

/// A world-frame 3D prediction, the input to noise fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub frame_id: u64,
    pub class_label: String,
    pub obb: OrientedBox3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub detector: DetectorConfig,
    /// Odometry noise of the simulated robot, scaled like the filter's
    /// motion noise. Lower than the filter's default, as wheel odometry
    /// usually is.
    pub sigma_odom: [f64; 3],
    /// Detections are generated on every n-th trajectory sample.
    pub obs_every: usize,
    pub seed: u64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            sigma_odom: [0.05, 0.05, 0.05],
            obs_every: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRun {
    pub mapping_frames: Vec<MappingFrame>,
    pub localization_events: Vec<LocalizationEvent>,
    pub frames_2d: Vec<Frame2D>,
    pub predictions: Vec<Prediction>,
}

/// All event streams for one pass along `traj`.
pub fn simulate_run(world: &SimWorld, traj: &SimTrajectory, cam: &CameraModel, spec: &RunSpec) -> SimulatedRun {
    let free: Vec<(usize, usize)> = world.plan.free_cells().collect();
    let r2c = traj.robot_to_camera();
    let every = spec.obs_every.max(1);
    let frames: Vec<(u64, TrajectorySample)> = traj
        .samples
        .iter()
        .enumerate()
        .filter(|(k, _)| k % every == 0)
        .map(|(k, s)| (k as u64, *s))
        .collect();
    let per_frame: Vec<(Vec<Detection3D>, Vec<Detection2D>, Vec<Prediction>)> = frames
        .par_iter()
        .map(|(k, s)| {
            let mut rng = stream(spec.seed, Purpose::Detections3D, *k);
            let dets = simulate_detections(world, &s.pose, &r2c, cam, &spec.detector, &free, &mut rng);
            let mut rng = stream(spec.seed, Purpose::Detections2D, *k);
            let dets2d = simulate_detections_2d(world, &s.pose, &r2c, cam, &spec.detector, &mut rng);
            let mut rng = stream(spec.seed, Purpose::Predictions, *k);
            let w2c = Pose3::world_to_camera(&s.pose, &r2c);
            let preds = world
                .gt_objects
                .iter()
                .filter(|g| object_visible(&g.obb, &w2c, cam, &world.plan))
                .map(|g| Prediction {
                    frame_id: *k,
                    class_label: g.class_label.clone(),
                    obb: perturb_box(&g.obb, world.noise.get(&g.class_label), &spec.detector, &mut rng),
                })
                .collect();
            (dets, dets2d, preds)
        })
        .collect();

    let odom = corrupt_odometry(traj, &spec.sigma_odom, spec.seed);
    let mut mapping_frames = Vec::with_capacity(frames.len());
    let mut frames_2d = Vec::with_capacity(frames.len());
    let mut predictions = Vec::new();
    let mut by_index = BTreeMap::new();
    for ((k, s), (dets, dets2d, preds)) in frames.iter().zip(per_frame) {
        mapping_frames.push(MappingFrame {
            frame_id: *k,
            timestamp_s: s.timestamp_s,
            robot_pose: s.pose,
            cam_pose: Pose3::world_to_camera(&s.pose, &r2c),
            detections: dets.clone(),
        });
        frames_2d.push(Frame2D {
            frame_id: *k,
            timestamp_s: s.timestamp_s,
            robot_pose: s.pose,
            cam_pose_in_robot: traj.cam_pose_in_robot,
            detections: dets2d,
        });
        predictions.extend(preds);
        by_index.insert(*k as usize, dets);
    }
    let mut localization_events = Vec::with_capacity(odom.len() + frames.len());
    for (k, s) in traj.samples.iter().enumerate() {
        if k > 0 {
            localization_events.push(LocalizationEvent::Odom(odom[k - 1]));
        }
        if let Some(dets) = by_index.remove(&k) {
            localization_events.push(LocalizationEvent::Obs {
                timestamp_s: s.timestamp_s,
                observation: Observation {
                    detections: dets,
                    cam_pose_in_robot: traj.cam_pose_in_robot,
                },
            });
        }
    }
    SimulatedRun {
        mapping_frames,
        localization_events,
        frames_2d,
        predictions,
    }
}
