//! Incremental object-map construction from posed 3D detections.
//!
//! Detections are first fused into a short-term local map. Once the robot
//! has moved or turned enough, the local map is folded into the global map,
//! considering only global objects of the room the robot is in. Objects that
//! stay in view without being re-detected accumulate skips and are purged
//! when their match/skip ratio drops below `tau_purge`.

use std::sync::Arc;

use log::warn;

use crate::assignment;
use crate::geometry::{footprint, iou_box3, rotation_average, CameraModel, OrientedBox3, Pose2, Pose3};
use crate::noisemodel::{instantiate_on_box, NoiseModels};
use crate::worldmodel::{object_visible, FloorPlan, MapObject, ObjectMap, RoomMap};

/// Cost given to forbidden pairs inside the assignment matrix.
pub const FORBIDDEN_COST: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection3D {
    pub class_label: String,
    pub confidence: f64,
    pub box_camera: OrientedBox3,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapperConfig {
    /// Translation that triggers integration of the local map (m).
    pub d_xy: f64,
    /// Rotation that triggers integration of the local map (rad).
    pub d_theta: f64,
    pub tau_cost: f64,
    pub tau_purge: f64,
    /// Pairs whose ground-plane centers are farther apart than this are never associated (m).
    pub delta: f64,
    /// Whether local objects lying in another room than the robot are added
    /// to the global map as new objects instead of being dropped.
    pub add_cross_room_objects: bool,
    /// Global objects of the robot's room whose mutual association cost is
    /// below this are merged at every integration; 0 disables merging.
    pub tau_consolidate: f64,
    /// Objects with fewer matches are kept internally but left out of the
    /// published map.
    pub min_support: u32,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            d_xy: 0.1,
            d_theta: 0.03,
            tau_cost: 0.5,
            tau_purge: 0.2,
            delta: 1.0,
            add_cross_room_objects: false,
            tau_consolidate: 0.85,
            min_support: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalMap {
    pub objects: ObjectMap,
    pub anchor_pose: Option<Pose2>,
}

/// Marks objects active when they are in the camera frustum and no wall
/// separates them from the camera.
pub fn update_active(objects: &mut [MapObject], cam_pose: &Pose3, cam: &CameraModel, plan: &FloorPlan) {
    for o in objects {
        o.active = object_visible(&o.obb, cam_pose, cam, plan);
    }
}

/// Association cost between a map object and a prediction, or `None` when
/// the pair may not be associated. Without a noise model for the class the
/// cost falls back to the IoU term alone.
pub fn association_cost(o1: &MapObject, o2: &MapObject, models: Option<&NoiseModels>) -> Option<f64> {
    if o1.class_label != o2.class_label {
        return None;
    }
    let c_iou = 1.0 - iou_box3(&o1.obb, &o2.obb);
    match models.and_then(|m| m.get(&o1.class_label)) {
        Some(model) => {
            let g = instantiate_on_box(model, o1.id, &o1.obb);
            let c_cen = 1.0 - g.normalized(&footprint(&o2.obb).center);
            Some(0.5 * (c_iou + c_cen))
        }
        None => Some(c_iou),
    }
}

fn gated_cost(o1: &MapObject, o2: &MapObject, models: Option<&NoiseModels>, delta: f64) -> Option<f64> {
    if (o1.obb.center.xy() - o2.obb.center.xy()).norm() > delta {
        return None;
    }
    association_cost(o1, o2, models)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// (index into `a`, index into `b`, cost)
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

/// Optimal assignment over a full cost matrix followed by the `tau_cost` filter.
pub fn associate_matrix(costs: &[Vec<f64>], tau_cost: f64) -> Association {
    let rows = costs.len();
    let cols = costs.first().map_or(0, Vec::len);
    let solution = assignment::solve(costs);
    let mut used_b = vec![false; cols];
    let mut out = Association::default();
    for (i, j) in solution.iter().enumerate() {
        match j {
            Some(j) if costs[i][*j] < tau_cost => {
                used_b[*j] = true;
                out.pairs.push((i, *j, costs[i][*j]));
            }
            _ => out.unmatched_a.push(i),
        }
    }
    out.unmatched_b = (0..cols).filter(|j| !used_b[*j]).collect();
    debug_assert_eq!(out.pairs.len() + out.unmatched_a.len(), rows);
    out
}

pub fn cost_matrix(a: &[MapObject], b: &[MapObject], models: Option<&NoiseModels>, delta: f64) -> Vec<Vec<f64>> {
    a.iter()
        .map(|o1| {
            b.iter()
                .map(|o2| gated_cost(o1, o2, models, delta).unwrap_or(FORBIDDEN_COST))
                .collect()
        })
        .collect()
}

pub fn associate(a: &[MapObject], b: &[MapObject], models: Option<&NoiseModels>, cfg: &MapperConfig) -> Association {
    if a.is_empty() || b.is_empty() {
        return Association {
            pairs: Vec::new(),
            unmatched_a: (0..a.len()).collect(),
            unmatched_b: (0..b.len()).collect(),
        };
    }
    associate_matrix(&cost_matrix(a, b, models, cfg.delta), cfg.tau_cost)
}

/// Fuses `pred` into `target`: centers and dimensions are averaged with
/// `n_match` weights, rotations by the weighted chordal mean, and the match
/// counts add up. Other bookkeeping stays with `target`.
pub fn merge(target: &MapObject, pred: &MapObject) -> MapObject {
    let wt = target.n_match as f64;
    let wp = pred.n_match as f64;
    let total = wt + wp;
    let center = (target.obb.center * wt + pred.obb.center * wp) / total;
    let dims = (target.obb.dims * wt + pred.obb.dims * wp) / total;
    let rotation = match rotation_average(&[target.obb.rotation, pred.obb.rotation], &[wt, wp]) {
        Ok(r) => r,
        Err(e) => {
            warn!("keeping rotation of object {}: {e}", target.id);
            target.obb.rotation
        }
    };
    MapObject {
        obb: OrientedBox3 {
            center,
            dims,
            rotation,
        },
        n_match: target.n_match + pred.n_match,
        ..target.clone()
    }
}

/// Detections as fresh world-frame map objects.
pub fn detections_to_world(dets: &[Detection3D], cam_pose: &Pose3) -> Vec<MapObject> {
    let cam_to_world = cam_pose.inverse();
    dets.iter()
        .map(|d| {
            let mut o = MapObject::new(0, d.class_label.clone(), d.box_camera.transformed(&cam_to_world));
            o.active = true;
            o
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameOutcome {
    pub merged: usize,
    pub added: usize,
    pub skipped: usize,
}

/// Visibility and association inputs shared by the per-frame steps.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext<'a> {
    pub cam_pose: &'a Pose3,
    pub cam: &'a CameraModel,
    pub plan: &'a FloorPlan,
    pub models: Option<&'a NoiseModels>,
}

/// Folds one frame of world-frame detections into `objects`: active objects
/// are associated with the detections, matches merged, the rest of the
/// detections added, and active objects left without a match get a skip.
/// With `add_unmatched` false, unmatched detections are not added.
fn fuse_frame(objects: &mut ObjectMap, dets_world: &[MapObject], ctx: &FrameContext, cfg: &MapperConfig, add_unmatched: bool) -> FrameOutcome {
    update_active(objects.objects_mut(), ctx.cam_pose, ctx.cam, ctx.plan);
    let active: Vec<usize> = (0..objects.len()).filter(|&i| objects.objects()[i].active).collect();
    let active_objects: Vec<MapObject> = active.iter().map(|&i| objects.objects()[i].clone()).collect();
    let assoc = associate(&active_objects, dets_world, ctx.models, cfg);
    let mut outcome = FrameOutcome::default();
    for &(i, j, _) in &assoc.pairs {
        let slot = &mut objects.objects_mut()[active[i]];
        *slot = merge(slot, &dets_world[j]);
        outcome.merged += 1;
    }
    for &i in &assoc.unmatched_a {
        objects.objects_mut()[active[i]].n_skip += 1;
        outcome.skipped += 1;
    }
    if add_unmatched {
        for &j in &assoc.unmatched_b {
            objects.insert(dets_world[j].clone());
            outcome.added += 1;
        }
    }
    outcome
}

/// Adds one frame of camera-frame detections to the local map.
pub fn ingest_frame(local: &mut LocalMap, dets: &[Detection3D], robot_pose: &Pose2, ctx: &FrameContext, cfg: &MapperConfig) -> FrameOutcome {
    if local.anchor_pose.is_none() {
        local.anchor_pose = Some(*robot_pose);
    }
    let world = detections_to_world(dets, ctx.cam_pose);
    fuse_frame(&mut local.objects, &world, ctx, cfg, true)
}

/// Skip bookkeeping for the global map: global objects of `room` in view
/// that none of this frame's detections associate with get a skip. Objects
/// outside the room are left untouched.
pub fn record_global_skips(global: &mut ObjectMap, dets_world: &[MapObject], room: u32, ctx: &FrameContext, cfg: &MapperConfig) -> usize {
    let in_room: Vec<usize> = (0..global.len()).filter(|&i| global.objects()[i].room_id == room).collect();
    let mut view = ObjectMap::from_objects(in_room.iter().map(|&i| global.objects()[i].clone()).collect())
        .expect("ids of a valid map stay unique");
    let outcome = fuse_frame(&mut view, dets_world, ctx, cfg, false);
    for (k, &i) in in_room.iter().enumerate() {
        let updated = &view.objects()[k];
        let slot = &mut global.objects_mut()[i];
        slot.active = updated.active;
        // only the skip count is taken over; merging happens at integration
        slot.n_skip = updated.n_skip;
    }
    outcome.skipped
}

pub fn should_integrate(local: &LocalMap, robot_pose: &Pose2, cfg: &MapperConfig) -> bool {
    match local.anchor_pose {
        Some(anchor) => {
            let d = anchor.between(robot_pose);
            (robot_pose.translation() - anchor.translation()).norm() > cfg.d_xy || d.theta.abs() > cfg.d_theta
        }
        None => false,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntegrationOutcome {
    pub robot_room: u32,
    pub merged: usize,
    pub added: usize,
    pub dropped_cross_room: usize,
    /// (kept id, absorbed id)
    pub consolidated: Vec<(u64, u64)>,
    pub purged: Vec<u64>,
}

/// Folds the local map into the global map and resets the local map.
pub fn integrate(
    local: &mut LocalMap,
    global: &mut ObjectMap,
    robot_pose: &Pose2,
    rooms: &RoomMap,
    models: Option<&NoiseModels>,
    cfg: &MapperConfig,
) -> IntegrationOutcome {
    let robot_room = rooms.room_at(&robot_pose.translation());
    let mut outcome = IntegrationOutcome {
        robot_room,
        ..Default::default()
    };
    let mut here = Vec::new();
    for o in local.objects.objects() {
        let mut o = o.clone();
        o.room_id = rooms.room_at(&footprint(&o.obb).center);
        if o.room_id == robot_room {
            here.push(o);
        } else if cfg.add_cross_room_objects {
            global.insert(o);
            outcome.added += 1;
        } else {
            outcome.dropped_cross_room += 1;
        }
    }
    let candidates: Vec<usize> = (0..global.len()).filter(|&i| global.objects()[i].room_id == robot_room).collect();
    let candidate_objects: Vec<MapObject> = candidates.iter().map(|&i| global.objects()[i].clone()).collect();
    let assoc = associate(&candidate_objects, &here, models, cfg);
    for &(i, j, _) in &assoc.pairs {
        let slot = &mut global.objects_mut()[candidates[i]];
        *slot = merge(slot, &here[j]);
        outcome.merged += 1;
    }
    for &j in &assoc.unmatched_b {
        global.insert(here[j].clone());
        outcome.added += 1;
    }
    local.objects.clear();
    local.anchor_pose = Some(*robot_pose);
    if cfg.tau_consolidate > 0.0 {
        outcome.consolidated = consolidate(global, robot_room, models, cfg);
    }
    outcome.purged = purge(global, cfg);
    outcome
}

/// Merges same-class objects of `room` whose association cost is below
/// `tau_consolidate`, cheapest pair first, each into the one with more matches. Returns the
/// (kept, absorbed) id pairs.
pub fn consolidate(map: &mut ObjectMap, room: u32, models: Option<&NoiseModels>, cfg: &MapperConfig) -> Vec<(u64, u64)> {
    let mut merged = Vec::new();
    loop {
        let objs = map.objects();
        let in_room: Vec<usize> = (0..objs.len()).filter(|&i| objs[i].room_id == room).collect();
        let mut best: Option<(f64, usize, usize)> = None;
        for (k, &i) in in_room.iter().enumerate() {
            for &j in &in_room[k + 1..] {
                let (t, p) = if objs[j].n_match > objs[i].n_match { (j, i) } else { (i, j) };
                if let Some(c) = gated_cost(&objs[t], &objs[p], models, cfg.delta) {
                    if c < cfg.tau_consolidate && best.is_none_or(|b| c < b.0) {
                        best = Some((c, t, p));
                    }
                }
            }
        }
        let Some((_, t, p)) = best else { break };
        let absorbed = map.objects()[p].clone();
        let slot = &mut map.objects_mut()[t];
        *slot = merge(slot, &absorbed);
        merged.push((slot.id, absorbed.id));
        map.retain(|o| o.id != absorbed.id);
    }
    merged
}

/// Removes objects whose match/skip ratio fell below `tau_purge`. Objects
/// that were never skipped are kept. Returns the removed ids.
pub fn purge(map: &mut ObjectMap, cfg: &MapperConfig) -> Vec<u64> {
    let mut removed = Vec::new();
    map.retain(|o| {
        let drop = o.n_skip > 0 && (o.n_match as f64) / (o.n_skip as f64) < cfg.tau_purge;
        if drop {
            removed.push(o.id);
        }
        !drop
    });
    removed
}

/// One posed frame of detections.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingFrame {
    pub frame_id: u64,
    pub timestamp_s: f64,
    pub robot_pose: Pose2,
    /// World→camera pose.
    pub cam_pose: Pose3,
    pub detections: Vec<Detection3D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationEvent {
    pub frame_id: u64,
    pub timestamp_s: f64,
    pub outcome: IntegrationOutcome,
    pub global_size: usize,
}

/// The objects of `map` with at least `min_support` matches.
pub fn supported(map: &ObjectMap, min_support: u32) -> ObjectMap {
    let keep = map.objects().iter().filter(|o| o.n_match >= min_support).cloned().collect();
    ObjectMap::from_objects(keep).expect("ids of a valid map stay unique")
}

/// Owns the local and global maps and runs frames through them in order.
/// The global map is published as an immutable snapshot after every
/// integration.
#[derive(Debug, Clone)]
pub struct Mapper {
    cfg: MapperConfig,
    cam: CameraModel,
    plan: FloorPlan,
    rooms: RoomMap,
    models: Option<NoiseModels>,
    local: LocalMap,
    working: ObjectMap,
    published: Arc<ObjectMap>,
    events: Vec<IntegrationEvent>,
    last: Option<(u64, f64, Pose2)>,
}

impl Mapper {
    pub fn new(cfg: MapperConfig, cam: CameraModel, plan: FloorPlan, rooms: RoomMap, models: Option<NoiseModels>) -> Self {
        Self::resume(cfg, cam, plan, rooms, models, ObjectMap::new())
    }

    /// Continues mapping on top of an existing global map.
    pub fn resume(cfg: MapperConfig, cam: CameraModel, plan: FloorPlan, rooms: RoomMap, models: Option<NoiseModels>, mut global: ObjectMap) -> Self {
        crate::worldmodel::assign_rooms(&mut global, &rooms);
        Self {
            cfg,
            cam,
            plan,
            rooms,
            models,
            local: LocalMap::default(),
            published: Arc::new(supported(&global, cfg.min_support)),
            working: global,
            events: Vec::new(),
            last: None,
        }
    }

    pub fn process(&mut self, frame: &MappingFrame) -> FrameOutcome {
        let ctx = FrameContext {
            cam_pose: &frame.cam_pose,
            cam: &self.cam,
            plan: &self.plan,
            models: self.models.as_ref(),
        };
        let outcome = ingest_frame(&mut self.local, &frame.detections, &frame.robot_pose, &ctx, &self.cfg);
        let world = detections_to_world(&frame.detections, &frame.cam_pose);
        let room = self.rooms.room_at(&frame.robot_pose.translation());
        record_global_skips(&mut self.working, &world, room, &ctx, &self.cfg);
        self.last = Some((frame.frame_id, frame.timestamp_s, frame.robot_pose));
        if should_integrate(&self.local, &frame.robot_pose, &self.cfg) {
            self.integrate_now(frame.frame_id, frame.timestamp_s, &frame.robot_pose);
        }
        outcome
    }

    fn integrate_now(&mut self, frame_id: u64, timestamp_s: f64, pose: &Pose2) {
        let outcome = integrate(&mut self.local, &mut self.working, pose, &self.rooms, self.models.as_ref(), &self.cfg);
        self.events.push(IntegrationEvent {
            frame_id,
            timestamp_s,
            outcome,
            global_size: self.working.len(),
        });
        self.published = Arc::new(supported(&self.working, self.cfg.min_support));
    }

    /// Integrates whatever is left in the local map.
    pub fn finish(&mut self) -> Arc<ObjectMap> {
        if let Some((frame_id, t, pose)) = self.last {
            if !self.local.objects.is_empty() {
                self.integrate_now(frame_id, t, &pose);
            }
        }
        self.snapshot()
    }

    pub fn snapshot(&self) -> Arc<ObjectMap> {
        Arc::clone(&self.published)
    }

    pub fn local(&self) -> &LocalMap {
        &self.local
    }

    pub fn events(&self) -> &[IntegrationEvent] {
        &self.events
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mounted_camera, yaw_rotation};
    use crate::noisemodel::ClassNoiseModel;
    use crate::worldmodel::{segment_rooms, CellState, RoomSegmentationParams};
    use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
    use proptest::prelude::*;

    fn boxed(class: &str, x: f64, y: f64) -> MapObject {
        MapObject::new(0, class, OrientedBox3::upright(Vector3::new(x, y, 0.5), 0.6, 1.0, 0.6, 0.0))
    }

    fn models() -> NoiseModels {
        let mut m = NoiseModels::new();
        m.insert(
            "chair".into(),
            ClassNoiseModel::new("chair", Vector2::zeros(), Matrix2::new(0.04, 0.0, 0.0, 0.01), 100).unwrap(),
        );
        m
    }

    fn cam() -> CameraModel {
        CameraModel::from_focal(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn mount() -> Pose3 {
        mounted_camera(Vector3::new(0.0, 0.0, 1.0), 0.0, 0.0)
    }

    #[test]
    fn cost_cases() {
        let a = boxed("chair", 0.0, 0.0);
        assert_eq!(association_cost(&a, &a, Some(&models())), Some(0.0));
        assert_eq!(association_cost(&a, &boxed("table", 0.0, 0.0), Some(&models())), None);
        // disjoint boxes one standard deviation apart along x: sigma_x = 0.2 m
        let small = |x: f64| MapObject::new(0, "chair", OrientedBox3::upright(Vector3::new(x, 0.0, 0.5), 0.1, 1.0, 0.1, 0.0));
        let c = association_cost(&small(0.0), &small(0.2), Some(&models())).unwrap();
        let expected = 0.5 * (1.0 + (1.0 - (-0.5f64).exp()));
        assert!((c - expected).abs() < 1e-12);
        assert!((c - 0.697).abs() < 1e-3);
        // no model: IoU term only
        assert_eq!(association_cost(&small(0.0), &small(0.2), None), Some(1.0));
    }

    #[test]
    fn association_filters_by_threshold() {
        let cfg = MapperConfig::default();
        let a = [boxed("chair", 0.0, 0.0)];
        let b = [boxed("chair", 0.02, 0.0)];
        let r = associate(&a, &b, Some(&models()), &cfg);
        assert_eq!(r.pairs.len(), 1);
        assert!(r.pairs[0].2 < 0.1);
        let far = [boxed("chair", 0.9, 0.0)];
        let r = associate(&a, &far, Some(&models()), &cfg);
        assert!(r.pairs.is_empty());
        assert_eq!((r.unmatched_a.clone(), r.unmatched_b.clone()), (vec![0], vec![0]));
    }

    #[test]
    fn merge_cases() {
        let a = boxed("chair", 0.0, 0.0);
        let b = boxed("chair", 1.0, 0.0);
        let m = merge(&a, &b);
        assert!((m.obb.center - Vector3::new(0.5, 0.0, 0.5)).norm() < 1e-12);
        assert_eq!(m.n_match, 2);
        assert!((m.obb.rotation - Matrix3::identity()).norm() < 1e-12);

        let mut t = MapObject::new(0, "chair", OrientedBox3::upright(Vector3::zeros(), 1.0, 1.0, 1.0, 0.0));
        t.n_match = 3;
        let p = MapObject::new(0, "chair", OrientedBox3::upright(Vector3::zeros(), 2.0, 2.0, 2.0, 0.0));
        let m = merge(&t, &p);
        assert!((m.obb.dims - Vector3::repeat(1.25)).norm() < 1e-12);
        assert_eq!(m.n_match, 4);
    }

    #[test]
    fn merge_keeps_rotation_on_degenerate_mean() {
        let t = MapObject::new(0, "chair", OrientedBox3 { rotation: yaw_rotation(std::f64::consts::FRAC_PI_2), ..boxed("chair", 0.0, 0.0).obb });
        let p = MapObject::new(0, "chair", OrientedBox3 { rotation: yaw_rotation(-std::f64::consts::FRAC_PI_2), ..t.obb });
        assert_eq!(merge(&t, &p).obb.rotation, t.obb.rotation);
    }

    #[test]
    fn purge_cases() {
        let cfg = MapperConfig::default();
        let mut map = ObjectMap::new();
        let mut keep = boxed("chair", 0.0, 0.0);
        keep.n_match = 10;
        keep.n_skip = 1;
        let mut drop = boxed("chair", 1.0, 0.0);
        drop.n_match = 1;
        drop.n_skip = 10;
        let mut fresh = boxed("chair", 2.0, 0.0);
        fresh.n_match = 1;
        fresh.n_skip = 0;
        map.insert(keep);
        let dropped = map.insert(drop);
        map.insert(fresh);
        assert_eq!(purge(&mut map, &cfg), vec![dropped]);
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn consolidation_merges_duplicates_only() {
        let cfg = MapperConfig::default();
        let mut map = ObjectMap::new();
        let mut a = boxed("chair", 0.0, 0.0);
        a.n_match = 6;
        a.room_id = 1;
        let mut dup = boxed("chair", 0.12, 0.05);
        dup.n_match = 2;
        dup.room_id = 1;
        let mut neighbor = boxed("chair", 0.0, 0.9);
        neighbor.room_id = 1;
        let mut other_room = boxed("chair", 0.05, 0.0);
        other_room.room_id = 2;
        let kept = map.insert(a);
        let absorbed = map.insert(dup);
        map.insert(neighbor);
        map.insert(other_room);
        assert_eq!(consolidate(&mut map, 1, Some(&models()), &cfg), vec![(kept, absorbed)]);
        assert_eq!(map.len(), 3);
        let k = map.get(kept).unwrap();
        assert_eq!(k.n_match, 8);
        assert!((k.obb.center.x - 0.03).abs() < 1e-12);
        let off = MapperConfig { tau_consolidate: 0.0, ..cfg };
        let mut twin = ObjectMap::new();
        twin.insert(boxed("chair", 0.0, 0.0));
        twin.insert(boxed("chair", 0.0, 0.0));
        let mut integrated = twin.clone();
        let mut local = LocalMap::default();
        let rooms = RoomMap::empty(&open_plan());
        integrate(&mut local, &mut integrated, &Pose2::new(0.5, 0.5, 0.0), &rooms, None, &off);
        assert_eq!(integrated.len(), 2);
        assert_eq!(consolidate(&mut twin, 0, None, &cfg).len(), 1);
    }

    #[test]
    fn published_map_holds_supported_objects() {
        let mut map = ObjectMap::new();
        let mut a = boxed("chair", 0.0, 0.0);
        a.n_match = 3;
        map.insert(a);
        map.insert(boxed("chair", 2.0, 0.0));
        let s = supported(&map, 3);
        assert_eq!(s.len(), 1);
        assert_eq!(s.objects()[0].id, 0);
        assert_eq!(supported(&map, 1).len(), 2);
    }

    fn open_plan() -> FloorPlan {
        FloorPlan::filled(200, 100, CellState::Free, 0.05, Pose2::identity()).unwrap()
    }

    #[test]
    fn activity_follows_frustum_and_walls() {
        let robot = Pose2::new(1.0, 2.5, 0.0);
        let w2c = Pose3::world_to_camera(&robot, &mount());
        let mut objs = vec![boxed("chair", 0.2, 2.5), boxed("chair", 4.0, 2.5)];
        update_active(&mut objs, &w2c, &cam(), &open_plan());
        assert_eq!((objs[0].active, objs[1].active), (false, true));
        let mut walled = open_plan();
        for r in 0..100 {
            walled.set(50, r, CellState::Occupied);
        }
        update_active(&mut objs, &w2c, &cam(), &walled);
        assert!(!objs[1].active);
    }

    fn det_of(o: &MapObject, w2c: &Pose3) -> Detection3D {
        Detection3D {
            class_label: o.class_label.clone(),
            confidence: 1.0,
            box_camera: o.obb.transformed(w2c),
        }
    }

    #[test]
    fn ingest_adds_merges_and_skips() {
        let robot = Pose2::new(1.0, 2.5, 0.0);
        let w2c = Pose3::world_to_camera(&robot, &mount());
        let plan = open_plan();
        let m = models();
        let ctx = FrameContext {
            cam_pose: &w2c,
            cam: &cam(),
            plan: &plan,
            models: Some(&m),
        };
        let cfg = MapperConfig::default();
        let truth = [boxed("chair", 4.0, 2.0), boxed("chair", 4.0, 3.2)];
        let mut local = LocalMap::default();
        let dets: Vec<Detection3D> = truth.iter().map(|o| det_of(o, &w2c)).collect();
        let out = ingest_frame(&mut local, &dets, &robot, &ctx, &cfg);
        assert_eq!(out.added, 2);
        assert!(local.objects.objects().iter().all(|o| o.n_match == 1));
        for _ in 0..4 {
            ingest_frame(&mut local, &dets, &robot, &ctx, &cfg);
        }
        assert_eq!(local.objects.len(), 2);
        assert!(local.objects.objects().iter().all(|o| o.n_match == 5 && o.n_skip == 0));
        for (o, t) in local.objects.objects().iter().zip(&truth) {
            assert!((o.obb.center - t.obb.center).norm() < 1e-9);
        }
        let out = ingest_frame(&mut local, &dets[..1], &robot, &ctx, &cfg);
        assert_eq!(out.skipped, 1);
        assert_eq!(local.objects.objects()[1].n_skip, 1);
    }

    #[test]
    fn integration_trigger_uses_motion_thresholds() {
        let cfg = MapperConfig::default();
        let local = LocalMap {
            objects: ObjectMap::new(),
            anchor_pose: Some(Pose2::new(0.0, 0.0, 0.0)),
        };
        assert!(!should_integrate(&local, &Pose2::new(0.05, 0.0, 0.01), &cfg));
        assert!(should_integrate(&local, &Pose2::new(0.15, 0.0, 0.0), &cfg));
        assert!(should_integrate(&local, &Pose2::new(0.0, 0.0, 0.04), &cfg));
        assert!(!should_integrate(&LocalMap::default(), &Pose2::new(5.0, 0.0, 0.0), &cfg));
    }

    fn two_room_plan() -> FloorPlan {
        let mut plan = FloorPlan::filled(172, 88, CellState::Occupied, 0.05, Pose2::identity()).unwrap();
        plan.fill_rect(Vector2::new(0.1, 0.1), Vector2::new(4.1, 4.3), CellState::Free);
        plan.fill_rect(Vector2::new(4.2, 0.1), Vector2::new(8.5, 4.3), CellState::Free);
        plan.fill_rect(Vector2::new(4.05, 1.85), Vector2::new(4.25, 2.55), CellState::Free);
        plan
    }

    #[test]
    fn integration_only_touches_current_room() {
        let plan = two_room_plan();
        let rooms = segment_rooms(&plan, &RoomSegmentationParams::default());
        assert_eq!(rooms.room_count(), 2);
        let m = models();
        let mut global = ObjectMap::new();
        let mut existing = boxed("chair", 6.0, 2.0);
        existing.room_id = 2;
        existing.n_match = 4;
        global.insert(existing);
        let robot = Pose2::new(2.0, 2.0, 0.0);
        let mut local = LocalMap {
            objects: ObjectMap::new(),
            anchor_pose: Some(Pose2::identity()),
        };
        local.objects.insert(boxed("chair", 6.01, 2.0));
        local.objects.insert(boxed("chair", 1.0, 1.0));

        let strict = MapperConfig::default();
        let mut g = global.clone();
        let mut l = local.clone();
        let out = integrate(&mut l, &mut g, &robot, &rooms, Some(&m), &strict);
        assert_eq!(out.robot_room, 1);
        assert_eq!((out.merged, out.added, out.dropped_cross_room), (0, 1, 1));
        assert_eq!(g.objects()[0].n_match, 4);
        assert!(l.objects.is_empty());
        assert_eq!(l.anchor_pose, Some(robot));

        let permissive = MapperConfig {
            add_cross_room_objects: true,
            ..strict
        };
        let mut g = global.clone();
        let mut l = local.clone();
        let out = integrate(&mut l, &mut g, &robot, &rooms, Some(&m), &permissive);
        assert_eq!((out.merged, out.added), (0, 2));
        // the room-2 object was added next to, not merged into, the existing one
        assert_eq!(g.objects()[0].n_match, 4);
        assert_eq!(g.objects().iter().filter(|o| o.room_id == 2).count(), 2);
    }

    #[test]
    fn replay_conserves_match_counts() {
        let plan = two_room_plan();
        let rooms = segment_rooms(&plan, &RoomSegmentationParams::default());
        let truth = [boxed("chair", 3.0, 1.0), boxed("chair", 3.0, 3.0)];
        let mut mapper = Mapper::new(MapperConfig::default(), cam(), plan, rooms, Some(models()));
        let mut total = 0;
        for k in 0..20 {
            let robot = Pose2::new(0.6 + 0.03 * k as f64, 2.0, 0.0);
            let w2c = Pose3::world_to_camera(&robot, &mount());
            let dets: Vec<Detection3D> = truth.iter().map(|o| det_of(o, &w2c)).collect();
            total += dets.len() as u32;
            mapper.process(&MappingFrame {
                frame_id: k,
                timestamp_s: k as f64 * 0.1,
                robot_pose: robot,
                cam_pose: w2c,
                detections: dets,
            });
        }
        let map = mapper.finish();
        assert_eq!(map.len(), 2);
        assert_eq!(map.objects().iter().map(|o| o.n_match).sum::<u32>(), total);
        for (o, t) in map.objects().iter().zip(&truth) {
            assert!(iou_box3(&o.obb, &t.obb) > 0.999);
        }
        assert!(mapper.events().len() >= 2);
    }

    proptest! {
        #[test]
        fn merge_order_does_not_matter_for_equal_rotations(
            ca in prop::array::uniform3(-2.0f64..2.0), cb in prop::array::uniform3(-2.0f64..2.0), cc in prop::array::uniform3(-2.0f64..2.0),
            na in 1u32..20, nb in 1u32..20, nc in 1u32..20, yaw in -3.0f64..3.0,
        ) {
            let mk = |c: [f64; 3], n: u32, s: f64| {
                let mut o = MapObject::new(0, "chair", OrientedBox3::upright(Vector3::from(c), s, s + 0.1, s + 0.2, yaw));
                o.n_match = n;
                o
            };
            let (a, b, c) = (mk(ca, na, 0.5), mk(cb, nb, 0.9), mk(cc, nc, 1.3));
            let abc = merge(&merge(&a, &b), &c);
            let acb = merge(&merge(&a, &c), &b);
            prop_assert!((abc.obb.center - acb.obb.center).norm() < 1e-9);
            prop_assert!((abc.obb.dims - acb.obb.dims).norm() < 1e-9);
            prop_assert_eq!(abc.n_match, acb.n_match);
        }
    }
}
