use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix2, Vector2};

use super::floorplan::FloorPlan;
use super::rooms::RoomMap;
use super::WorldError;
use crate::geometry::{footprint, in_frustum_fraction, CameraModel, OrientedBox3, Pose3};

/// Regularizer added to a covariance that fails the definiteness check (m²).
pub const COV_EPSILON: f64 = 1e-6;
const MIN_EIGENVALUE: f64 = 1e-8;

/// One object of the semantic map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapObject {
    pub id: u64,
    pub class_label: String,
    pub obb: OrientedBox3,
    pub active: bool,
    pub n_skip: u32,
    pub n_match: u32,
    pub room_id: u32,
}

impl MapObject {
    pub fn new(id: u64, class_label: impl Into<String>, obb: OrientedBox3) -> Self {
        Self {
            id,
            class_label: class_label.into(),
            obb,
            active: false,
            n_skip: 0,
            n_match: 1,
            room_id: 0,
        }
    }
}

/// Collection of map objects with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectMap {
    objects: Vec<MapObject>,
    next_id: u64,
}

impl ObjectMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_objects(objects: Vec<MapObject>) -> Result<Self, WorldError> {
        let mut seen = BTreeSet::new();
        for o in &objects {
            if !seen.insert(o.id) {
                return Err(WorldError::DuplicateId(o.id));
            }
        }
        let next_id = objects.iter().map(|o| o.id + 1).max().unwrap_or(0);
        Ok(Self { objects, next_id })
    }

    pub fn objects(&self) -> &[MapObject] {
        &self.objects
    }

    pub fn objects_mut(&mut self) -> &mut [MapObject] {
        &mut self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&MapObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Adds an object under a fresh id and returns that id.
    pub fn insert(&mut self, mut object: MapObject) -> u64 {
        object.id = self.next_id;
        self.next_id += 1;
        let id = object.id;
        self.objects.push(object);
        id
    }

    pub fn retain(&mut self, keep: impl FnMut(&MapObject) -> bool) {
        self.objects.retain(keep);
    }

    pub fn clear(&mut self) {
        self.objects.clear();
    }

    /// The class dictionary.
    pub fn classes(&self) -> BTreeSet<String> {
        self.objects.iter().map(|o| o.class_label.clone()).collect()
    }
}

/// Sets each object's room to the label under its footprint center.
pub fn assign_rooms(map: &mut ObjectMap, rooms: &RoomMap) {
    for o in map.objects_mut() {
        o.room_id = rooms.room_at(&footprint(&o.obb).center);
    }
}

/// An object is visible when part of it projects into the image and the
/// straight line from the camera to its footprint center crosses no wall.
pub fn object_visible(obb: &OrientedBox3, cam_pose: &Pose3, cam: &CameraModel, plan: &FloorPlan) -> bool {
    if in_frustum_fraction(obb, cam_pose, cam) <= 0.0 {
        return false;
    }
    let eye = cam_pose.source_origin();
    let from = Vector2::new(eye.x, eye.y);
    let to = footprint(obb).center;
    matches!(plan.raycast(&from, &to), Ok(hit) if hit.is_clear())
}

/// Ground-plane Gaussian over predicted centers for one map object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectGaussian {
    pub object_id: u64,
    pub class_label: String,
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
    inv: Matrix2<f64>,
    peak: f64,
}

impl ObjectGaussian {
    /// Symmetrizes `cov`; if its smallest eigenvalue is not above 1e-8 it
    /// receives `COV_EPSILON · I` and is checked again.
    pub fn new(object_id: u64, class_label: impl Into<String>, mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self, WorldError> {
        let mut cov = (cov + cov.transpose()) * 0.5;
        if min_eigenvalue(&cov) <= MIN_EIGENVALUE {
            cov += Matrix2::identity() * COV_EPSILON;
        }
        let min_eig = min_eigenvalue(&cov);
        if !(min_eig > MIN_EIGENVALUE) || !cov.iter().all(|v| v.is_finite()) {
            return Err(WorldError::NotPositiveDefinite(min_eig));
        }
        let inv = cov.try_inverse().ok_or(WorldError::NotPositiveDefinite(min_eig))?;
        let peak = 1.0 / (2.0 * std::f64::consts::PI * cov.determinant().sqrt());
        Ok(Self {
            object_id,
            class_label: class_label.into(),
            mean,
            cov,
            inv,
            peak,
        })
    }

    pub fn mean(&self) -> Vector2<f64> {
        self.mean
    }

    pub fn cov(&self) -> Matrix2<f64> {
        self.cov
    }

    pub fn inverse_cov(&self) -> Matrix2<f64> {
        self.inv
    }

    pub fn peak_density(&self) -> f64 {
        self.peak
    }

    pub fn mahalanobis_sq(&self, c: &Vector2<f64>) -> f64 {
        let d = c - self.mean;
        (d.transpose() * self.inv * d)[(0, 0)]
    }

    /// Bivariate normal density (1/m²).
    pub fn density(&self, c: &Vector2<f64>) -> f64 {
        self.peak * self.normalized(c)
    }

    /// Density divided by its peak, in [0, 1].
    pub fn normalized(&self, c: &Vector2<f64>) -> f64 {
        (-0.5 * self.mahalanobis_sq(c)).exp()
    }
}

pub fn min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let half_trace = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    half_trace - disc
}

/// The object probability map: one Gaussian per covered map object.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectProbabilityMap {
    gaussians: Vec<ObjectGaussian>,
    by_class: BTreeMap<String, Vec<usize>>,
}

impl ObjectProbabilityMap {
    pub fn new(gaussians: Vec<ObjectGaussian>) -> Self {
        let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, g) in gaussians.iter().enumerate() {
            by_class.entry(g.class_label.clone()).or_default().push(i);
        }
        Self { gaussians, by_class }
    }

    pub fn gaussians(&self) -> &[ObjectGaussian] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn of_class<'a>(&'a self, class: &str) -> impl Iterator<Item = &'a ObjectGaussian> + 'a {
        self.by_class
            .get(class)
            .into_iter()
            .flat_map(move |idx| idx.iter().map(move |&i| &self.gaussians[i]))
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.by_class.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose2, Pose3};
    use crate::worldmodel::floorplan::CellState;
    use crate::worldmodel::rooms::{segment_rooms, RoomSegmentationParams};
    use nalgebra::Vector3;

    fn obj(class: &str, x: f64, y: f64) -> MapObject {
        MapObject::new(0, class, OrientedBox3::upright(Vector3::new(x, y, 0.5), 0.4, 1.0, 0.4, 0.0))
    }

    #[test]
    fn insert_assigns_unique_ids() {
        let mut map = ObjectMap::new();
        let a = map.insert(obj("chair", 0.0, 0.0));
        let b = map.insert(obj("chair", 1.0, 0.0));
        assert_ne!(a, b);
        let dup = ObjectMap::from_objects(vec![obj("a", 0.0, 0.0), obj("b", 1.0, 1.0)]);
        assert!(matches!(dup, Err(WorldError::DuplicateId(0))));
    }

    #[test]
    fn rooms_follow_footprint_center() {
        let mut plan = FloorPlan::filled(120, 60, CellState::Occupied, 0.05, Pose2::identity()).unwrap();
        plan.fill_rect(Vector2::new(0.1, 0.1), Vector2::new(2.9, 2.9), CellState::Free);
        plan.fill_rect(Vector2::new(3.1, 0.1), Vector2::new(5.9, 2.9), CellState::Free);
        // narrow passage that erosion cuts
        plan.fill_rect(Vector2::new(2.9, 1.4), Vector2::new(3.1, 1.6), CellState::Free);
        let rooms = segment_rooms(&plan, &RoomSegmentationParams::default());
        assert_eq!(rooms.room_count(), 2);
        let mut map = ObjectMap::new();
        map.insert(obj("table", 4.5, 1.5));
        map.insert(obj("table", 1.0, 1.0));
        map.insert(obj("table", 3.0, 0.5));
        // center on a room-1 cell whose right neighbor belongs to room 2
        assert_eq!(rooms.room_at(&Vector2::new(3.03, 1.5)), 2);
        map.insert(obj("table", 2.98, 1.5));
        assign_rooms(&mut map, &rooms);
        let ids: Vec<u32> = map.objects().iter().map(|o| o.room_id).collect();
        assert_eq!(ids, vec![2, 1, 0, 1]);
    }

    #[test]
    fn gaussian_regularizes_singular_covariance() {
        let g = ObjectGaussian::new(1, "sink", Vector2::zeros(), Matrix2::zeros()).unwrap();
        assert!((g.cov() - Matrix2::identity() * COV_EPSILON).norm() < 1e-18);
        let g = ObjectGaussian::new(1, "sink", Vector2::zeros(), Matrix2::new(0.04, 0.0, 0.0, 0.01)).unwrap();
        assert_eq!(g.cov(), Matrix2::new(0.04, 0.0, 0.0, 0.01));
        assert!((g.cov() - g.cov().transpose()).norm() < 1e-12);
        assert!(ObjectGaussian::new(1, "sink", Vector2::zeros(), Matrix2::new(1.0, 0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn visibility_needs_frustum_and_clear_line() {
        let mut plan = FloorPlan::filled(100, 40, CellState::Free, 0.05, Pose2::identity()).unwrap();
        let mount = crate::geometry::mounted_camera(Vector3::new(0.0, 0.0, 1.0), 0.0, 0.0);
        let cam = CameraModel::from_focal(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap();
        let robot = Pose2::new(0.5, 1.0, 0.0);
        let w2c: Pose3 = Pose3::world_to_camera(&robot, &mount);
        let ahead = obj("table", 3.5, 1.0).obb;
        let behind = OrientedBox3 {
            center: Vector3::new(0.1, 1.0, 0.5),
            ..ahead
        };
        assert!(object_visible(&ahead, &w2c, &cam, &plan));
        assert!(!object_visible(&behind, &w2c, &cam, &plan));
        for r in 0..40 {
            plan.set(40, r, CellState::Occupied);
        }
        assert!(!object_visible(&ahead, &w2c, &cam, &plan));
    }
}
