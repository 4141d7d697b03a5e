//! 3D label generation from an annotated world, posed frames and a stream
//! of 2D detections.
//!
//! A ground-truth object becomes a label for a frame only when it is in the
//! camera frustum, not hidden behind a wall, and a 2D detection of the same
//! class overlaps its projection. Frames where the detector fires on nothing
//! of that class therefore produce no labels for it.

use nalgebra::Vector2;

use crate::geometry::{project_box_to_image, BBox2, CameraModel, OrientedBox3, Pose3};
use crate::worldmodel::{FloorPlan, RayHit};

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub id: u64,
    pub class_label: String,
    pub obb: OrientedBox3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection2D {
    pub class_label: String,
    pub bbox: BBox2,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabel {
    pub gt_id: u64,
    pub class_label: String,
    pub box_camera: OrientedBox3,
    /// Projected (image-clipped) box of the object.
    pub bbox2d: BBox2,
    /// Fraction of the object outside the frustum.
    pub truncation: f64,
    /// Overlap of the projected and the matched detected box.
    pub visibility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorConfig {
    /// Minimum 2D IoU between projected and detected boxes.
    pub tau_2d: f64,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self { tau_2d: 0.25 }
    }
}

/// Re-expresses a world-frame box in the camera frame.
pub fn box_world_to_camera(obb: &OrientedBox3, cam_pose: &Pose3) -> OrientedBox3 {
    obb.transformed(cam_pose)
}

struct Candidate<'a> {
    gt: &'a GroundTruthObject,
    projected: BBox2,
    fraction: f64,
}

pub fn annotate_frame(
    gt: &[GroundTruthObject],
    cam_pose: &Pose3,
    cam: &CameraModel,
    det2d: &[Detection2D],
    plan: &FloorPlan,
    cfg: &AnnotatorConfig,
) -> Vec<FrameLabel> {
    let eye = cam_pose.source_origin();
    let eye = Vector2::new(eye.x, eye.y);
    let candidates: Vec<Candidate> = gt
        .iter()
        .filter_map(|g| {
            let (projected, fraction) = project_box_to_image(&g.obb, cam_pose, cam).ok()?;
            if fraction <= 0.0 {
                return None;
            }
            let target = Vector2::new(g.obb.center.x, g.obb.center.y);
            match plan.raycast(&eye, &target) {
                Ok(RayHit::Clear) => Some(Candidate { gt: g, projected, fraction }),
                _ => None,
            }
        })
        .collect();

    // greedy per-class matching by descending IoU
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ci, c) in candidates.iter().enumerate() {
        for (di, d) in det2d.iter().enumerate() {
            if d.class_label != c.gt.class_label {
                continue;
            }
            let iou = c.projected.iou(&d.bbox);
            if iou >= cfg.tau_2d {
                pairs.push((iou, ci, di));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut cand_used = vec![false; candidates.len()];
    let mut det_used = vec![false; det2d.len()];
    let mut matched: Vec<(usize, f64)> = Vec::new();
    for (iou, ci, di) in pairs {
        if cand_used[ci] || det_used[di] {
            continue;
        }
        cand_used[ci] = true;
        det_used[di] = true;
        matched.push((ci, iou));
    }
    matched.sort_by_key(|m| m.0);
    matched
        .into_iter()
        .map(|(ci, iou)| {
            let c = &candidates[ci];
            FrameLabel {
                gt_id: c.gt.id,
                class_label: c.gt.class_label.clone(),
                box_camera: box_world_to_camera(&c.gt.obb, cam_pose),
                bbox2d: c.projected,
                truncation: 1.0 - c.fraction,
                visibility: iou,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{footprint, in_frustum_fraction, mounted_camera, yaw_rotation, Pose2};
    use crate::worldmodel::CellState;
    use nalgebra::{Matrix3, Vector3};
    use std::f64::consts::PI;

    fn cam() -> CameraModel {
        CameraModel::from_focal(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn open_plan() -> FloorPlan {
        FloorPlan::filled(200, 200, CellState::Free, 0.05, Pose2::identity()).unwrap()
    }

    fn view() -> Pose3 {
        Pose3::world_to_camera(&Pose2::new(1.0, 5.0, 0.0), &mounted_camera(Vector3::new(0.0, 0.0, 1.0), 0.0, 0.0))
    }

    fn gt(id: u64, class: &str, x: f64, y: f64) -> GroundTruthObject {
        GroundTruthObject {
            id,
            class_label: class.into(),
            obb: OrientedBox3::upright(Vector3::new(x, y, 0.5), 0.8, 1.0, 0.6, 0.3),
        }
    }

    /// A detection that overlaps the projection of `g` with IoU 0.8.
    fn detection_for(g: &GroundTruthObject) -> Detection2D {
        let (bb, _) = project_box_to_image(&g.obb, &view(), &cam()).unwrap();
        // shrink symmetrically so area ratio is 0.8
        let s = 0.8f64.sqrt();
        let c = (bb.min + bb.max) * 0.5;
        let half = (bb.max - bb.min) * 0.5 * s;
        Detection2D {
            class_label: g.class_label.clone(),
            bbox: BBox2::new(c - half, c + half),
            confidence: 0.9,
        }
    }

    #[test]
    fn visible_matched_object_yields_untruncated_label() {
        let table = gt(7, "table", 4.0, 5.0);
        let det = detection_for(&table);
        let labels = annotate_frame(&[table.clone()], &view(), &cam(), &[det], &open_plan(), &AnnotatorConfig::default());
        assert_eq!(labels.len(), 1);
        let l = &labels[0];
        assert_eq!(l.gt_id, 7);
        assert_eq!(l.truncation, 0.0);
        assert!((l.visibility - 0.8).abs() < 1e-9);
        assert!((l.truncation + in_frustum_fraction(&table.obb, &view(), &cam()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn closed_door_detections_produce_nothing() {
        // only a door is detected; it overlaps no ground-truth class
        let objects = [gt(1, "table", 4.0, 5.0), gt(2, "drawers", 4.0, 4.0)];
        let door = Detection2D {
            class_label: "door".into(),
            bbox: BBox2::from_array([200.0, 100.0, 400.0, 400.0]),
            confidence: 0.95,
        };
        let labels = annotate_frame(&objects, &view(), &cam(), &[door], &open_plan(), &AnnotatorConfig::default());
        assert!(labels.is_empty());
    }

    #[test]
    fn only_detected_classes_are_labeled() {
        let objects = [
            gt(1, "table", 4.0, 5.5),
            gt(2, "board", 5.0, 4.2),
            gt(3, "drawers", 3.5, 4.4),
        ];
        let dets = vec![detection_for(&objects[0]), detection_for(&objects[1])];
        let labels = annotate_frame(&objects, &view(), &cam(), &dets, &open_plan(), &AnnotatorConfig::default());
        let ids: Vec<u64> = labels.iter().map(|l| l.gt_id).collect();
        assert_eq!(ids, vec![1, 2]);
        assert!(labels.len() <= dets.len());
    }

    #[test]
    fn walls_and_frustum_gate_labels() {
        let table = gt(1, "table", 4.0, 5.0);
        let det = detection_for(&table);
        let mut plan = open_plan();
        for r in 0..200 {
            plan.set(50, r, CellState::Occupied);
        }
        assert!(annotate_frame(&[table.clone()], &view(), &cam(), &[det.clone()], &plan, &AnnotatorConfig::default()).is_empty());
        let behind = gt(1, "table", -2.0, 5.0);
        let plan = FloorPlan::filled(200, 200, CellState::Free, 0.05, Pose2::new(-5.0, 0.0, 0.0)).unwrap();
        assert!(annotate_frame(&[behind], &view(), &cam(), &[det], &plan, &AnnotatorConfig::default()).is_empty());
    }

    #[test]
    fn camera_frame_box_cases() {
        let obb = OrientedBox3::upright(Vector3::new(1.0, 2.0, 0.5), 1.0, 1.0, 2.0, 0.4);
        assert_eq!(box_world_to_camera(&obb, &Pose3::identity()), obb);
        let t = Vector3::new(0.5, -1.0, 2.0);
        let translated = Pose3 {
            rotation: Matrix3::identity(),
            translation: -t,
        };
        let shifted = box_world_to_camera(&obb, &translated);
        assert!((shifted.center - (obb.center - t)).norm() < 1e-12);
        // a camera yawed +90° in the world sees the box yawed -90°
        let cam_to_world = Pose3 {
            rotation: yaw_rotation(PI / 2.0),
            translation: Vector3::zeros(),
        };
        let in_cam = box_world_to_camera(&obb, &cam_to_world.inverse());
        let yaw = footprint(&in_cam).yaw;
        assert!((yaw - (0.4 - PI / 2.0)).abs() < 1e-12);
        assert_eq!(in_cam.dims, obb.dims);
    }
}
