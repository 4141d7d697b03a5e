//! File formats: JSON documents and JSON-lines streams for maps, models,
//! frames, detections and filter output.
//!
//! Wire structs mirror the documents field by field and convert to and from
//! the library types. Readers report the file and, for JSON-lines, the
//! 1-based line of the first malformed record.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{Detection2D, FrameLabel, GroundTruthObject};
use crate::geometry::{BBox2, OrientedBox3, Pose2, Pose3};
use crate::localizer::Observation;
use crate::mapper::{Detection3D, IntegrationEvent, MappingFrame};
use crate::noisemodel::{ClassNoiseModel, NoiseModels};
use crate::simulator::{Frame2D, LocalizationEvent, OdomEvent, Prediction};
use crate::worldmodel::{MapObject, ObjectGaussian, ObjectMap, ObjectProbabilityMap};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Line { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Document { path: PathBuf, message: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Document {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Document {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(file_err(path))
}

/// Reads one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = fs::File::open(path).map_err(file_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(file_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| IoError::Line {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(file_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| IoError::Document {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(file_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

/// Converts records read from `path`, reporting conversion failures with
/// the record's line number.
fn convert_lines<W, T>(path: &Path, records: Vec<W>, f: impl Fn(W) -> Result<T, String>) -> Result<Vec<T>, IoError>
where
    W: Serialize,
{
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            f(r).map_err(|message| IoError::Line {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            })
        })
        .collect()
}

fn doc_err(path: &Path) -> impl Fn(String) -> IoError + '_ {
    move |message| IoError::Document {
        path: path.to_path_buf(),
        message,
    }
}

fn mat3_rows(m: &Matrix3<f64>) -> [f64; 9] {
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
}

fn mat3_from_rows(r: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(r)
}

fn mat2_rows(m: &Matrix2<f64>) -> [f64; 4] {
    [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]
}

fn mat2_from_rows(r: &[f64; 4]) -> Matrix2<f64> {
    Matrix2::from_row_slice(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    /// Row-major 3×3.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&Pose3> for PoseJson {
    fn from(p: &Pose3) -> Self {
        Self {
            rotation: mat3_rows(&p.rotation),
            translation: p.translation.into(),
        }
    }
}

impl PoseJson {
    pub fn to_pose(&self) -> Result<Pose3, String> {
        Pose3::new(mat3_from_rows(&self.rotation), Vector3::from(self.translation)).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxJson {
    pub center: [f64; 3],
    /// [W, H, L]
    pub dims: [f64; 3],
    /// Row-major 3×3.
    pub rotation: [f64; 9],
}

impl From<&OrientedBox3> for BoxJson {
    fn from(b: &OrientedBox3) -> Self {
        Self {
            center: b.center.into(),
            dims: b.dims.into(),
            rotation: mat3_rows(&b.rotation),
        }
    }
}

impl BoxJson {
    pub fn to_box(&self) -> Result<OrientedBox3, String> {
        OrientedBox3::new(Vector3::from(self.center), Vector3::from(self.dims), mat3_from_rows(&self.rotation)).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectJson {
    pub id: u64,
    pub class: String,
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub rotation: [f64; 9],
    #[serde(default = "one")]
    pub n_match: u32,
    #[serde(default)]
    pub n_skip: u32,
    #[serde(default)]
    pub room_id: u32,
}

fn one() -> u32 {
    1
}

impl From<&MapObject> for ObjectJson {
    fn from(o: &MapObject) -> Self {
        let b = BoxJson::from(&o.obb);
        Self {
            id: o.id,
            class: o.class_label.clone(),
            center: b.center,
            dims: b.dims,
            rotation: b.rotation,
            n_match: o.n_match,
            n_skip: o.n_skip,
            room_id: o.room_id,
        }
    }
}

impl ObjectJson {
    pub fn to_object(&self) -> Result<MapObject, String> {
        let obb = BoxJson {
            center: self.center,
            dims: self.dims,
            rotation: self.rotation,
        }
        .to_box()
        .map_err(|e| format!("object {}: {e}", self.id))?;
        Ok(MapObject {
            id: self.id,
            class_label: self.class.clone(),
            obb,
            active: false,
            n_skip: self.n_skip,
            n_match: self.n_match,
            room_id: self.room_id,
        })
    }
}

pub fn object_map_to_json(map: &ObjectMap) -> Vec<ObjectJson> {
    map.objects().iter().map(ObjectJson::from).collect()
}

pub fn read_object_map(path: &Path) -> Result<ObjectMap, IoError> {
    let docs: Vec<ObjectJson> = read_json(path)?;
    let objects = docs.iter().map(ObjectJson::to_object).collect::<Result<Vec<_>, _>>().map_err(doc_err(path))?;
    ObjectMap::from_objects(objects).map_err(|e| doc_err(path)(e.to_string()))
}

pub fn write_object_map(path: &Path, map: &ObjectMap) -> Result<(), IoError> {
    write_json(path, &object_map_to_json(map))
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthObject>, IoError> {
    Ok(read_object_map(path)?
        .objects()
        .iter()
        .map(|o| GroundTruthObject {
            id: o.id,
            class_label: o.class_label.clone(),
            obb: o.obb,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianJson {
    pub object_id: u64,
    pub class: String,
    pub mean: [f64; 2],
    pub cov: [f64; 4],
}

pub fn write_probability_map(path: &Path, m: &ObjectProbabilityMap) -> Result<(), IoError> {
    let docs: Vec<GaussianJson> = m
        .gaussians()
        .iter()
        .map(|g| GaussianJson {
            object_id: g.object_id,
            class: g.class_label.clone(),
            mean: g.mean().into(),
            cov: mat2_rows(&g.cov()),
        })
        .collect();
    write_json(path, &docs)
}

pub fn read_probability_map(path: &Path) -> Result<ObjectProbabilityMap, IoError> {
    let docs: Vec<GaussianJson> = read_json(path)?;
    let gaussians = docs
        .into_iter()
        .map(|d| ObjectGaussian::new(d.object_id, d.class, Vector2::from(d.mean), mat2_from_rows(&d.cov)).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(doc_err(path))?;
    Ok(ObjectProbabilityMap::new(gaussians))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModelJson {
    pub class: String,
    pub mean: [f64; 2],
    pub cov: [f64; 4],
    pub n: usize,
}

pub fn write_noise_models(path: &Path, models: &NoiseModels) -> Result<(), IoError> {
    let docs: Vec<ClassModelJson> = models
        .values()
        .map(|m| ClassModelJson {
            class: m.class_label.clone(),
            mean: m.mean().into(),
            cov: mat2_rows(&m.cov()),
            n: m.sample_count,
        })
        .collect();
    write_json(path, &docs)
}

pub fn read_noise_models(path: &Path) -> Result<NoiseModels, IoError> {
    let docs: Vec<ClassModelJson> = read_json(path)?;
    let mut out = NoiseModels::new();
    for d in docs {
        let m = ClassNoiseModel::new(d.class.clone(), Vector2::from(d.mean), mat2_from_rows(&d.cov), d.n).map_err(|e| doc_err(path)(e.to_string()))?;
        out.insert(d.class, m);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionJson {
    pub class: String,
    pub confidence: f64,
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub rotation: [f64; 9],
}

impl From<&Detection3D> for DetectionJson {
    fn from(d: &Detection3D) -> Self {
        let b = BoxJson::from(&d.box_camera);
        Self {
            class: d.class_label.clone(),
            confidence: d.confidence,
            center: b.center,
            dims: b.dims,
            rotation: b.rotation,
        }
    }
}

impl DetectionJson {
    pub fn to_detection(&self) -> Result<Detection3D, String> {
        let box_camera = BoxJson {
            center: self.center,
            dims: self.dims,
            rotation: self.rotation,
        }
        .to_box()?;
        Ok(Detection3D {
            class_label: self.class.clone(),
            confidence: self.confidence,
            box_camera,
        })
    }
}

/// One line of the mapping input stream. `cam_pose` is world→camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingFrameJson {
    pub frame_id: u64,
    pub timestamp_s: f64,
    pub robot_pose: Pose2,
    pub cam_pose: PoseJson,
    pub detections: Vec<DetectionJson>,
}

impl From<&MappingFrame> for MappingFrameJson {
    fn from(f: &MappingFrame) -> Self {
        Self {
            frame_id: f.frame_id,
            timestamp_s: f.timestamp_s,
            robot_pose: f.robot_pose,
            cam_pose: PoseJson::from(&f.cam_pose),
            detections: f.detections.iter().map(DetectionJson::from).collect(),
        }
    }
}

pub fn write_mapping_frames(path: &Path, frames: &[MappingFrame]) -> Result<(), IoError> {
    let docs: Vec<MappingFrameJson> = frames.iter().map(MappingFrameJson::from).collect();
    write_jsonl(path, &docs)
}

pub fn read_mapping_frames(path: &Path) -> Result<Vec<MappingFrame>, IoError> {
    convert_lines(path, read_jsonl::<MappingFrameJson>(path)?, |f| {
        Ok(MappingFrame {
            frame_id: f.frame_id,
            timestamp_s: f.timestamp_s,
            robot_pose: f.robot_pose,
            cam_pose: f.cam_pose.to_pose()?,
            detections: f.detections.iter().map(DetectionJson::to_detection).collect::<Result<_, _>>()?,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LocalizationEventJson {
    Odom {
        timestamp_s: f64,
        delta: Pose2,
    },
    Obs {
        timestamp_s: f64,
        detections: Vec<DetectionJson>,
        cam_pose_in_robot: PoseJson,
    },
}

impl From<&LocalizationEvent> for LocalizationEventJson {
    fn from(e: &LocalizationEvent) -> Self {
        match e {
            LocalizationEvent::Odom(o) => LocalizationEventJson::Odom {
                timestamp_s: o.timestamp_s,
                delta: o.delta,
            },
            LocalizationEvent::Obs { timestamp_s, observation } => LocalizationEventJson::Obs {
                timestamp_s: *timestamp_s,
                detections: observation.detections.iter().map(DetectionJson::from).collect(),
                cam_pose_in_robot: PoseJson::from(&observation.cam_pose_in_robot),
            },
        }
    }
}

pub fn write_localization_events(path: &Path, events: &[LocalizationEvent]) -> Result<(), IoError> {
    let docs: Vec<LocalizationEventJson> = events.iter().map(LocalizationEventJson::from).collect();
    write_jsonl(path, &docs)
}

pub fn read_localization_events(path: &Path) -> Result<Vec<LocalizationEvent>, IoError> {
    convert_lines(path, read_jsonl::<LocalizationEventJson>(path)?, |e| match e {
        LocalizationEventJson::Odom { timestamp_s, delta } => Ok(LocalizationEvent::Odom(OdomEvent { timestamp_s, delta })),
        LocalizationEventJson::Obs {
            timestamp_s,
            detections,
            cam_pose_in_robot,
        } => Ok(LocalizationEvent::Obs {
            timestamp_s,
            observation: Observation {
                detections: detections.iter().map(DetectionJson::to_detection).collect::<Result<_, _>>()?,
                cam_pose_in_robot: cam_pose_in_robot.to_pose()?,
            },
        }),
    })
}

/// One line of the localization output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateJson {
    pub timestamp_s: f64,
    pub estimate: Pose2,
    pub n_eff: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPoseJson {
    pub timestamp_s: f64,
    pub pose: Pose2,
}

/// Posed-frame index line for the annotator; `cam_pose` is world→camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameIndexJson {
    pub frame_id: u64,
    pub timestamp_s: f64,
    pub cam_pose: PoseJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection2DJson {
    pub frame_id: u64,
    pub class: String,
    pub bbox: [f64; 4],
    pub confidence: f64,
}

impl Detection2DJson {
    pub fn to_detection(&self) -> Detection2D {
        Detection2D {
            class_label: self.class.clone(),
            bbox: BBox2::from_array(self.bbox),
            confidence: self.confidence,
        }
    }
}

/// Frame index and flat 2D-detection records for a list of frames.
pub fn frames_2d_to_json(frames: &[Frame2D]) -> (Vec<FrameIndexJson>, Vec<Detection2DJson>) {
    let mut index = Vec::with_capacity(frames.len());
    let mut dets = Vec::new();
    for f in frames {
        let w2c = Pose3::world_to_camera(&f.robot_pose, &f.cam_pose_in_robot.inverse());
        index.push(FrameIndexJson {
            frame_id: f.frame_id,
            timestamp_s: f.timestamp_s,
            cam_pose: PoseJson::from(&w2c),
        });
        dets.extend(f.detections.iter().map(|d| Detection2DJson {
            frame_id: f.frame_id,
            class: d.class_label.clone(),
            bbox: d.bbox.to_array(),
            confidence: d.confidence,
        }));
    }
    (index, dets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelJson {
    pub gt_id: u64,
    pub class: String,
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub rotation: [f64; 9],
    pub bbox2d: [f64; 4],
    pub truncation: f64,
    pub visibility: f64,
}

impl From<&FrameLabel> for LabelJson {
    fn from(l: &FrameLabel) -> Self {
        let b = BoxJson::from(&l.box_camera);
        Self {
            gt_id: l.gt_id,
            class: l.class_label.clone(),
            center: b.center,
            dims: b.dims,
            rotation: b.rotation,
            bbox2d: l.bbox2d.to_array(),
            truncation: l.truncation,
            visibility: l.visibility,
        }
    }
}

/// Labels of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabelsJson {
    pub frame_id: u64,
    pub cam_pose: PoseJson,
    pub labels: Vec<LabelJson>,
}

/// A world-frame prediction line for noise fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionJson {
    pub frame_id: u64,
    pub class: String,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
    #[serde(rename = "box")]
    pub obb: BoxJson,
}

fn full_confidence() -> f64 {
    1.0
}

impl From<&Prediction> for PredictionJson {
    fn from(p: &Prediction) -> Self {
        Self {
            frame_id: p.frame_id,
            class: p.class_label.clone(),
            confidence: 1.0,
            obb: BoxJson::from(&p.obb),
        }
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, IoError> {
    convert_lines(path, read_jsonl::<PredictionJson>(path)?, |p| {
        Ok(Prediction {
            frame_id: p.frame_id,
            class_label: p.class,
            obb: p.obb.to_box()?,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationEventJson {
    pub frame_id: u64,
    pub timestamp_s: f64,
    pub robot_room: u32,
    pub merged: usize,
    pub added: usize,
    pub dropped_cross_room: usize,
    /// [kept id, absorbed id]
    pub consolidated: Vec<[u64; 2]>,
    pub purged: Vec<u64>,
    pub global_size: usize,
}

impl From<&IntegrationEvent> for IntegrationEventJson {
    fn from(e: &IntegrationEvent) -> Self {
        Self {
            frame_id: e.frame_id,
            timestamp_s: e.timestamp_s,
            robot_room: e.outcome.robot_room,
            merged: e.outcome.merged,
            added: e.outcome.added,
            dropped_cross_room: e.outcome.dropped_cross_room,
            consolidated: e.outcome.consolidated.iter().map(|&(a, b)| [a, b]).collect(),
            purged: e.outcome.purged.clone(),
            global_size: e.global_size,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::yaw_rotation;

    fn map() -> ObjectMap {
        let mut m = ObjectMap::new();
        let mut o = MapObject::new(0, "chair", OrientedBox3::upright(Vector3::new(1.0, 2.0, 0.45), 0.5, 0.9, 0.5, 0.7));
        o.n_match = 4;
        o.n_skip = 1;
        o.room_id = 2;
        m.insert(o);
        m.insert(MapObject::new(0, "table", OrientedBox3::upright(Vector3::new(-1.0, 0.5, 0.4), 1.2, 0.8, 0.8, -2.0)));
        m
    }

    #[test]
    fn object_map_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("map.json");
        write_object_map(&p, &map()).unwrap();
        let back = object_map_to_json(&read_object_map(&p).unwrap());
        let orig = object_map_to_json(&map());
        assert_eq!(back.len(), orig.len());
        for (a, b) in back.iter().zip(&orig) {
            assert_eq!((a.id, &a.class, a.n_match, a.n_skip, a.room_id), (b.id, &b.class, b.n_match, b.n_skip, b.room_id));
            assert_eq!((a.center, a.dims), (b.center, b.dims));
            assert!(a.rotation.iter().zip(&b.rotation).all(|(x, y)| (x - y).abs() < 1e-12));
        }
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"class\": \"chair\"") && text.contains("\"room_id\": 2"));
    }

    #[test]
    fn malformed_line_is_reported_with_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.jsonl");
        let mut f = fs::File::create(&p).unwrap();
        writeln!(f, r#"{{"type":"odom","timestamp_s":0.1,"delta":{{"x":0.1,"y":0.0,"theta":0.0}}}}"#).unwrap();
        writeln!(f).unwrap();
        writeln!(f, r#"{{"type":"odom","timestamp_s":0.2,"delta":{{"x":0.1,"y":0.0}}"#).unwrap();
        drop(f);
        let err = read_localization_events(&p).unwrap_err();
        assert!(matches!(err, IoError::Line { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn invalid_rotation_is_rejected() {
        let mut docs = object_map_to_json(&map());
        docs[0].rotation[0] = 2.0;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        write_json(&p, &docs).unwrap();
        assert!(matches!(read_object_map(&p), Err(IoError::Document { .. })));
    }

    #[test]
    fn localization_events_round_trip() {
        let obs = Observation {
            detections: vec![Detection3D {
                class_label: "chair".into(),
                confidence: 0.7,
                box_camera: OrientedBox3 {
                    rotation: yaw_rotation(0.3),
                    ..OrientedBox3::upright(Vector3::new(0.0, 0.2, 3.0), 0.5, 0.9, 0.5, 0.0)
                },
            }],
            cam_pose_in_robot: Pose3 {
                rotation: yaw_rotation(0.1),
                translation: Vector3::new(0.1, 0.0, 1.0),
            },
        };
        let events = vec![
            LocalizationEvent::Odom(OdomEvent {
                timestamp_s: 0.1,
                delta: Pose2::new(0.05, 0.0, 0.01),
            }),
            LocalizationEvent::Obs {
                timestamp_s: 0.1,
                observation: obs,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loc.jsonl");
        write_localization_events(&p, &events).unwrap();
        assert_eq!(read_localization_events(&p).unwrap(), events);
        let first = fs::read_to_string(&p).unwrap();
        assert!(first.starts_with(r#"{"type":"odom""#));
    }

    #[test]
    fn models_and_probability_maps_round_trip() {
        let mut models = NoiseModels::new();
        models.insert(
            "chair".into(),
            ClassNoiseModel::new("chair", Vector2::new(0.1, 0.0), Matrix2::new(0.04, 0.001, 0.001, 0.01), 250).unwrap(),
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("models.json");
        write_noise_models(&p, &models).unwrap();
        assert_eq!(read_noise_models(&p).unwrap(), models);
        let (mp, _) = crate::noisemodel::build_probability_map(&models, &map());
        let q = dir.path().join("mp.json");
        write_probability_map(&q, &mp).unwrap();
        let back = read_probability_map(&q).unwrap();
        let (g, h) = (&back.gaussians()[0], &mp.gaussians()[0]);
        assert_eq!((g.object_id, &g.class_label), (h.object_id, &h.class_label));
        assert!((g.mean() - h.mean()).norm() < 1e-12 && (g.cov() - h.cov()).norm() < 1e-12);
    }
}
