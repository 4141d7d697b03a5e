//! Per-class detection-noise models and the object probability map.
//!
//! Predicted centers are matched to ground truth, expressed in the matched
//! object's ground frame, binned on a 5 cm grid and summarized by a 2D
//! Gaussian. Each map object then receives a copy of its class Gaussian,
//! rotated into the object's heading and shifted to its center.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::annotator::GroundTruthObject;
use crate::geometry::{footprint, iou_box3, rot2, OrientedBox3};
use crate::worldmodel::{min_eigenvalue, MapObject, ObjectGaussian, ObjectMap, ObjectProbabilityMap, COV_EPSILON};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("class `{class}` has {found} matched samples, {required} required")]
    InsufficientSamples {
        class: String,
        found: usize,
        required: usize,
    },
    #[error("covariance for class `{0}` is not positive definite")]
    NotPositiveDefinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseFitConfig {
    /// Maximum ground-plane center distance for a prediction to match (m).
    pub delta: f64,
    pub min_samples: usize,
    /// Histogram cell size (m).
    pub bin_size: f64,
}

impl Default for NoiseFitConfig {
    fn default() -> Self {
        Self {
            delta: 1.0,
            min_samples: 10,
            bin_size: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtMatch {
    Matched(u64),
    Discarded,
}

/// Offset of a prediction from its ground-truth object, in the object's ground frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSample {
    pub gt_id: u64,
    pub class_label: String,
    pub offset: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassNoiseModel {
    pub class_label: String,
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
    pub sample_count: usize,
}

pub type NoiseModels = BTreeMap<String, ClassNoiseModel>;

impl ClassNoiseModel {
    pub fn new(class_label: impl Into<String>, mean: Vector2<f64>, cov: Matrix2<f64>, sample_count: usize) -> Result<Self, NoiseError> {
        let class_label = class_label.into();
        let cov = (cov + cov.transpose()) * 0.5;
        if !(min_eigenvalue(&cov) > 1e-8) || !cov.iter().all(|v| v.is_finite()) {
            return Err(NoiseError::NotPositiveDefinite(class_label));
        }
        Ok(Self {
            class_label,
            mean,
            cov,
            sample_count,
        })
    }

    pub fn mean(&self) -> Vector2<f64> {
        self.mean
    }

    pub fn cov(&self) -> Matrix2<f64> {
        self.cov
    }

    pub fn peak_density(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.cov.determinant().sqrt())
    }

    /// Standard deviation along the principal axis (m).
    pub fn max_sigma(&self) -> f64 {
        let m = &self.cov;
        let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
        (0.5 * (a + d) + (0.25 * (a - d) * (a - d) + b * b).sqrt()).sqrt()
    }
}

fn ground_distance(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    (a.center.xy() - b.center.xy()).norm()
}

/// Picks the ground-truth object a prediction belongs to: among same-class
/// objects closer than `delta`, the one with the highest 3D IoU, or the
/// nearest when none overlaps.
pub fn match_to_gt(class: &str, pred: &OrientedBox3, gt: &[GroundTruthObject], delta: f64) -> GtMatch {
    let candidates: Vec<(&GroundTruthObject, f64)> = gt
        .iter()
        .filter(|g| g.class_label == class)
        .map(|g| (g, ground_distance(pred, &g.obb)))
        .filter(|(_, d)| *d < delta)
        .collect();
    if candidates.is_empty() {
        return GtMatch::Discarded;
    }
    let best_iou = candidates
        .iter()
        .map(|(g, d)| (g, *d, iou_box3(pred, &g.obb)))
        .filter(|(_, _, iou)| *iou > 0.0)
        .max_by(|a, b| a.2.total_cmp(&b.2).then(b.0.id.cmp(&a.0.id)));
    if let Some((g, _, _)) = best_iou {
        return GtMatch::Matched(g.id);
    }
    let nearest = candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.id.cmp(&b.0.id)))
        .expect("non-empty");
    GtMatch::Matched(nearest.0.id)
}

/// Prediction center relative to the ground-truth center, rotated into the
/// ground-truth object's heading.
pub fn object_centric_offset(pred: &OrientedBox3, gt: &OrientedBox3) -> Vector2<f64> {
    let yaw = footprint(gt).yaw;
    rot2(-yaw) * (pred.center.xy() - gt.center.xy())
}

/// Matches every prediction and returns the samples of the matched ones.
pub fn collect_samples<'a>(
    predictions: impl IntoIterator<Item = (&'a str, &'a OrientedBox3)>,
    gt: &[GroundTruthObject],
    delta: f64,
) -> Vec<MatchedSample> {
    predictions
        .into_iter()
        .filter_map(|(class, pred)| match match_to_gt(class, pred, gt, delta) {
            GtMatch::Matched(id) => {
                let g = gt.iter().find(|g| g.id == id).expect("matched id exists");
                Some(MatchedSample {
                    gt_id: id,
                    class_label: class.to_string(),
                    offset: object_centric_offset(pred, &g.obb),
                })
            }
            GtMatch::Discarded => None,
        })
        .collect()
}

/// Fits the class Gaussian from a histogram of sample offsets. Bins are
/// centered on multiples of `bin_size`, so an offset of zero lands on a bin
/// center.
pub fn fit_class_model(samples: &[MatchedSample], class: &str, cfg: &NoiseFitConfig) -> Result<ClassNoiseModel, NoiseError> {
    let mut histogram: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    let mut n = 0usize;
    for s in samples.iter().filter(|s| s.class_label == class) {
        let key = (
            (s.offset.x / cfg.bin_size).round() as i64,
            (s.offset.y / cfg.bin_size).round() as i64,
        );
        *histogram.entry(key).or_default() += 1;
        n += 1;
    }
    if n < cfg.min_samples || n == 0 {
        return Err(NoiseError::InsufficientSamples {
            class: class.to_string(),
            found: n,
            required: cfg.min_samples,
        });
    }
    let total = n as f64;
    let center = |k: &(i64, i64)| Vector2::new(k.0 as f64, k.1 as f64) * cfg.bin_size;
    let mean = histogram
        .iter()
        .fold(Vector2::zeros(), |acc, (k, c)| acc + center(k) * (*c as f64))
        / total;
    let mut cov = histogram.iter().fold(Matrix2::zeros(), |acc, (k, c)| {
        let d = center(k) - mean;
        acc + d * d.transpose() * (*c as f64)
    }) / total;
    cov += Matrix2::identity() * COV_EPSILON;
    ClassNoiseModel::new(class, mean, cov, n)
}

/// Fits every class present in `samples`; classes below `min_samples` are
/// skipped and reported in the returned warnings.
pub fn fit_all(samples: &[MatchedSample], cfg: &NoiseFitConfig) -> (NoiseModels, Vec<String>) {
    let classes: std::collections::BTreeSet<&str> = samples.iter().map(|s| s.class_label.as_str()).collect();
    let mut models = NoiseModels::new();
    let mut warnings = Vec::new();
    for class in classes {
        match fit_class_model(samples, class, cfg) {
            Ok(m) => {
                models.insert(class.to_string(), m);
            }
            Err(e) => warnings.push(e.to_string()),
        }
    }
    (models, warnings)
}

/// Places the class Gaussian on a map object: the mean is rotated by the
/// object's ground-plane heading and shifted to its center, the covariance is
/// rotated by the same heading.
pub fn instantiate(model: &ClassNoiseModel, object: &MapObject) -> ObjectGaussian {
    instantiate_on_box(model, object.id, &object.obb)
}

pub fn instantiate_on_box(model: &ClassNoiseModel, object_id: u64, obb: &OrientedBox3) -> ObjectGaussian {
    let fp = footprint(obb);
    let r = rot2(fp.yaw);
    let mean = r * model.mean + fp.center;
    let cov = r * model.cov * r.transpose();
    ObjectGaussian::new(object_id, model.class_label.clone(), mean, cov).expect("rotation preserves definiteness")
}

/// Returns (density in 1/m², density normalized by its peak).
pub fn density(g: &ObjectGaussian, c: &Vector2<f64>) -> (f64, f64) {
    let normalized = g.normalized(c);
    (g.peak_density() * normalized, normalized)
}

/// Builds the object probability map. Objects whose class has no model are
/// skipped and listed in the warnings.
pub fn build_probability_map(models: &NoiseModels, map: &ObjectMap) -> (ObjectProbabilityMap, Vec<String>) {
    let mut gaussians = Vec::with_capacity(map.len());
    let mut warnings = Vec::new();
    for o in map.objects() {
        match models.get(&o.class_label) {
            Some(m) => gaussians.push(instantiate(m, o)),
            None => warnings.push(format!("object {} of class `{}` has no noise model", o.id, o.class_label)),
        }
    }
    (ObjectProbabilityMap::new(gaussians), warnings)
}
