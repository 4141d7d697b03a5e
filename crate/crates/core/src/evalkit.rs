//! Map-quality and localization metrics, with table and CSV renderings.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff, iou_box3, Pose2};
use crate::worldmodel::ObjectMap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no estimate could be aligned with a ground-truth pose")]
    EmptyOverlap,
    #[error("no reports to aggregate")]
    NoReports,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassQuality {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_built: usize,
    pub n_gt: usize,
    pub n_matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub built_id: u64,
    pub gt_id: u64,
    pub class_label: String,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapQualityReport {
    pub per_class: BTreeMap<String, ClassQuality>,
    /// Unweighted means over classes.
    pub avg_iou: f64,
    pub avg_precision: f64,
    pub avg_recall: f64,
    pub matches: Vec<MatchedPair>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Greedy same-class matching by descending 3D IoU among pairs whose
/// centers are within `delta` on the ground plane and whose IoU exceeds
/// `match_iou_min`.
pub fn map_quality(built: &ObjectMap, gt: &ObjectMap, match_iou_min: f64, delta: f64) -> MapQualityReport {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (bi, b) in built.objects().iter().enumerate() {
        for (gi, g) in gt.objects().iter().enumerate() {
            if b.class_label != g.class_label || (b.obb.center.xy() - g.obb.center.xy()).norm() > delta {
                continue;
            }
            let iou = iou_box3(&b.obb, &g.obb);
            if iou > match_iou_min {
                candidates.push((iou, bi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut b_used = vec![false; built.len()];
    let mut g_used = vec![false; gt.len()];
    let mut matches = Vec::new();
    for (iou, bi, gi) in candidates {
        if b_used[bi] || g_used[gi] {
            continue;
        }
        b_used[bi] = true;
        g_used[gi] = true;
        let (b, g) = (&built.objects()[bi], &gt.objects()[gi]);
        matches.push(MatchedPair {
            built_id: b.id,
            gt_id: g.id,
            class_label: b.class_label.clone(),
            iou,
        });
    }
    matches.sort_by(|a, b| a.class_label.cmp(&b.class_label).then(a.gt_id.cmp(&b.gt_id)));

    let mut classes = built.classes();
    classes.extend(gt.classes());
    let mut per_class = BTreeMap::new();
    for class in classes {
        let n_built = built.objects().iter().filter(|o| o.class_label == class).count();
        let n_gt = gt.objects().iter().filter(|o| o.class_label == class).count();
        let ious: Vec<f64> = matches.iter().filter(|m| m.class_label == class).map(|m| m.iou).collect();
        let iou = if ious.is_empty() {
            if n_built == 0 && n_gt == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            ious.iter().sum::<f64>() / ious.len() as f64
        };
        per_class.insert(
            class,
            ClassQuality {
                iou,
                precision: ratio(ious.len(), n_built),
                recall: ratio(ious.len(), n_gt),
                n_built,
                n_gt,
                n_matched: ious.len(),
            },
        );
    }
    let mean = |f: fn(&ClassQuality) -> f64| {
        if per_class.is_empty() {
            1.0
        } else {
            per_class.values().map(f).sum::<f64>() / per_class.len() as f64
        }
    };
    MapQualityReport {
        avg_iou: mean(|c| c.iou),
        avg_precision: mean(|c| c.precision),
        avg_recall: mean(|c| c.recall),
        per_class,
        matches,
    }
}

impl MapQualityReport {
    /// Aligned text table: one row per class and an AVG row.
    pub fn to_table(&self) -> String {
        let width = self.per_class.keys().map(String::len).max().unwrap_or(0).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "# averages are unweighted means over classes");
        let _ = writeln!(s, "{:<width$}  {:>6}  {:>6}  {:>6}  {:>5}  {:>5}", "class", "IoU", "Pr", "Rc", "built", "gt");
        for (class, q) in &self.per_class {
            let _ = writeln!(
                s,
                "{:<width$}  {:>6.2}  {:>6.2}  {:>6.2}  {:>5}  {:>5}",
                class, q.iou, q.precision, q.recall, q.n_built, q.n_gt
            );
        }
        let _ = writeln!(s, "{:<width$}  {:>6.2}  {:>6.2}  {:>6.2}", "AVG", self.avg_iou, self.avg_precision, self.avg_recall);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,iou,precision,recall,n_built,n_gt,n_matched\n");
        for (class, q) in &self.per_class {
            let _ = writeln!(s, "{class},{},{},{},{},{},{}", q.iou, q.precision, q.recall, q.n_built, q.n_gt, q.n_matched);
        }
        let _ = writeln!(s, "AVG,{},{},{},,,", self.avg_iou, self.avg_precision, self.avg_recall);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub timestamp_s: f64,
    pub pose: Pose2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceParams {
    pub radius_m: f64,
    pub angle_rad: f64,
    /// Accumulated time the estimate may spend outside the bounds after convergence (s).
    pub divergence_budget_s: f64,
    /// Convergence must happen within this fraction of the sequence.
    pub deadline_fraction: f64,
    /// Maximum timestamp gap for aligning an estimate with ground truth (s).
    pub align_tolerance_s: f64,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        Self {
            radius_m: 0.3,
            angle_rad: FRAC_PI_4,
            divergence_budget_s: 1.5,
            deadline_fraction: 0.95,
            align_tolerance_s: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalizationReport {
    pub converged: bool,
    /// Time from the first aligned sample to convergence (s).
    pub convergence_time_s: f64,
    pub ate_trans_m: f64,
    pub ate_rot_rad: f64,
    pub success: bool,
    pub divergence_time_s: f64,
    pub duration_s: f64,
    pub n_aligned: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedError {
    pub timestamp_s: f64,
    pub trans: f64,
    pub rot: f64,
}

/// Pairs every estimate with the nearest ground-truth pose within the
/// tolerance; unmatched estimates are dropped. Both inputs must be sorted
/// by time.
pub fn align(estimates: &[TimedPose], gt: &[TimedPose], tolerance: f64) -> Vec<AlignedError> {
    let mut out = Vec::with_capacity(estimates.len());
    for e in estimates {
        let i = gt.partition_point(|g| g.timestamp_s < e.timestamp_s);
        let nearest = [i.checked_sub(1), (i < gt.len()).then_some(i)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                (gt[a].timestamp_s - e.timestamp_s)
                    .abs()
                    .total_cmp(&(gt[b].timestamp_s - e.timestamp_s).abs())
            });
        if let Some(j) = nearest {
            if (gt[j].timestamp_s - e.timestamp_s).abs() <= tolerance {
                let g = &gt[j].pose;
                out.push(AlignedError {
                    timestamp_s: e.timestamp_s,
                    trans: (e.pose.translation() - g.translation()).norm(),
                    rot: angle_diff(e.pose.theta, g.theta).abs(),
                });
            }
        }
    }
    out
}

/// Convergence is reached at the first aligned sample within the radius
/// and angle bounds after which the estimate spends at most the divergence
/// budget outside them. A run succeeds when it converges within the
/// deadline fraction of its duration.
pub fn convergence(estimates: &[TimedPose], gt: &[TimedPose], params: &ConvergenceParams) -> Result<LocalizationReport, EvalError> {
    let aligned = align(estimates, gt, params.align_tolerance_s);
    if aligned.is_empty() {
        return Err(EvalError::EmptyOverlap);
    }
    let ok: Vec<bool> = aligned
        .iter()
        .map(|a| a.trans <= params.radius_m && a.rot <= params.angle_rad)
        .collect();
    let n = aligned.len();
    // bad_after[k]: time outside the bounds over samples after k
    let mut bad_after = vec![0.0; n];
    for k in (0..n.saturating_sub(1)).rev() {
        let dt = aligned[k + 1].timestamp_s - aligned[k].timestamp_s;
        bad_after[k] = bad_after[k + 1] + if ok[k + 1] { 0.0 } else { dt };
    }
    let t0 = aligned[0].timestamp_s;
    let duration = aligned[n - 1].timestamp_s - t0;
    let first = (0..n).find(|&k| ok[k] && bad_after[k] <= params.divergence_budget_s);
    Ok(match first {
        Some(k) => {
            let tail = &aligned[k..];
            let rms = |f: fn(&AlignedError) -> f64| (tail.iter().map(|a| f(a) * f(a)).sum::<f64>() / tail.len() as f64).sqrt();
            let convergence_time_s = aligned[k].timestamp_s - t0;
            LocalizationReport {
                converged: true,
                convergence_time_s,
                ate_trans_m: rms(|a| a.trans),
                ate_rot_rad: rms(|a| a.rot),
                success: convergence_time_s <= params.deadline_fraction * duration,
                divergence_time_s: bad_after[k],
                duration_s: duration,
                n_aligned: n,
            }
        }
        None => LocalizationReport {
            converged: false,
            convergence_time_s: f64::NAN,
            ate_trans_m: f64::NAN,
            ate_rot_rad: f64::NAN,
            success: false,
            divergence_time_s: f64::NAN,
            duration_s: duration,
            n_aligned: n,
        },
    })
}

/// Convergence reports for many runs, evaluated in parallel.
pub fn convergence_many(runs: &[(Vec<TimedPose>, Vec<TimedPose>)], params: &ConvergenceParams) -> Vec<Result<LocalizationReport, EvalError>> {
    runs.par_iter().map(|(e, g)| convergence(e, g, params)).collect()
}

pub fn success_rate(reports: &[LocalizationReport]) -> Result<f64, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    Ok(reports.iter().filter(|r| r.success).count() as f64 / reports.len() as f64)
}

/// One method's row of a localization table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub success_rate: f64,
    /// Means over successful runs; NaN when none succeeded.
    pub ate_rot_rad: f64,
    pub ate_trans_m: f64,
    pub convergence_time_s: f64,
}

pub fn summarize(method: &str, reports: &[LocalizationReport]) -> Result<MethodSummary, EvalError> {
    let rate = success_rate(reports)?;
    let ok: Vec<&LocalizationReport> = reports.iter().filter(|r| r.success).collect();
    let mean = |f: fn(&LocalizationReport) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    Ok(MethodSummary {
        method: method.into(),
        runs: reports.len(),
        success_rate: rate,
        ate_rot_rad: mean(|r| r.ate_rot_rad),
        ate_trans_m: mean(|r| r.ate_trans_m),
        convergence_time_s: mean(|r| r.convergence_time_s),
    })
}

/// Aligned text table with success rate, ATE as rad/m and convergence time.
pub fn localization_table(rows: &[MethodSummary]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>4}  {:>7}  {:>13}  {:>9}", "method", "runs", "success", "ATE [rad/m]", "conv [s]");
    for r in rows {
        let ate = format!("{:.3}/{:.3}", r.ate_rot_rad, r.ate_trans_m);
        let _ = writeln!(
            s,
            "{:<width$}  {:>4}  {:>6.0}%  {:>13}  {:>9.1}",
            r.method,
            r.runs,
            r.success_rate * 100.0,
            ate,
            r.convergence_time_s
        );
    }
    s
}

pub fn localization_csv(runs: &[(String, LocalizationReport)]) -> String {
    let mut s = String::from("method,run,converged,success,convergence_time_s,ate_trans_m,ate_rot_rad,divergence_time_s,duration_s\n");
    for (i, (method, r)) in runs.iter().enumerate() {
        let _ = writeln!(
            s,
            "{method},{i},{},{},{},{},{},{},{}",
            r.converged, r.success, r.convergence_time_s, r.ate_trans_m, r.ate_rot_rad, r.divergence_time_s, r.duration_s
        );
    }
    s
}
