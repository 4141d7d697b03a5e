use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use semloc_core::annotator::{annotate_frame, Detection2D};
use semloc_core::evalkit::{convergence, localization_csv, localization_table, map_quality, summarize, ConvergenceParams, LocalizationReport, MethodSummary, TimedPose};
use semloc_core::geometry::Pose2;
use semloc_core::io::{self, Detection2DJson, EstimateJson, FrameIndexJson, FrameLabelsJson, IntegrationEventJson, LabelJson, PredictionJson, TimedPoseJson};
use semloc_core::localizer::{Mcl, Particle, SensorMaps, SensorModel};
use semloc_core::mapper::Mapper;
use semloc_core::noisemodel::{build_probability_map, collect_samples, fit_all};
use semloc_core::simulator::{generate_trajectory, generate_world, simulate_run, LocalizationEvent, RunSpec};
use semloc_core::worldmodel::{segment_rooms, FloorPlan, ObjectMap};

use crate::config::{required, RunConfig};

fn load_plan(path: &Path) -> Result<FloorPlan> {
    FloorPlan::load(path).with_context(|| format!("loading floor plan {}", path.display()))
}

fn log_written(path: &Path) {
    info!("wrote {}", path.display());
}

pub fn annotate(cfg: &RunConfig) -> Result<()> {
    let a = &cfg.annotate;
    let plan = load_plan(required(&a.floor_plan, "annotate.floor_plan")?)?;
    let gt = io::read_ground_truth(required(&a.gt_map, "annotate.gt_map")?)?;
    let frames: Vec<FrameIndexJson> = io::read_jsonl(required(&a.frames, "annotate.frames")?)?;
    let records: Vec<Detection2DJson> = io::read_jsonl(required(&a.detections, "annotate.detections")?)?;
    let cam = cfg.camera.model()?;

    let mut by_frame: BTreeMap<u64, Vec<Detection2D>> = BTreeMap::new();
    for r in &records {
        by_frame.entry(r.frame_id).or_default().push(r.to_detection());
    }
    let known: std::collections::BTreeSet<u64> = frames.iter().map(|f| f.frame_id).collect();
    let orphans = by_frame.keys().filter(|id| !known.contains(id)).count();
    if orphans > 0 {
        warn!("{orphans} frame ids in the detections have no posed frame; ignored");
    }

    let out: Vec<FrameLabelsJson> = frames
        .par_iter()
        .map(|f| {
            let cam_pose = f.cam_pose.to_pose().map_err(|e| anyhow::anyhow!("frame {}: {e}", f.frame_id))?;
            let dets = by_frame.get(&f.frame_id).map(Vec::as_slice).unwrap_or(&[]);
            let labels = annotate_frame(&gt, &cam_pose, &cam, dets, &plan, &a.annotator);
            Ok(FrameLabelsJson {
                frame_id: f.frame_id,
                cam_pose: f.cam_pose.clone(),
                labels: labels.iter().map(LabelJson::from).collect(),
            })
        })
        .collect::<Result<_>>()?;
    let n_labels: usize = out.iter().map(|f| f.labels.len()).sum();
    let path = cfg.out.join("labels.jsonl");
    io::write_jsonl(&path, &out)?;
    let back: Vec<FrameLabelsJson> = io::read_jsonl(&path)?;
    if back.len() != out.len() {
        bail!("{}: expected {} frames, read {}", path.display(), out.len(), back.len());
    }
    info!("{n_labels} labels over {} frames", out.len());
    log_written(&path);
    Ok(())
}

pub fn fit_noise(cfg: &RunConfig) -> Result<()> {
    let f = &cfg.fit_noise;
    let preds = io::read_predictions(required(&f.predictions, "fit_noise.predictions")?)?;
    let gt_path = required(&f.gt_map, "fit_noise.gt_map")?;
    let gt_map = io::read_object_map(gt_path)?;
    let gt = io::read_ground_truth(gt_path)?;

    let samples = collect_samples(preds.iter().map(|p| (p.class_label.as_str(), &p.obb)), &gt, f.fit.delta);
    info!("{} of {} predictions matched a ground-truth object", samples.len(), preds.len());
    let (models, warnings) = fit_all(&samples, &f.fit);
    for w in &warnings {
        warn!("{w}; class skipped");
    }
    if models.is_empty() {
        warn!("no class could be fitted");
    }
    for m in models.values() {
        let (mu, c) = (m.mean(), m.cov());
        info!(
            "{}: n {} mean ({:.3}, {:.3}) cov [{:.4} {:.4}; {:.4} {:.4}]",
            m.class_label, m.sample_count, mu.x, mu.y, c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]
        );
    }
    let models_path = cfg.out.join("class_models.json");
    io::write_noise_models(&models_path, &models)?;
    io::read_noise_models(&models_path)?;
    log_written(&models_path);

    let (m_p, warnings) = build_probability_map(&models, &gt_map);
    for w in &warnings {
        warn!("{w}");
    }
    let mp_path = cfg.out.join("probability_map.json");
    io::write_probability_map(&mp_path, &m_p)?;
    io::read_probability_map(&mp_path)?;
    log_written(&mp_path);
    Ok(())
}

pub fn build_map(cfg: &RunConfig) -> Result<()> {
    let b = &cfg.build_map;
    let plan = load_plan(required(&b.floor_plan, "build_map.floor_plan")?)?;
    let frames = io::read_mapping_frames(required(&b.frames, "build_map.frames")?)?;
    let models = match &b.noise_models {
        Some(p) => Some(io::read_noise_models(p)?),
        None => {
            warn!("no class models given; association uses the IoU cost only");
            None
        }
    };
    let rooms = segment_rooms(&plan, &b.rooms);
    info!("{} rooms, {} frames", rooms.room_count(), frames.len());
    let cam = cfg.camera.model()?;
    let mut mapper = match &b.resume_map {
        Some(p) => {
            let prior = io::read_object_map(p)?;
            info!("resuming from {} objects", prior.len());
            Mapper::resume(b.mapper, cam, plan, rooms, models, prior)
        }
        None => Mapper::new(b.mapper, cam, plan, rooms, models),
    };
    for f in &frames {
        mapper.process(f);
    }
    let map = mapper.finish();
    info!("{} objects after {} integrations", map.len(), mapper.events().len());

    let map_path = cfg.out.join("map.json");
    io::write_object_map(&map_path, &map)?;
    let back = io::read_object_map(&map_path)?;
    if back.len() != map.len() {
        bail!("{}: expected {} objects, read {}", map_path.display(), map.len(), back.len());
    }
    log_written(&map_path);
    if b.event_log {
        let events: Vec<IntegrationEventJson> = mapper.events().iter().map(IntegrationEventJson::from).collect();
        let path = cfg.out.join("integration_events.jsonl");
        io::write_jsonl(&path, &events)?;
        io::read_jsonl::<IntegrationEventJson>(&path)?;
        log_written(&path);
    }
    Ok(())
}

/// Weighted RMS distance of the particles from `estimate` (m).
pub fn spread(particles: &[Particle], estimate: &Pose2) -> f64 {
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    if total <= 0.0 {
        return f64::INFINITY;
    }
    let c = estimate.translation();
    let s: f64 = particles.iter().map(|p| p.weight * (p.pose.translation() - c).norm_squared()).sum();
    (s / total).sqrt()
}

/// Runs the filter once over `events`. An estimate counts as converged when
/// the particle spread is within `radius_m`.
pub fn run_filter(
    mcl_cfg: semloc_core::localizer::MclConfig,
    plan: &FloorPlan,
    maps: &SensorMaps,
    events: &[LocalizationEvent],
    seed: u64,
    radius_m: f64,
) -> Vec<EstimateJson> {
    let mut mcl = Mcl::new(mcl_cfg, plan, ChaCha8Rng::seed_from_u64(seed));
    events
        .iter()
        .map(|e| {
            let s = match e {
                LocalizationEvent::Odom(o) => mcl.on_odometry(&o.delta, plan),
                LocalizationEvent::Obs { observation, .. } => mcl.on_observation(observation, maps),
            };
            EstimateJson {
                timestamp_s: e.timestamp_s(),
                estimate: s.estimate,
                n_eff: s.n_eff,
                converged: spread(mcl.particles(), &s.estimate) <= radius_m,
            }
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct RunRecord {
    run: usize,
    seed: u64,
    estimates: PathBuf,
    report: Option<LocalizationReport>,
}

#[derive(Debug, Serialize)]
struct LocalizationSummary<'a> {
    sensor_model: SensorModel,
    runs: &'a [RunRecord],
    summary: Option<MethodSummary>,
}

fn read_trajectory(path: &Path) -> Result<Vec<TimedPose>> {
    Ok(io::read_jsonl::<TimedPoseJson>(path)?
        .into_iter()
        .map(|t| TimedPose {
            timestamp_s: t.timestamp_s,
            pose: t.pose,
        })
        .collect())
}

fn to_timed(estimates: &[EstimateJson]) -> Vec<TimedPose> {
    estimates
        .iter()
        .map(|e| TimedPose {
            timestamp_s: e.timestamp_s,
            pose: e.estimate,
        })
        .collect()
}

/// Writes the JSON, table and CSV forms of a set of localization reports.
fn write_localization_reports(out: &Path, method: &str, model: SensorModel, records: &[RunRecord]) -> Result<Option<MethodSummary>> {
    let reports: Vec<LocalizationReport> = records.iter().filter_map(|r| r.report).collect();
    if reports.is_empty() {
        return Ok(None);
    }
    let summary = summarize(method, &reports)?;
    let json_path = out.join("localization_report.json");
    io::write_json(
        &json_path,
        &LocalizationSummary {
            sensor_model: model,
            runs: records,
            summary: Some(summary.clone()),
        },
    )?;
    io::read_json::<serde_json::Value>(&json_path)?;
    log_written(&json_path);
    let txt_path = out.join("localization_report.txt");
    fs::write(&txt_path, localization_table(std::slice::from_ref(&summary))).with_context(|| txt_path.display().to_string())?;
    log_written(&txt_path);
    let rows: Vec<(String, LocalizationReport)> = reports.iter().map(|r| (method.to_string(), *r)).collect();
    let csv_path = out.join("localization_report.csv");
    fs::write(&csv_path, localization_csv(&rows)).with_context(|| csv_path.display().to_string())?;
    log_written(&csv_path);
    info!(
        "success rate {:.0}% over {} runs, ATE {:.3} m / {:.3} rad",
        summary.success_rate * 100.0,
        summary.runs,
        summary.ate_trans_m,
        summary.ate_rot_rad
    );
    Ok(Some(summary))
}

fn report_for(estimates: &[TimedPose], gt: &[TimedPose], params: &ConvergenceParams, run: usize) -> Option<LocalizationReport> {
    match convergence(estimates, gt, params) {
        Ok(r) => Some(r),
        Err(e) => {
            warn!("run {run}: {e}");
            None
        }
    }
}

pub fn localize(cfg: &RunConfig) -> Result<()> {
    let l = &cfg.localize;
    let plan = load_plan(required(&l.floor_plan, "localize.floor_plan")?)?;
    let m_s: ObjectMap = io::read_object_map(required(&l.map, "localize.map")?)?;
    let models = io::read_noise_models(required(&l.noise_models, "localize.noise_models")?)?;
    let m_p = match &l.probability_map {
        Some(p) => io::read_probability_map(p)?,
        None => {
            let (m_p, warnings) = build_probability_map(&models, &m_s);
            for w in &warnings {
                warn!("{w}");
            }
            m_p
        }
    };
    let events = io::read_localization_events(required(&l.events, "localize.events")?)?;
    let gt = l.ground_truth.as_deref().map(read_trajectory).transpose()?;
    let model = l.mcl.sensor_model;
    let maps = SensorMaps::new(&m_s, &m_p, &models, &plan, l.mcl.eta, model == SensorModel::Edt);
    if cfg.runs == 0 {
        bail!("`runs` must be at least 1");
    }
    info!("{} runs of {} particles with the {model} model over {} events", cfg.runs, l.mcl.n_particles, events.len());

    let results: Vec<Vec<EstimateJson>> = (0..cfg.runs)
        .into_par_iter()
        .map(|k| run_filter(l.mcl, &plan, &maps, &events, cfg.seed + k as u64, l.convergence.radius_m))
        .collect();

    let mut records = Vec::with_capacity(results.len());
    for (k, est) in results.iter().enumerate() {
        let name = format!("estimates_{k}.jsonl");
        let path = cfg.out.join(&name);
        io::write_jsonl(&path, est)?;
        let back: Vec<EstimateJson> = io::read_jsonl(&path)?;
        if back.len() != est.len() {
            bail!("{}: expected {} estimates, read {}", path.display(), est.len(), back.len());
        }
        log_written(&path);
        let report = gt.as_ref().and_then(|g| report_for(&to_timed(est), g, &l.convergence, k));
        records.push(RunRecord {
            run: k,
            seed: cfg.seed + k as u64,
            estimates: PathBuf::from(name),
            report,
        });
    }
    if gt.is_some() {
        write_localization_reports(&cfg.out, model.name(), model, &records)?;
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.simulate;
    let out = &cfg.out;
    let world = generate_world(cfg.seed, &s.world.spec())?;
    let traj = generate_trajectory(&world, &s.trajectory);
    let cam = cfg.camera.model()?;
    let spec = RunSpec {
        detector: s.detector,
        sigma_odom: s.sigma_odom,
        obs_every: s.obs_every,
        seed: cfg.seed,
    };
    let run = simulate_run(&world, &traj, &cam, &spec);
    info!(
        "{} objects, {} trajectory samples over {:.1} s, {} mapping frames",
        world.gt_objects.len(),
        traj.samples.len(),
        traj.duration(),
        run.mapping_frames.len()
    );

    let plan_path = world.plan.save(out, "floor_plan")?;
    FloorPlan::load(&plan_path)?;
    log_written(&plan_path);

    let gt = world.gt_map();
    let p = out.join("gt_map.json");
    io::write_object_map(&p, &gt)?;
    io::read_object_map(&p)?;
    log_written(&p);

    let p = out.join("class_models.json");
    io::write_noise_models(&p, &world.noise)?;
    io::read_noise_models(&p)?;
    log_written(&p);

    let (m_p, _) = build_probability_map(&world.noise, &gt);
    let p = out.join("probability_map.json");
    io::write_probability_map(&p, &m_p)?;
    io::read_probability_map(&p)?;
    log_written(&p);

    let samples: Vec<TimedPoseJson> = traj
        .samples
        .iter()
        .map(|t| TimedPoseJson {
            timestamp_s: t.timestamp_s,
            pose: t.pose,
        })
        .collect();
    let p = out.join("trajectory.jsonl");
    io::write_jsonl(&p, &samples)?;
    read_trajectory(&p)?;
    log_written(&p);

    let p = out.join("mapping_frames.jsonl");
    io::write_mapping_frames(&p, &run.mapping_frames)?;
    io::read_mapping_frames(&p)?;
    log_written(&p);

    let p = out.join("localization_events.jsonl");
    io::write_localization_events(&p, &run.localization_events)?;
    io::read_localization_events(&p)?;
    log_written(&p);

    let (index, dets) = io::frames_2d_to_json(&run.frames_2d);
    let p = out.join("frames.jsonl");
    io::write_jsonl(&p, &index)?;
    io::read_jsonl::<FrameIndexJson>(&p)?;
    log_written(&p);
    let p = out.join("detections_2d.jsonl");
    io::write_jsonl(&p, &dets)?;
    io::read_jsonl::<Detection2DJson>(&p)?;
    log_written(&p);

    let preds: Vec<PredictionJson> = run.predictions.iter().map(PredictionJson::from).collect();
    let p = out.join("predictions.jsonl");
    io::write_jsonl(&p, &preds)?;
    io::read_predictions(&p)?;
    log_written(&p);

    let p = out.join("run.toml");
    let text = wiring(cfg, &plan_path).to_toml()?;
    fs::write(&p, &text).with_context(|| p.display().to_string())?;
    RunConfig::parse(&text)?;
    log_written(&p);
    Ok(())
}

/// A configuration that runs the other commands on the simulated data. Paths
/// are relative to the simulation directory; results go to `results/`.
fn wiring(cfg: &RunConfig, plan_path: &Path) -> RunConfig {
    let plan = PathBuf::from(plan_path.file_name().expect("floor plan file name"));
    let some = |s: &str| Some(PathBuf::from(s));
    let results = PathBuf::from("results");
    let mut w = RunConfig {
        seed: cfg.seed,
        runs: cfg.runs,
        jobs: 0,
        out: results.clone(),
        camera: cfg.camera,
        simulate: cfg.simulate.clone(),
        ..RunConfig::default()
    };
    w.annotate.floor_plan = Some(plan.clone());
    w.annotate.gt_map = some("gt_map.json");
    w.annotate.frames = some("frames.jsonl");
    w.annotate.detections = some("detections_2d.jsonl");
    w.annotate.annotator = cfg.annotate.annotator;
    w.fit_noise.predictions = some("predictions.jsonl");
    w.fit_noise.gt_map = some("gt_map.json");
    w.fit_noise.fit = cfg.fit_noise.fit;
    w.build_map.floor_plan = Some(plan.clone());
    w.build_map.frames = some("mapping_frames.jsonl");
    w.build_map.noise_models = some("class_models.json");
    w.build_map.mapper = cfg.build_map.mapper;
    w.build_map.rooms = cfg.build_map.rooms;
    w.localize.floor_plan = Some(plan);
    w.localize.map = some("gt_map.json");
    w.localize.noise_models = some("class_models.json");
    w.localize.probability_map = some("probability_map.json");
    w.localize.events = some("localization_events.jsonl");
    w.localize.ground_truth = some("trajectory.jsonl");
    w.localize.mcl = cfg.localize.mcl;
    w.localize.convergence = cfg.localize.convergence;
    w.eval.built_map = Some(results.join("map.json"));
    w.eval.gt_map = some("gt_map.json");
    w.eval.estimates = (0..cfg.runs.max(1)).map(|k| results.join(format!("estimates_{k}.jsonl"))).collect();
    w.eval.ground_truth = some("trajectory.jsonl");
    w.eval.method = cfg.localize.mcl.sensor_model.name().into();
    w.eval.convergence = cfg.localize.convergence;
    w.eval.match_iou_min = cfg.eval.match_iou_min;
    w.eval.delta = cfg.eval.delta;
    w
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let e = &cfg.eval;
    let mut did = false;
    if let (Some(built), Some(gt)) = (&e.built_map, &e.gt_map) {
        let q = map_quality(&io::read_object_map(built)?, &io::read_object_map(gt)?, e.match_iou_min, e.delta);
        let p = cfg.out.join("map_quality.json");
        io::write_json(&p, &q)?;
        io::read_json::<semloc_core::evalkit::MapQualityReport>(&p)?;
        log_written(&p);
        let p = cfg.out.join("map_quality.txt");
        fs::write(&p, q.to_table()).with_context(|| p.display().to_string())?;
        log_written(&p);
        let p = cfg.out.join("map_quality.csv");
        fs::write(&p, q.to_csv()).with_context(|| p.display().to_string())?;
        log_written(&p);
        info!("map IoU {:.3}, precision {:.3}, recall {:.3}", q.avg_iou, q.avg_precision, q.avg_recall);
        did = true;
    }
    if !e.estimates.is_empty() {
        let gt = read_trajectory(required(&e.ground_truth, "eval.ground_truth")?)?;
        let mut records = Vec::with_capacity(e.estimates.len());
        for (k, path) in e.estimates.iter().enumerate() {
            let est: Vec<EstimateJson> = io::read_jsonl(path)?;
            records.push(RunRecord {
                run: k,
                seed: cfg.seed + k as u64,
                estimates: path.clone(),
                report: report_for(&to_timed(&est), &gt, &e.convergence, k),
            });
        }
        if write_localization_reports(&cfg.out, &e.method, cfg.localize.mcl.sensor_model, &records)?.is_none() {
            bail!("no estimate log could be aligned with the ground truth");
        }
        did = true;
    }
    if !did {
        bail!("nothing to evaluate: set eval.built_map and eval.gt_map, or eval.estimates and eval.ground_truth");
    }
    Ok(())
}
