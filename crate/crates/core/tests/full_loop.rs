use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semloc_core::evalkit::{convergence, map_quality, ConvergenceParams, TimedPose};
use semloc_core::io;
use semloc_core::localizer::{Mcl, MclConfig, SensorMaps};
use semloc_core::mapper::{Mapper, MapperConfig};
use semloc_core::noisemodel::{build_probability_map, collect_samples, fit_all, NoiseFitConfig};
use semloc_core::simulator::*;
use semloc_core::worldmodel::{segment_rooms, FloorPlan, ObjectMap, RoomSegmentationParams};

fn scenario(seed: u64) -> (SimWorld, SimTrajectory, SimulatedRun) {
    let world = generate_world(seed, &WorldSpec::default()).unwrap();
    let traj = generate_trajectory(&world, &TrajectorySpec::default());
    let run = simulate_run(&world, &traj, &default_camera(), &RunSpec { seed, ..RunSpec::default() });
    (world, traj, run)
}

fn mapper(world: &SimWorld, plan: FloorPlan, prior: Option<ObjectMap>) -> Mapper {
    let rooms = segment_rooms(&plan, &RoomSegmentationParams::default());
    let models = Some(world.noise.clone());
    match prior {
        Some(p) => Mapper::resume(MapperConfig::default(), default_camera(), plan, rooms, models, p),
        None => Mapper::new(MapperConfig::default(), default_camera(), plan, rooms, models),
    }
}

#[test]
fn mapping_from_files_matches_mapping_in_memory() {
    let (world, _, run) = scenario(11);
    let dir = tempfile::tempdir().unwrap();
    let plan_path = world.plan.save(dir.path(), "plan").unwrap();
    let frames_path = dir.path().join("frames.jsonl");
    io::write_mapping_frames(&frames_path, &run.mapping_frames).unwrap();

    let mut direct = mapper(&world, world.plan.clone(), None);
    run.mapping_frames.iter().for_each(|f| {
        direct.process(f);
    });
    let direct = direct.finish();

    let plan = FloorPlan::load(&plan_path).unwrap();
    let mut loaded = mapper(&world, plan, None);
    for f in &io::read_mapping_frames(&frames_path).unwrap() {
        loaded.process(f);
    }
    let loaded = loaded.finish();
    assert_eq!(direct.len(), loaded.len());
    let a = map_quality(&direct, &world.gt_map(), 0.0, 1.0);
    let b = map_quality(&loaded, &world.gt_map(), 0.0, 1.0);
    assert!((a.avg_iou - b.avg_iou).abs() < 1e-6);
    assert_eq!((a.avg_precision, a.avg_recall), (b.avg_precision, b.avg_recall));
}

#[test]
fn resumed_mapping_keeps_quality() {
    let (world, _, run) = scenario(12);
    let half = run.mapping_frames.len() / 2;
    let mut first = mapper(&world, world.plan.clone(), None);
    for f in &run.mapping_frames[..half] {
        first.process(f);
    }
    first.finish();
    // Resume from the published map, as `build-map` saves it.
    let prior = ObjectMap::from_objects(first.snapshot().objects().to_vec()).unwrap();
    let mut second = mapper(&world, world.plan.clone(), Some(prior));
    for f in &run.mapping_frames[half..] {
        second.process(f);
    }
    let map = second.finish();
    let q = map_quality(&map, &world.gt_map(), 0.0, 1.0);
    assert!(q.avg_iou >= 0.6 && q.avg_precision >= 0.9 && q.avg_recall >= 0.9, "{}", q.to_table());
}

#[test]
fn fitted_models_support_mapping() {
    let (world, _, run) = scenario(13);
    let samples = collect_samples(run.predictions.iter().map(|p| (p.class_label.as_str(), &p.obb)), &world.gt_objects, 1.0);
    let (models, warnings) = fit_all(&samples, &NoiseFitConfig::default());
    assert!(warnings.is_empty(), "{warnings:?}");
    for (class, m) in &models {
        let truth = &world.noise[class];
        assert!((m.mean() - truth.mean()).norm() < 0.05, "{class}");
    }
    let rooms = segment_rooms(&world.plan, &RoomSegmentationParams::default());
    let mut mapper = Mapper::new(MapperConfig::default(), default_camera(), world.plan.clone(), rooms, Some(models));
    for f in &run.mapping_frames {
        mapper.process(f);
    }
    let q = map_quality(&mapper.finish(), &world.gt_map(), 0.0, 1.0);
    assert!(q.avg_iou >= 0.6 && q.avg_precision >= 0.9 && q.avg_recall >= 0.9, "{}", q.to_table());
}

#[test]
fn localization_against_built_map_converges() {
    let (world, traj, run) = scenario(14);
    let mut m = mapper(&world, world.plan.clone(), None);
    for f in &run.mapping_frames {
        m.process(f);
    }
    let built = m.finish();
    let (m_p, warnings) = build_probability_map(&world.noise, &built);
    assert!(warnings.is_empty());
    let cfg = MclConfig::default();
    let maps = SensorMaps::new(&built, &m_p, &world.noise, &world.plan, cfg.eta, false);
    let mut mcl = Mcl::new(cfg, &world.plan, ChaCha8Rng::seed_from_u64(14));
    let est: Vec<TimedPose> = run
        .localization_events
        .iter()
        .map(|e| {
            let s = match e {
                LocalizationEvent::Odom(o) => mcl.on_odometry(&o.delta, &world.plan),
                LocalizationEvent::Obs { observation, .. } => mcl.on_observation(observation, &maps),
            };
            TimedPose {
                timestamp_s: e.timestamp_s(),
                pose: s.estimate,
            }
        })
        .collect();
    let gt: Vec<TimedPose> = traj
        .samples
        .iter()
        .map(|s| TimedPose {
            timestamp_s: s.timestamp_s,
            pose: s.pose,
        })
        .collect();
    let r = convergence(&est, &gt, &ConvergenceParams::default()).unwrap();
    assert!(r.success && r.ate_trans_m <= 0.3, "{r:?}");
}
