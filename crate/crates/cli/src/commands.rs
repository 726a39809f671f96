use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use bevmap_core::bench::{bench_pipeline, latency_svg, LatencyBreakdown};
use bevmap_core::bev::{flatten_cloud, flatten_pipeline, read_csv_cloud, FlattenConfig, Georef, LidarFrame};
use bevmap_core::detect::obb::{ingest_obb, write_obb_jsonl, write_yolo_obb, ObbFile};
use bevmap_core::detect::DetectorKind;
use bevmap_core::eval::{compute_metrics, match_to_gt, EvalReport, MatchCriteria};
use bevmap_core::fuse_global::MapSnapshot;
use bevmap_core::manhattan::Floorplan;
use bevmap_core::pipeline::{run_pipeline, run_sequential, FrameInput, PipelineConfig, QueueConfig, SensorData};
use bevmap_core::render::{bev_svg, floorplan_svg, grouped_bars_svg, overlay_svg};
use bevmap_core::sim::{
    export_obb_labels, inject_speckle, make_scenario, simulate_frame, FloorplanWorld, GroundTruth,
    ScenarioOptions, SensorModel, SpeckleConfig, Trajectory,
};
use bevmap_core::{Error, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::output::{read_text, OutDir, RunManifest};
use crate::{BenchArgs, EvalArgs, FlattenArgs, RunArgs, SimulateArgs};

/// Settings for `simulate` beyond the scenario itself.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub sensor: SensorModel,
    pub raster: Georef,
    /// Speckle noise for the exported BEV images; none when absent.
    pub speckle: Option<SpeckleConfig>,
}

/// `map.json`, written by `run` and read by `eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub frame_id: String,
    pub detector: DetectorKind,
    pub snapshot: MapSnapshot,
    pub floorplan: Option<Floorplan>,
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_json(&read_text(p)?)
            .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.to_string().trim_start_matches("invalid configuration: ")))),
        None => Ok(PipelineConfig::default()),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut manifest = RunManifest::start("simulate");
    manifest.seed = Some(a.seed);
    let mut cfg: SimConfig = match &a.config {
        Some(p) => {
            manifest.config = Some(p.display().to_string());
            serde_json::from_str(&read_text(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SimConfig::default(),
    };
    cfg.sensor.seed = a.seed;
    cfg.sensor.validate()?;
    cfg.raster.validate()?;

    let opts = ScenarioOptions {
        frames: a.frames,
        period: a.period,
        glass_ghost: a.glass_ghost,
    };
    let (mut world, mut gt, mut traj) = make_scenario(a.scenario, a.seed, &opts);
    if let Some(p) = &a.world {
        manifest.inputs.push(p.display().to_string());
        world = parse_json::<FloorplanWorld>(p)?;
        if a.glass_ghost {
            world.ghost_reflections = true;
        }
        world.validate()?;
        let id = gt.frame_id.clone();
        gt = world.ground_truth();
        gt.frame_id = format!("{}-{id}", p.file_stem().and_then(|s| s.to_str()).unwrap_or("world"));
        traj.frame_id = gt.frame_id.clone();
    }
    if let Some(p) = &a.trajectory {
        manifest.inputs.push(p.display().to_string());
        let id = traj.frame_id.clone();
        traj = Trajectory::from_json(&read_text(p)?)?;
        traj.frame_id = id;
    }

    let mut out = OutDir::create(&a.out)?;
    out.write_json("world.json", &world)?;
    out.write_json("gt.json", &gt)?;
    out.write_json("trajectory.json", &traj)?;
    let mut all_labels = Vec::new();
    let n = traj.poses.len();
    for (k, p) in traj.poses.iter().enumerate() {
        let frame = simulate_frame(&world, &cfg.sensor, &p.pose, p.t)?;
        let mut bin = Vec::new();
        frame.write_binary(&mut bin).map_err(|e| Error::io(a.out.join("frames"), e))?;
        out.write(&format!("frames/frame_{k:04}.bin"), bin)?;

        let mut labels = export_obb_labels(&world, &cfg.sensor, &p.pose, &cfg.raster);
        for l in &mut labels {
            l.frame = k as u32;
        }
        let header = write_obb_jsonl(&cfg.raster, &[]);
        out.write(&format!("labels/frame_{k:04}.txt"), format!("{header}{}", write_yolo_obb(&cfg.raster, &labels)))?;

        let flat_cfg = FlattenConfig {
            raster: cfg.raster,
            sensor_height: cfg.sensor.height,
            ..Default::default()
        };
        let mut image = flatten_pipeline(&frame, &flat_cfg)?.image;
        if let Some(sp) = cfg.speckle {
            let sp = SpeckleConfig {
                seed: sp.seed ^ k as u64,
                ..sp
            };
            image = inject_speckle(&image, &labels, &sp);
        }
        if a.bev {
            let mut pbm = Vec::new();
            image.write_pbm(&mut pbm).map_err(|e| Error::io(a.out.join("bev"), e))?;
            out.write(&format!("bev/frame_{k:04}.pbm"), pbm)?;
            out.write_json(&format!("bev/frame_{k:04}.json"), &image.sidecar())?;
        }
        if k == 0 || k + 1 == n {
            let walls: Vec<_> = labels_to_segments(&labels, &cfg.raster);
            out.write(&format!("previews/frame_{k:04}.svg"), bev_svg(&image, 8, &walls))?;
        }
        all_labels.extend(labels);
    }
    out.write("labels.jsonl", write_obb_jsonl(&cfg.raster, &all_labels))?;
    info!("simulated {n} frames of {}", traj.frame_id);
    out.finish(manifest)
}

fn labels_to_segments(labels: &[bevmap_core::detect::ObbRecord], g: &Georef) -> Vec<bevmap_core::geom::Segment2> {
    bevmap_core::detect::obb_to_features(labels, g, 0.0, 0.0).segments
}

/// Frames in name order from `dir/frames`, `.bin` sweeps or `.csv` clouds.
fn load_frames(dir: &Path, traj: &Trajectory) -> Result<Vec<SensorData>> {
    let frames_dir = dir.join("frames");
    let mut names: Vec<PathBuf> = fs::read_dir(&frames_dir)
        .map_err(|e| Error::io(&frames_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("bin" | "csv")))
        .collect();
    names.sort();
    if names.len() != traj.poses.len() {
        return Err(Error::Validation(format!(
            "{} has {} frames but the trajectory has {} poses",
            frames_dir.display(),
            names.len(),
            traj.poses.len()
        )));
    }
    names
        .iter()
        .zip(&traj.poses)
        .map(|(p, pose)| {
            let file = fs::File::open(p).map_err(|e| Error::io(p, e))?;
            let r = BufReader::new(file);
            if p.extension().and_then(|x| x.to_str()) == Some("csv") {
                Ok(SensorData::Cloud {
                    points: read_csv_cloud(r)?,
                    timestamp: pose.t,
                })
            } else {
                Ok(SensorData::Sweep(LidarFrame::read_binary(r)?))
            }
        })
        .collect()
}

struct Loaded {
    inputs: Vec<FrameInput>,
    frame_id: String,
}

fn load_inputs(dir: &Path, cfg: &PipelineConfig, obb_file: Option<&PathBuf>, manifest: &mut RunManifest) -> Result<Loaded> {
    let traj_path = dir.join("trajectory.json");
    let traj = Trajectory::from_json(&read_text(&traj_path)?)?;
    manifest.inputs.push(dir.display().to_string());
    let frames = load_frames(dir, &traj)?;
    let obb: Option<ObbFile> = if cfg.detector == DetectorKind::Obb {
        let path = obb_file.cloned().unwrap_or_else(|| dir.join("labels.jsonl"));
        manifest.inputs.push(path.display().to_string());
        let f = ingest_obb(&path)?;
        if let Some(g) = f.georef {
            if g != cfg.flatten.raster {
                return Err(Error::Validation(format!(
                    "{}: georeference {{scale {}, size {}}} differs from the configured raster {{scale {}, size {}}}",
                    path.display(),
                    g.scale,
                    g.size,
                    cfg.flatten.raster.scale,
                    cfg.flatten.raster.size
                )));
            }
        }
        if f.skipped_unknown > 0 {
            warn!("{}: skipped {} boxes of unknown class", path.display(), f.skipped_unknown);
        }
        Some(f)
    } else {
        None
    };
    let inputs = frames
        .into_iter()
        .zip(&traj.poses)
        .enumerate()
        .map(|(k, (frame, p))| FrameInput {
            frame,
            pose: p.pose,
            obb: obb.as_ref().map(|f| f.for_frame(k as u32)),
        })
        .collect();
    Ok(Loaded {
        inputs,
        frame_id: traj.frame_id,
    })
}

fn apply_overrides(cfg: &mut PipelineConfig, detector: Option<DetectorKind>, seed: Option<u64>) {
    if let Some(d) = detector {
        cfg.detector = d;
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
}

pub fn run(a: &RunArgs) -> Result<()> {
    let mut manifest = RunManifest::start("run");
    let mut cfg = load_config(a.config.as_ref())?;
    manifest.config = a.config.as_ref().map(|p| p.display().to_string());
    apply_overrides(&mut cfg, a.detector, a.seed);
    if a.lossless {
        cfg.queues = QueueConfig::lossless();
    }
    cfg.validate()?;
    manifest.seed = cfg.seed;
    let loaded = load_inputs(&a.input, &cfg, a.obb_file.as_ref(), &mut manifest)?;
    let offered = loaded.inputs.len();
    let run = if a.sequential {
        run_sequential(loaded.inputs, &cfg)?
    } else {
        run_pipeline(loaded.inputs, &cfg)?
    };

    let mut out = OutDir::create(&a.out)?;
    for e in &run.epochs {
        out.write_json(&format!("snapshots/epoch_{:04}.json", e.snapshot.epoch), &e.snapshot)?;
    }
    let last = run.epochs.last();
    let map = MapFile {
        frame_id: loaded.frame_id,
        detector: cfg.detector,
        snapshot: last.map(|e| e.snapshot.clone()).unwrap_or(MapSnapshot {
            epoch: 0,
            walls: vec![],
            columns: vec![],
        }),
        floorplan: last.and_then(|e| e.floorplan.clone()),
    };
    out.write_json("map.json", &map)?;
    match &map.floorplan {
        Some(fp) => {
            out.write_json("floorplan.json", fp)?;
            out.write("floorplan.svg", floorplan_svg(fp))?;
        }
        None => warn!(
            "no floorplan: {}",
            last.and_then(|e| e.floorplan_error.as_deref()).unwrap_or("no confirmed walls")
        ),
    }
    let mut lat = LatencyBreakdown::from_samples(cfg.detector, 1, run.epochs.iter().map(|e| e.latency).collect());
    lat.sensor_queue = run.sensor_queue;
    lat.offered = run.offered;
    lat.rss_kb = bevmap_core::bench::resident_kb();
    out.write_json("latency.json", &lat)?;
    println!(
        "{} epochs from {offered} frames ({} dropped); {} confirmed walls; p95 end-to-end {:.1} ms",
        run.epochs.len(),
        run.sensor_queue.dropped,
        map.snapshot.confirmed_walls().count(),
        lat.end_to_end_ms.p95
    );
    out.finish(manifest)
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    frame_id: &'a str,
    recall: f64,
    precision: f64,
    f1: f64,
    dist_err_cm: f64,
    angle_err_deg: f64,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::start("eval");
    manifest.inputs = vec![a.map.display().to_string(), a.gt.display().to_string()];
    let criteria: MatchCriteria = match &a.criteria {
        Some(p) => {
            manifest.config = Some(p.display().to_string());
            serde_json::from_str(&read_text(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => MatchCriteria::default(),
    };
    criteria.validate()?;
    let map: MapFile = parse_json(&a.map)?;
    let gt: GroundTruth = parse_json(&a.gt)?;
    if !map.frame_id.is_empty() && !gt.frame_id.is_empty() && map.frame_id != gt.frame_id {
        return Err(Error::Validation(format!(
            "map frame `{}` does not match ground-truth frame `{}`",
            map.frame_id, gt.frame_id
        )));
    }
    let detected: Vec<_> = map
        .snapshot
        .walls
        .iter()
        .filter(|w| a.all_tracks || w.confirmed)
        .map(|w| w.segment().to_segment())
        .collect();
    let corr = match_to_gt(&detected, &gt.walls, &criteria);
    let report: EvalReport = compute_metrics(&corr)?;
    let mut out = OutDir::create(&a.out)?;
    out.write_json("report.json", &report)?;
    out.write("overlay.svg", overlay_svg(&corr))?;
    let rows = vec![(map.detector.name().to_string(), vec![report.recall, report.precision, report.f1])];
    out.write("metrics.svg", grouped_bars_svg(&gt.frame_id, &["Recall", "Precision", "F1"], &rows))?;
    let summary = EvalSummary {
        frame_id: &gt.frame_id,
        recall: report.recall,
        precision: report.precision,
        f1: report.f1,
        dist_err_cm: report.dist_err_cm,
        angle_err_deg: report.angle_err_deg,
    };
    println!("{}", serde_json::to_string(&summary)?);
    out.finish(manifest)
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let mut manifest = RunManifest::start("bench");
    let mut base = load_config(a.config.as_ref())?;
    manifest.config = a.config.as_ref().map(|p| p.display().to_string());
    apply_overrides(&mut base, None, a.seed);
    manifest.seed = base.seed;
    if a.reps == 0 {
        return Err(Error::Config("--reps must be at least 1".into()));
    }
    let detectors = if a.detectors.is_empty() {
        DetectorKind::ALL.to_vec()
    } else {
        a.detectors.clone()
    };
    let mut results = Vec::new();
    for d in detectors {
        let cfg = PipelineConfig { detector: d, ..base };
        cfg.validate()?;
        let mut scratch = RunManifest::start("bench");
        let loaded = load_inputs(&a.input, &cfg, a.obb_file.as_ref(), &mut scratch)?;
        for i in scratch.inputs {
            if !manifest.inputs.contains(&i) {
                manifest.inputs.push(i);
            }
        }
        let mut seq = loaded.inputs;
        if let Some(n) = a.frames {
            seq.truncate(n);
        }
        let b = bench_pipeline(&seq, &cfg, a.reps)?;
        println!(
            "{:<7} detector {:>7.2}  local {:>7.3}  global {:>7.3}  transfer {:>6.3}  end-to-end p50 {:>7.2} p95 {:>7.2} ms  dropped {}",
            d.name(),
            b.detector_ms.mean,
            b.local_fusion_ms.mean,
            b.global_fusion_ms.mean,
            b.transfer_ms.mean,
            b.end_to_end_ms.p50,
            b.end_to_end_ms.p95,
            b.sensor_queue.dropped
        );
        results.push(b);
    }
    let mut out = OutDir::create(&a.out)?;
    out.write_json("latency.json", &results)?;
    out.write("latency.svg", latency_svg("Latency breakdown per frame", &results))?;
    out.finish(manifest)
}

pub fn flatten(a: &FlattenArgs) -> Result<()> {
    let mut manifest = RunManifest::start("flatten");
    manifest.inputs.push(a.input.display().to_string());
    let cfg = load_config(a.config.as_ref())?;
    manifest.config = a.config.as_ref().map(|p| p.display().to_string());
    let file = fs::File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let r = BufReader::new(file);
    let flat = if a.input.extension().and_then(|x| x.to_str()) == Some("csv") {
        flatten_cloud(&read_csv_cloud(r)?, &cfg.flatten)?
    } else {
        flatten_pipeline(&LidarFrame::read_binary(r)?, &cfg.flatten)?
    };
    let mut out = OutDir::create(&a.out)?;
    let mut pbm = Vec::new();
    flat.image.write_pbm(&mut pbm).map_err(|e| Error::io(&a.out, e))?;
    out.write("bev.pbm", pbm)?;
    out.write_json("bev.json", &flat.image.sidecar())?;
    out.write("bev.svg", bev_svg(&flat.image, 8, &[]))?;
    println!("{} points in band, {} occupied cells", flat.points.len(), flat.image.count_occupied());
    out.finish(manifest)
}
