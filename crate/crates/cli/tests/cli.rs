use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bevmap_core::bev::{spherical_to_cartesian, LidarFrame};
use bevmap_core::geom::{segment_to_polar, Point2};
use bevmap_core::sim::{FloorplanWorld, GroundTruth, Trajectory};
use serde_json::{json, Value};
use tempfile::TempDir;

fn bevmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bevmap"))
        .args(args)
        .output()
        .expect("spawn bevmap")
}

fn ok(args: &[&str]) -> Output {
    let out = bevmap(args);
    assert!(
        out.status.success(),
        "bevmap {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, scenario: &str, frames: usize, seed: u64, extra: &[&str]) {
    let frames = frames.to_string();
    let seed = seed.to_string();
    let mut args = vec!["simulate", "--scenario", scenario, "--frames", &frames, "--seed", &seed, "--out", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Every file under `root` except the manifest, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn simulate_writes_frames_and_ground_truth() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("garage");
    simulate(&dir, "garage", 50, 7, &[]);
    let frames = fs::read_dir(dir.join("frames")).unwrap().count();
    assert_eq!(frames, 50);
    let gt: GroundTruth = serde_json::from_str(&fs::read_to_string(dir.join("gt.json")).unwrap()).unwrap();
    assert_eq!(gt.walls.len(), 4);
    assert_eq!(fs::read_dir(dir.join("labels")).unwrap().count(), 50);
    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    let outputs = manifest["outputs"].as_array().unwrap();
    for o in outputs {
        assert!(dir.join(o.as_str().unwrap()).is_file(), "{o}");
    }
    assert_eq!(outputs.len(), tree(&dir).len());
}

#[test]
fn simulate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, "lab", 5, 11, &["--bev"]);
    simulate(&b, "lab", 5, 11, &["--bev"]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{} differs", k.display());
    }
}

/// Returns beyond each glass pane, measured outward from the sensor side.
fn returns_behind_glass(dir: &Path) -> usize {
    let world: FloorplanWorld = serde_json::from_str(&fs::read_to_string(dir.join("world.json")).unwrap()).unwrap();
    let traj = Trajectory::from_json(&fs::read_to_string(dir.join("trajectory.json")).unwrap()).unwrap();
    let mut names: Vec<_> = fs::read_dir(dir.join("frames")).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    let mut count = 0;
    for (p, pose) in names.iter().zip(&traj.poses) {
        let frame = LidarFrame::from_bytes(&fs::read(p).unwrap()).unwrap();
        let sensor = pose.pose.position();
        for g in &world.glass {
            let w = &world.walls[g.wall];
            let line = segment_to_polar(&bevmap_core::geom::Segment2::new(w.start, w.end).unwrap()).unwrap();
            let side = line.signed_distance(sensor).signum();
            for q in spherical_to_cartesian(&frame).unwrap() {
                if !(0.3..1.8).contains(&(q.z + 0.6)) {
                    continue;
                }
                let x = pose.pose.apply(Point2::new(q.x, q.y));
                let t = line.project(x);
                let inside = t >= line.d1.min(line.d2) && t <= line.d1.max(line.d2);
                if inside && -side * line.signed_distance(x) > w.thickness + 0.2 {
                    count += 1;
                }
            }
        }
    }
    count
}

#[test]
fn glass_ghost_appears_behind_glass() {
    let tmp = TempDir::new().unwrap();
    let (plain, ghost) = (tmp.path().join("plain"), tmp.path().join("ghost"));
    simulate(&plain, "corridor", 6, 3, &[]);
    simulate(&ghost, "corridor", 6, 3, &["--glass-ghost"]);
    let (np, ng) = (returns_behind_glass(&plain), returns_behind_glass(&ghost));
    assert!(ng > 200 && ng > 10 * np.max(1), "ghost {ng} plain {np}");
    let first = "previews/frame_0000.svg";
    assert_ne!(fs::read(plain.join(first)).unwrap(), fs::read(ghost.join(first)).unwrap());
}

#[test]
fn hough_config_closes_the_garage() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "garage", 20, 7, &[]);
    let out = tmp.path().join("run");
    let cfg = config_dir().join("hough.json");
    ok(&["run", "--input", s(&sim), "--config", s(&cfg), "--lossless", "--out", s(&out)]);
    for f in ["floorplan.json", "floorplan.svg", "latency.json", "map.json", "snapshots/epoch_0019.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let fp = read_json(&out.join("floorplan.json"));
    let loops = fp["loops"].as_array().unwrap();
    assert_eq!(loops.len(), 1, "{loops:?}");
    let outer = loops[0].as_array().unwrap();
    assert_eq!(outer.len(), 4);
    let gt: GroundTruth = serde_json::from_str(&fs::read_to_string(sim.join("gt.json")).unwrap()).unwrap();
    for c in outer {
        let c = &fp["corners"][c.as_u64().unwrap() as usize];
        let p = Point2::new(c["x"].as_f64().unwrap(), c["y"].as_f64().unwrap());
        let nearest = gt.walls.iter().map(|w| w.p1.distance(p)).fold(f64::INFINITY, f64::min);
        assert!(nearest < 0.15, "corner {p:?} is {nearest} m from the nearest vertex");
    }
}

#[test]
fn obb_file_is_consumed() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "lab", 6, 2, &[]);
    let dets = tmp.path().join("dets.jsonl");
    fs::rename(sim.join("labels.jsonl"), &dets).unwrap();
    let out = tmp.path().join("run");
    let missing = bevmap(&["run", "--input", s(&sim), "--detector", "obb", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("labels.jsonl"));

    ok(&["run", "--input", s(&sim), "--detector", "obb", "--obb-file", s(&dets), "--lossless", "--out", s(&out)]);
    let map = read_json(&out.join("map.json"));
    assert_eq!(map["detector"], "obb");
    let confirmed = map["snapshot"]["walls"].as_array().unwrap().iter().filter(|w| w["confirmed"] == true).count();
    assert_eq!(confirmed, 4);
    let inputs = read_json(&out.join("manifest.json"))["inputs"].clone();
    assert!(inputs.as_array().unwrap().iter().any(|i| i.as_str() == Some(s(&dets))));
}

#[test]
fn sequential_matches_staged() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "hallway", 8, 4, &[]);
    let (a, b) = (tmp.path().join("seq"), tmp.path().join("staged"));
    ok(&["run", "--input", s(&sim), "--detector", "ransac", "--sequential", "--out", s(&a)]);
    ok(&["run", "--input", s(&sim), "--detector", "ransac", "--lossless", "--out", s(&b)]);
    let snaps = |d: &Path| tree(&d.join("snapshots"));
    assert_eq!(snaps(&a).len(), 8);
    assert_eq!(snaps(&a), snaps(&b));
    assert_eq!(fs::read(a.join("map.json")).unwrap(), fs::read(b.join("map.json")).unwrap());
}

#[test]
fn unknown_names_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let out = bevmap(&["run", "--input", s(tmp.path()), "--detector", "canny", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["ransac", "hough", "lsd", "obb"] {
        assert!(err.contains(name), "{err}");
    }

    let cfg = tmp.path().join("typo.json");
    fs::write(&cfg, r#"{"hough": {"threshhold": 10}}"#).unwrap();
    let out = bevmap(&["run", "--input", s(tmp.path()), "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshhold"));

    let cfg = tmp.path().join("det.json");
    fs::write(&cfg, r#"{"detector": "sobel"}"#).unwrap();
    let out = bevmap(&["run", "--input", s(tmp.path()), "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lsd"));
}

/// A snapshot holding exactly the ground-truth walls.
fn perfect_map(gt: &GroundTruth, frame_id: &str) -> Value {
    let walls: Vec<Value> = gt
        .walls
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let p = segment_to_polar(w).unwrap();
            json!({"id": i, "rho": p.rho, "alpha": p.alpha, "d1": p.d1, "d2": p.d2,
                   "cov_diag": [0.0, 0.0, 0.0, 0.0], "hits": 5, "misses": 0,
                   "observations": 5, "confirmed": true})
        })
        .collect();
    json!({"frame_id": frame_id, "detector": "hough", "floorplan": null,
           "snapshot": {"epoch": 1, "walls": walls, "columns": []}})
}

#[test]
fn eval_scores_a_perfect_map() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "corridor", 2, 1, &[]);
    let gt_path = sim.join("gt.json");
    let gt: GroundTruth = serde_json::from_str(&fs::read_to_string(&gt_path).unwrap()).unwrap();
    let map = tmp.path().join("map.json");
    fs::write(&map, perfect_map(&gt, &gt.frame_id).to_string()).unwrap();
    let out = tmp.path().join("eval");
    let run = ok(&["eval", "--map", s(&map), "--gt", s(&gt_path), "--out", s(&out)]);
    let summary: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert!((summary["f1"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let report = read_json(&out.join("report.json"));
    for k in ["recall", "precision", "dist_err_cm", "angle_err_deg"] {
        assert!(report[k].is_number(), "{k} missing from {report}");
    }
    assert!(report["dist_err_cm"].as_f64().unwrap() < 1e-6);
    assert!(out.join("overlay.svg").is_file() && out.join("metrics.svg").is_file());

    fs::write(&map, perfect_map(&gt, "garage-0").to_string()).unwrap();
    let bad = bevmap(&["eval", "--map", s(&map), "--gt", s(&gt_path), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("garage-0"));
}

#[test]
fn bench_draws_one_bar_per_detector() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "garage", 3, 0, &[]);
    let out = tmp.path().join("bench");
    ok(&["bench", "--input", s(&sim), "--reps", "1", "--out", s(&out)]);
    let lat = read_json(&out.join("latency.json"));
    let runs = lat.as_array().unwrap();
    assert_eq!(runs.len(), 4);
    let svg = fs::read_to_string(out.join("latency.svg")).unwrap();
    for (r, name) in runs.iter().zip(["ransac", "hough", "lsd", "obb"]) {
        assert_eq!(r["detector"], name);
        let dropped = r["sensor_queue"]["dropped"].as_u64().unwrap();
        assert_eq!(r["frames"].as_u64().unwrap() + dropped, 3);
        assert_eq!(r["offered"], 3);
    }
    for label in ["RANSAC", "Hough", "LSD", "OBB"] {
        assert!(svg.to_lowercase().contains(&label.to_lowercase()), "{label}");
    }
    assert!(svg.contains("stroke-dasharray") && svg.contains("red"));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let target = blocker.join("out");
    let out = bevmap(&["simulate", "--frames", "1", "--out", s(&target)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&blocker)));
}

#[test]
fn flatten_accepts_csv_clouds() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("cloud.csv");
    let mut text = String::from("x,y,z\n");
    for i in 0..200 {
        let y = -2.0 + 0.02 * i as f64;
        text.push_str(&format!("3.0,{y},0.5\n3.0,{y},2.5\n"));
    }
    fs::write(&csv, text).unwrap();
    let out = tmp.path().join("flat");
    let run = ok(&["flatten", "--input", s(&csv), "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("200 points in band"));
    let side = read_json(&out.join("bev.json"));
    assert_eq!(side["size"], 4096);
    let pbm = fs::read(out.join("bev.pbm")).unwrap();
    assert!(pbm.starts_with(b"P4"));
}
