use std::f64::consts::PI;

use bevmap_core::detect::{DetectorKind, RawDetection};
use bevmap_core::fuse_global::{match_features, GlobalConfig, GlobalMap, LifecycleConfig, NoiseModel, WallTrack};
use bevmap_core::fuse_local::{cluster_segments, fuse_cluster, fuse_local, FusionThresholds, LocalWallSet};
use bevmap_core::geom::{axial_angle_diff, segment_to_polar, Point2, PolarSegment, Pose2, Segment2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn seg(x1: f64, y1: f64, x2: f64, y2: f64) -> Segment2 {
    Segment2::new(Point2::new(x1, y1), Point2::new(x2, y2)).unwrap()
}

fn polar(s: &Segment2) -> PolarSegment {
    segment_to_polar(s).unwrap()
}

/// Total-least-squares line through `pts`, clipped to their projections.
fn fit(pts: &[Point2]) -> Segment2 {
    let n = pts.len() as f64;
    let m = Point2::new(pts.iter().map(|p| p.x).sum::<f64>() / n, pts.iter().map(|p| p.y).sum::<f64>() / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let d = *p - m;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let u = Point2::from_angle(0.5 * (2.0 * sxy).atan2(sxx - syy));
    let ts = pts.iter().map(|p| (*p - m).dot(u));
    let (lo, hi) = ts.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    Segment2::new(m + u * lo, m + u * hi).unwrap()
}

#[test]
fn noisy_fragments_fuse_onto_the_wall() {
    // Range precision of the sensor, applied across the wall.
    let noise = Normal::new(0.0, 0.02).unwrap();
    let t = FusionThresholds::default();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axis = rng.random_range(0.0..PI);
        let (u, n) = (Point2::from_angle(axis), Point2::from_angle(axis).perp());
        let o = Point2::new(1.5, -0.7);
        let gt = polar(&Segment2::new(o, o + u * 8.0).unwrap());
        let frags: Vec<PolarSegment> = (0..10)
            .map(|k| {
                let a = 0.7 * k as f64 + rng.random_range(-0.1..0.1);
                let pts: Vec<Point2> = (0..60)
                    .map(|i| o + u * (a + 0.02 * i as f64) + n * noise.sample(&mut rng))
                    .collect();
                polar(&fit(&pts))
            })
            .collect();
        let labels = cluster_segments(&frags, &t);
        assert!(labels.iter().all(|l| *l == labels[0]), "seed {seed}: {labels:?}");
        let fused = fuse_cluster(&frags, false).unwrap();
        // Unit normals flipped onto the first one's half-plane, then averaged.
        let a0 = frags[0].alpha;
        let (sx, sy) = frags.iter().fold((0.0, 0.0), |(x, y), f| {
            let a = if (f.alpha - a0).cos() < 0.0 { f.alpha + PI } else { f.alpha };
            (x + a.cos(), y + a.sin())
        });
        let mean_normal = sy.atan2(sx);
        assert!(axial_angle_diff(fused.alpha, mean_normal) < 1e-9);
        let off = gt.signed_distance(fused.midpoint());
        assert!(off.abs() < 0.02, "seed {seed}: offset {off} m");
        let da = axial_angle_diff(fused.direction_angle(), gt.direction_angle()).to_degrees();
        assert!(da < 0.5, "seed {seed}: {da} deg");
    }
}

/// Replays greedy association: take the best remaining admissible pair
/// over and over until none is left.
fn greedy_oracle(locals: &[PolarSegment], tracks: &[WallTrack], t: &FusionThresholds) -> Vec<(usize, usize)> {
    let (mut tu, mut lu) = (vec![false; tracks.len()], vec![false; locals.len()]);
    let mut out = Vec::new();
    loop {
        let mut best: Option<(f64, u64, usize, usize)> = None;
        for (ti, tr) in tracks.iter().enumerate() {
            for (li, l) in locals.iter().enumerate() {
                if tu[ti] || lu[li] {
                    continue;
                }
                let d = bevmap_core::fuse_local::pair_distance(&tr.state, l, t);
                if d >= 1.0 {
                    continue;
                }
                let key = (1.0 - d, tr.id, li, ti);
                let better = match best {
                    None => true,
                    Some(b) => key.0 > b.0 || (key.0 == b.0 && (key.1, key.2) < (b.1, b.2)),
                };
                if better {
                    best = Some(key);
                }
            }
        }
        let Some((_, _, li, ti)) = best else { break };
        tu[ti] = true;
        lu[li] = true;
        out.push((ti, li));
    }
    out
}

#[test]
fn greedy_association_matches_replay() {
    let t = FusionThresholds::default();
    let noise = NoiseModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut contested = 0;
    for case in 0..500 {
        let nt = rng.random_range(1..=8);
        let nl = rng.random_range(1..=8);
        // Walls crowded into a small area so that gates overlap often.
        let wall = |rng: &mut ChaCha8Rng| {
            let a = rng.random_range(0.0..0.15);
            let p = Point2::new(rng.random_range(0.0..1.0), rng.random_range(0.0..0.6));
            polar(&Segment2::new(p, p + Point2::from_angle(a) * rng.random_range(0.5..2.0)).unwrap())
        };
        let tracks: Vec<WallTrack> = (0..nt)
            .map(|i| WallTrack::new(10 * (nt - i) as u64, wall(&mut rng), &noise))
            .collect();
        let locals: Vec<PolarSegment> = (0..nl).map(|_| wall(&mut rng)).collect();
        let m = match_features(&locals, &tracks, &t);
        let got: Vec<(usize, usize)> = m.pairs.iter().map(|&(ti, li, _)| (ti, li)).collect();
        assert_eq!(got, greedy_oracle(&locals, &tracks, &t), "case {case}");
        let admissible = tracks
            .iter()
            .flat_map(|tr| locals.iter().map(move |l| (tr, l)))
            .filter(|(tr, l)| bevmap_core::fuse_local::pair_distance(&tr.state, l, &t) < 1.0)
            .count();
        if admissible > got.len() {
            contested += 1;
        }
        let mut tracks_seen: Vec<usize> = got.iter().map(|p| p.0).chain(m.unmatched_tracks.iter().copied()).collect();
        tracks_seen.sort();
        assert_eq!(tracks_seen, (0..nt).collect::<Vec<_>>());
    }
    assert!(contested > 100, "only {contested} cases had competing candidates");
}

fn local_set(walls: Vec<Segment2>, ts: f64) -> LocalWallSet {
    let det = RawDetection {
        segments: walls,
        ..RawDetection::empty(DetectorKind::Ransac, ts)
    };
    fuse_local(&det, &FusionThresholds::default()).unwrap()
}

#[test]
fn pedestrian_is_never_confirmed() {
    let cfg = GlobalConfig {
        lifecycle: LifecycleConfig {
            max_misses: 5,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut map = GlobalMap::new(cfg, FusionThresholds::default()).unwrap();
    let wall = seg(-3.0, 2.0, 3.0, 2.0);
    let person = seg(0.5, 0.0, 1.1, 0.0);
    let mut gone_at = None;
    for k in 0..10 {
        let mut walls = vec![wall];
        if k == 0 {
            walls.push(person);
        }
        map.update(&local_set(walls, 0.1 * k as f64), &Pose2::default()).unwrap();
        let snap = map.snapshot();
        let person_track = snap.walls.iter().find(|w| (w.segment().rho).abs() < 0.05);
        if let Some(p) = person_track {
            assert!(!p.confirmed);
        } else if gone_at.is_none() {
            gone_at = Some(k + 1);
        }
    }
    let frame = gone_at.expect("pedestrian track never deleted");
    assert!(frame <= 7, "deleted at frame {frame}");
    assert_eq!(map.confirmed_walls().count(), 1);
}

#[test]
fn local_sets_replay_from_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let poses: Vec<Pose2> = (0..6).map(|k| Pose2::new(0.3 * k as f64, 0.05 * k as f64, 0.02 * k as f64)).collect();
    let sets: Vec<LocalWallSet> = poses
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let inv = p.inverse();
            let mut walls = Vec::new();
            for (a, b) in [((-4.0, 3.0), (4.0, 3.0)), ((4.0, 3.0), (4.0, -2.0)), ((4.0, -2.0), (-4.0, -2.0))] {
                let j = rng.random_range(-0.02..0.02);
                let w = seg(a.0, a.1 + j, b.0, b.1 + j);
                walls.push(Segment2::new(inv.apply(w.p1), inv.apply(w.p2)).unwrap());
            }
            local_set(walls, 0.1 * k as f64)
        })
        .collect();
    let replay: Vec<LocalWallSet> = sets
        .iter()
        .map(|s| serde_json::from_str(&serde_json::to_string(s).unwrap()).unwrap())
        .collect();
    assert_eq!(replay, sets);
    let run = |sets: &[LocalWallSet]| {
        let mut m = GlobalMap::new(GlobalConfig::default(), FusionThresholds::default()).unwrap();
        for (s, p) in sets.iter().zip(&poses) {
            m.update(s, p).unwrap();
        }
        serde_json::to_string(&m.snapshot()).unwrap()
    };
    assert_eq!(run(&sets), run(&replay));
}
