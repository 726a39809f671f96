use std::f64::consts::{FRAC_PI_2, PI};

use bevmap_core::fuse_local::{cluster_segments, distance_matrix, pair_distance, FusionThresholds};
use bevmap_core::geom::{axial_angle_diff, segment_to_polar, transform_polar, Point2, PolarSegment, Pose2, Segment2};
use bevmap_core::manhattan::{build_floorplan, edge_direction, estimate_dominant, snap_orthogonal, DominantFrame, ManhattanConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn seg(x1: f64, y1: f64, x2: f64, y2: f64) -> PolarSegment {
    segment_to_polar(&Segment2::new(Point2::new(x1, y1), Point2::new(x2, y2)).unwrap()).unwrap()
}

fn any_segment() -> impl Strategy<Value = PolarSegment> {
    (-20.0..20.0f64, -20.0..20.0f64, 0.1..10.0f64, 0.0..(2.0 * PI))
        .prop_map(|(x, y, len, a)| seg(x, y, x + len * a.cos(), y + len * a.sin()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pair_distance_is_symmetric(a in any_segment(), b in any_segment()) {
        let t = FusionThresholds::default();
        let (ab, ba) = (pair_distance(&a, &b, &t), pair_distance(&b, &a, &t));
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0), "{ab} vs {ba}");
    }

    #[test]
    fn snapping_is_exact_and_idempotent(
        axis in 0.0..FRAC_PI_2,
        walls in prop::collection::vec((any_segment(), -0.1..0.1f64, 0usize..4), 1..12),
    ) {
        let frame = DominantFrame { axis_angle: axis, support: 1.0 };
        let tol = 7f64.to_radians();
        let input: Vec<PolarSegment> = walls
            .iter()
            .map(|(s, jitter, k)| {
                let dir = axis + *k as f64 * FRAC_PI_2 + jitter;
                let m = s.midpoint();
                let h = 0.5 * s.length();
                let u = Point2::from_angle(dir);
                seg(m.x - h * u.x, m.y - h * u.y, m.x + h * u.x, m.y + h * u.y)
            })
            .collect();
        let once = snap_orthogonal(&input, &frame, tol);
        let normals = frame.normals();
        for (w, s) in input.iter().zip(&once) {
            prop_assert!(normals.contains(&s.alpha), "alpha {} not on the frame", s.alpha);
            prop_assert!(s.midpoint().distance(w.midpoint()) < 1e-9);
            prop_assert!((s.length() - w.length()).abs() < 1e-9);
        }
        prop_assert_eq!(snap_orthogonal(&once, &frame, tol), once);
    }

    #[test]
    fn dominant_axis_ignores_quarter_turns(walls in prop::collection::vec(any_segment(), 1..10)) {
        prop_assume!(estimate_dominant(&walls).is_ok());
        let turned: Vec<_> = walls.iter().map(|w| transform_polar(w, &Pose2::new(0.0, 0.0, FRAC_PI_2))).collect();
        let (a, b) = (estimate_dominant(&walls).unwrap(), estimate_dominant(&turned).unwrap());
        let d = (a.axis_angle - b.axis_angle).rem_euclid(FRAC_PI_2);
        prop_assert!(d.min(FRAC_PI_2 - d) < 1e-9, "{} vs {}", a.axis_angle, b.axis_angle);
    }

    #[test]
    fn clusters_are_the_transitive_closure(
        walls in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, 0.3..3.0f64, 0.0..0.3f64), 1..16)
    ) {
        let walls: Vec<PolarSegment> = walls
            .iter()
            .map(|&(x, y, len, a)| seg(x, y, x + len * a.cos(), y + len * a.sin()))
            .collect();
        let t = FusionThresholds::default();
        let m = distance_matrix(&walls, &t);
        let n = walls.len();
        // Union-find over every pair within the unit radius.
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(p: &mut [usize], i: usize) -> usize {
            if p[i] != i {
                p[i] = root(p, p[i]);
            }
            p[i]
        }
        for i in 0..n {
            for j in i + 1..n {
                if m[i][j] <= 1.0 {
                    let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let labels = cluster_segments(&walls, &t);
        for i in 0..n {
            for j in 0..n {
                let same = root(&mut parent, i) == root(&mut parent, j);
                prop_assert_eq!(labels[i] == labels[j], same, "{} {}", i, j);
            }
            prop_assert!(labels[i].is_some());
        }
    }
}

/// Walls of a rectilinear polygon rotated by `axis`, each with a small
/// directional error and pulled back from both corners.
fn noisy_polygon(vertices: &[(f64, f64)], axis: f64, sigma: f64, gap: f64, rng: &mut ChaCha8Rng) -> (Vec<PolarSegment>, Vec<Point2>) {
    let rot = Pose2::new(0.0, 0.0, axis);
    let pts: Vec<Point2> = vertices.iter().map(|&(x, y)| rot.apply(Point2::new(x, y))).collect();
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut walls = Vec::new();
    for i in 0..pts.len() {
        let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
        let len = p.distance(q);
        let u = (q - p) * (1.0 / len);
        let (a, b) = (p + u * gap, q - u * gap);
        let m = a.midpoint(b);
        let dir = u.y.atan2(u.x) + noise.sample(rng);
        let h = 0.5 * a.distance(b);
        let v = Point2::from_angle(dir);
        walls.push(seg(m.x - h * v.x, m.y - h * v.y, m.x + h * v.x, m.y + h * v.y));
    }
    (walls, pts)
}

#[test]
fn dominant_axis_averages_wall_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sigma = 1f64.to_radians();
    let (mut sq, trials) = (0.0, 200);
    let mut predicted = 0.0;
    for _ in 0..trials {
        let axis = rng.random_range(0.0..FRAC_PI_2);
        let mut walls = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                let (x, y) = (4.0 * i as f64, 3.0 * j as f64);
                let room = [(x, y), (x + 4.0, y), (x + 4.0, y + 3.0), (x, y + 3.0)];
                walls.extend(noisy_polygon(&room, axis, sigma, 0.1, &mut rng).0);
            }
        }
        let lens: Vec<f64> = walls.iter().map(|w| w.length()).collect();
        let total: f64 = lens.iter().sum();
        predicted = sigma * lens.iter().map(|l| l * l).sum::<f64>().sqrt() / total;
        let f = estimate_dominant(&walls).unwrap();
        let d = (f.axis_angle - axis).rem_euclid(FRAC_PI_2);
        let err = d.min(FRAC_PI_2 - d);
        assert!(err < 0.5f64.to_radians(), "axis {axis} estimate {}", f.axis_angle);
        sq += err * err;
    }
    let rms = (sq / trials as f64).sqrt();
    assert!((rms / predicted - 1.0).abs() < 0.25, "rms {rms} vs weighted-mean spread {predicted}");
}

#[test]
fn l_shaped_room_closes_into_six_corners() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let l = [(0.0, 0.0), (6.0, 0.0), (6.0, 3.0), (3.0, 3.0), (3.0, 5.0), (0.0, 5.0)];
    for k in 0..30 {
        let axis = rng.random_range(0.0..FRAC_PI_2);
        let (walls, vertices) = noisy_polygon(&l, axis, 0.5f64.to_radians(), 0.1, &mut rng);
        let fp = build_floorplan(&walls, &[], &ManhattanConfig::default()).unwrap();
        assert_eq!(fp.corners.len(), 6, "case {k}");
        assert_eq!(fp.loops.len(), 1);
        assert_eq!(fp.loops[0].len(), 6);
        for v in &vertices {
            let near = fp.corners.iter().map(|c| c.distance(*v)).fold(f64::INFINITY, f64::min);
            assert!(near <= 0.3, "vertex {v:?} is {near} m from the nearest corner");
        }
        let dirs: Vec<f64> = fp.loop_edges(0).iter().map(|&(a, b)| edge_direction(a, b)).collect();
        for w in dirs.windows(2) {
            assert!((axial_angle_diff(w[0], w[1]) - FRAC_PI_2).abs() < 1e-9);
        }
    }
}

#[test]
fn collinear_merge_leaves_separate_rooms_apart() {
    let mut walls = Vec::new();
    for ox in [0.0, 4.0] {
        walls.extend([
            seg(ox + 0.05, 0.0, ox + 2.95, 0.0),
            seg(ox + 3.0, 0.05, ox + 3.0, 1.95),
            seg(ox + 2.95, 2.0, ox + 0.05, 2.0),
            seg(ox, 1.95, ox, 0.05),
        ]);
    }
    let fp = build_floorplan(&walls, &[], &ManhattanConfig::default()).unwrap();
    assert_eq!(fp.walls.len(), 8);
    assert_eq!(fp.loops.len(), 2);
}
