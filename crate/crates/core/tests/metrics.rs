use bevmap_core::eval::{evaluate, match_to_gt, MatchCriteria};
use bevmap_core::geom::{Point2, Segment2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 0.01;

fn seg(x1: f64, y1: f64, x2: f64, y2: f64) -> Segment2 {
    Segment2::new(Point2::new(x1, y1), Point2::new(x2, y2)).unwrap()
}

/// A 10 x 6 room and noisy partial detections of its walls plus clutter.
fn scene(rng: &mut ChaCha8Rng) -> (Vec<Segment2>, Vec<Segment2>) {
    let gt = vec![seg(0.0, 0.0, 10.0, 0.0), seg(10.0, 0.0, 10.0, 6.0), seg(10.0, 6.0, 0.0, 6.0), seg(0.0, 6.0, 0.0, 0.0)];
    let mut det = Vec::new();
    for g in &gt {
        let (o, u, n) = (g.p1, g.direction(), g.direction().perp());
        for _ in 0..rng.random_range(1..4) {
            let a = rng.random_range(-1.0..g.length());
            let b = a + rng.random_range(0.5..5.0);
            let (ea, eb) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
            det.push(Segment2::new(o + u * a + n * ea, o + u * b + n * eb).unwrap());
        }
    }
    for _ in 0..3 {
        let p = Point2::new(rng.random_range(2.0..8.0), rng.random_range(2.0..4.0));
        det.push(Segment2::new(p, p + Point2::from_angle(rng.random_range(0.0..3.0))).unwrap());
    }
    (det, gt)
}

/// Midpoints of 1 cm cells along `s`.
fn samples(s: &Segment2) -> impl Iterator<Item = Point2> + '_ {
    let n = (s.length() / STEP).round().max(1.0) as usize;
    (0..n).map(move |k| s.p1 + (s.p2 - s.p1) * ((k as f64 + 0.5) / n as f64))
}

/// Recall and precision by walking both maps in 1 cm steps.
fn sampled(det: &[Segment2], gt: &[Segment2], c: &MatchCriteria) -> (f64, f64) {
    let corr = match_to_gt(det, gt, c);
    let (mut covered, mut total) = (0usize, 0usize);
    for (k, g) in gt.iter().enumerate() {
        let u = g.direction();
        for p in samples(g) {
            total += 1;
            let t = (p - g.p1).dot(u);
            let hit = det.iter().zip(&corr.matches).any(|(d, m)| {
                let (a, b) = ((d.p1 - g.p1).dot(u), (d.p2 - g.p1).dot(u));
                m.is_some_and(|m| m.gt == k) && a.min(b) <= t && t <= a.max(b)
            });
            covered += usize::from(hit);
        }
    }
    let recall = covered as f64 / total as f64;
    let (mut kept, mut weight) = (0.0, 0.0);
    for (d, m) in det.iter().zip(&corr.matches) {
        let n = samples(d).count() as f64;
        let w = d.length() / n;
        weight += d.length();
        let Some(m) = m else { continue };
        let g = gt[m.gt];
        let u = g.direction();
        // Projections of the samples that land on the wall extent.
        kept += w * samples(d).filter(|p| (0.0..=g.length()).contains(&(*p - g.p1).dot(u))).count() as f64;
    }
    (recall, kept / weight)
}

#[test]
fn metrics_agree_with_sampling() {
    let c = MatchCriteria::default();
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (det, gt) = scene(&mut rng);
        let r = evaluate(&det, &gt, &c).unwrap();
        let (recall, precision) = sampled(&det, &gt, &c);
        assert!((r.recall - recall).abs() <= 0.01 * recall.max(0.01), "seed {seed}: recall {} vs {recall}", r.recall);
        assert!(
            (r.precision - precision).abs() <= 0.01 * precision.max(0.01),
            "seed {seed}: precision {} vs {precision}",
            r.precision
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn extra_detections_never_lower_recall(seed in 0u64..10_000, x in 0.0..10.0f64, y in -0.2..6.2f64, len in 0.2..4.0f64, a in 0.0..3.2f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut det, gt) = scene(&mut rng);
        let c = MatchCriteria::default();
        let before = evaluate(&det, &gt, &c).unwrap();
        let p = Point2::new(x, y);
        det.push(Segment2::new(p, p + Point2::from_angle(a) * len).unwrap());
        let after = evaluate(&det, &gt, &c).unwrap();
        prop_assert!(after.recall >= before.recall - 1e-12);
    }

    #[test]
    fn exact_pieces_never_lower_precision(seed in 0u64..10_000, wall in 0usize..4, t0 in 0.0..0.9f64, frac in 0.05..0.5f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut det, gt) = scene(&mut rng);
        let c = MatchCriteria::default();
        let before = evaluate(&det, &gt, &c).unwrap();
        let g = gt[wall];
        let end = (t0 + frac).min(1.0);
        det.push(Segment2::new(g.p1 + (g.p2 - g.p1) * t0, g.p1 + (g.p2 - g.p1) * end).unwrap());
        let after = evaluate(&det, &gt, &c).unwrap();
        prop_assert!(after.precision >= before.precision - 1e-12);
        prop_assert!(after.recall >= before.recall - 1e-12);
    }

    #[test]
    fn clutter_never_raises_precision(seed in 0u64..10_000, x in 3.0..7.0f64, y in 2.0..4.0f64, a in 0.0..3.2f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut det, gt) = scene(&mut rng);
        let c = MatchCriteria::default();
        let before = evaluate(&det, &gt, &c).unwrap();
        let p = Point2::new(x, y);
        det.push(Segment2::new(p, p + Point2::from_angle(a)).unwrap());
        let after = evaluate(&det, &gt, &c).unwrap();
        prop_assert!(after.precision <= before.precision + 1e-12);
        prop_assert!((after.recall - before.recall).abs() < 1e-12);
    }
}
