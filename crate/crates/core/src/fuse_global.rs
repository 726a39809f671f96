//! Multi-epoch map: greedy association of per-frame walls with persistent
//! tracks, hit/miss lifecycle, and a Kalman filter on the polar state
//! `(rho, alpha, d1, d2)`. Columns are kept as running means.
//!
//! The world is assumed static, so prediction is the identity and the
//! filter only ever shrinks the covariance.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::detect::{positive, Column};
use crate::error::{Error, Result};
use crate::fuse_local::{pair_distance, FusionThresholds, LocalWallSet};
use crate::geom::{transform_polar, wrap_2pi, wrap_pi, Point2, PolarSegment, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub sigma_r: f64,
    pub sigma_alpha: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_r: 0.02,
            sigma_alpha: 0.5f64.to_radians(),
        }
    }
}

impl NoiseModel {
    /// Measurement covariance `diag(sr^2, sa^2, sr^2, sr^2)`, also the
    /// initial track covariance.
    pub fn covariance(&self) -> Matrix4<f64> {
        let (r, a) = (self.sigma_r * self.sigma_r, self.sigma_alpha * self.sigma_alpha);
        Matrix4::from_diagonal(&Vector4::new(r, a, r, r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifecycleConfig {
    pub confirm_hits: u32,
    pub max_misses: u32,
    pub visibility_range: f64,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        Self {
            confirm_hits: 3,
            max_misses: 5,
            visibility_range: 45.0,
        }
    }
}

/// How the tangential extent of a track follows its measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtentMode {
    /// `d1` and `d2` are filtered like `rho` and `alpha`.
    #[default]
    Kalman,
    /// `d1` and `d2` grow to the union of all observed extents.
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub noise: NoiseModel,
    pub lifecycle: LifecycleConfig,
    pub extent_mode: ExtentMode,
    /// Diagonal process noise added per update; zero for a static world.
    pub process_noise: f64,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            noise: NoiseModel::default(),
            lifecycle: LifecycleConfig::default(),
            extent_mode: ExtentMode::Kalman,
            process_noise: 0.0,
        }
    }
}

impl GlobalConfig {
    pub fn validate(&self) -> Result<()> {
        positive("global.noise.sigma_r", self.noise.sigma_r)?;
        positive("global.noise.sigma_alpha", self.noise.sigma_alpha)?;
        positive("global.lifecycle.confirm_hits", self.lifecycle.confirm_hits as f64)?;
        positive("global.lifecycle.max_misses", self.lifecycle.max_misses as f64)?;
        positive("global.lifecycle.visibility_range", self.lifecycle.visibility_range)?;
        if !(self.process_noise >= 0.0 && self.process_noise.is_finite()) {
            return Err(Error::Config("global.process_noise must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallTrack {
    pub id: u64,
    pub state: PolarSegment,
    pub covariance: Matrix4<f64>,
    pub hits: u32,
    pub misses: u32,
    pub observations: u32,
    pub confirmed: bool,
}

impl WallTrack {
    pub fn new(id: u64, meas: PolarSegment, noise: &NoiseModel) -> Self {
        Self {
            id,
            state: meas.canonical(),
            covariance: noise.covariance(),
            hits: 1,
            misses: 0,
            observations: 1,
            confirmed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnTrack {
    pub id: u64,
    pub center: Point2,
    pub radius: f64,
    pub observations: u32,
    pub hits: u32,
    pub misses: u32,
}

/// Running mean of centre and radius.
pub fn column_update(track: &mut ColumnTrack, meas: &Column) {
    let n = track.observations as f64;
    track.center = (track.center * n + meas.center) * (1.0 / (n + 1.0));
    track.radius = (track.radius * n + meas.radius) / (n + 1.0);
    track.observations += 1;
}

fn to_vec(s: &PolarSegment) -> Vector4<f64> {
    Vector4::new(s.rho, s.alpha, s.d1, s.d2)
}

/// One Kalman correction with `H = I`. The measurement is first expressed
/// with a normal on the track's side and the angle innovation is wrapped.
/// If the corrected `rho` turns negative the state is re-expressed with the
/// opposite normal and the covariance transformed to match.
pub fn kalman_update(
    track: &mut WallTrack,
    meas: &PolarSegment,
    noise: &NoiseModel,
    process_noise: f64,
    mode: ExtentMode,
) -> Result<()> {
    let z = meas.aligned_to(track.state.alpha);
    let x = to_vec(&track.state);
    let p = track.covariance + Matrix4::identity() * process_noise;
    let r = noise.covariance();
    let s = p + r;
    let s_inv = s
        .try_inverse()
        .ok_or(Error::FilterDivergence { track: track.id })?;
    let k = p * s_inv;
    let mut innov = to_vec(&z) - x;
    innov[1] = wrap_pi(innov[1]);
    let mut xn = x + k * innov;
    let mut pn = (Matrix4::identity() - k) * p;
    pn = (pn + pn.transpose()) * 0.5;
    if pn.cholesky().is_none() {
        return Err(Error::FilterDivergence { track: track.id });
    }
    if mode == ExtentMode::Union {
        xn[2] = x[2].min(z.d1);
        xn[3] = x[3].max(z.d2);
    }
    let mut state = PolarSegment {
        rho: xn[0],
        alpha: wrap_2pi(xn[1]),
        d1: xn[2],
        d2: xn[3],
    };
    if state.rho < 0.0 {
        state = state.flipped();
        #[rustfmt::skip]
        let j = Matrix4::new(
            -1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 0.0, -1.0,
            0.0, 0.0, -1.0, 0.0,
        );
        pn = j * pn * j.transpose();
    }
    if state.d1 > state.d2 {
        std::mem::swap(&mut state.d1, &mut state.d2);
    }
    track.state = state;
    track.covariance = pn;
    track.observations += 1;
    Ok(())
}

/// Result of greedy association. Indices refer to the slices passed to
/// [`match_features`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    /// `(track index, local index, score)` in acceptance order.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_locals: Vec<usize>,
    pub unmatched_tracks: Vec<usize>,
}

/// Greedy association by descending score `1 - pair_distance`, gated at
/// distance below one. Ties go to the lower track id, then the lower local
/// index. `locals` must already be in the map frame.
pub fn match_features(locals: &[PolarSegment], tracks: &[WallTrack], t: &FusionThresholds) -> Matching {
    let mut cands = Vec::new();
    for (ti, tr) in tracks.iter().enumerate() {
        for (li, l) in locals.iter().enumerate() {
            let d = pair_distance(&tr.state, l, t);
            if d < 1.0 {
                cands.push((1.0 - d, tr.id, li, ti));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; tracks.len()];
    let mut local_used = vec![false; locals.len()];
    let mut m = Matching::default();
    for (score, _, li, ti) in cands {
        if track_used[ti] || local_used[li] {
            continue;
        }
        track_used[ti] = true;
        local_used[li] = true;
        m.pairs.push((ti, li, score));
    }
    m.unmatched_locals = (0..locals.len()).filter(|&i| !local_used[i]).collect();
    m.unmatched_tracks = (0..tracks.len()).filter(|&i| !track_used[i]).collect();
    m
}

fn segment_distance(s: &PolarSegment, p: Point2) -> f64 {
    let d = s.project(p).clamp(s.d1, s.d2);
    s.point_at(d).distance(p)
}

/// Counters from one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochStats {
    pub matched: usize,
    pub created: usize,
    pub deleted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMap {
    pub cfg: GlobalConfig,
    pub thresholds: FusionThresholds,
    pub walls: Vec<WallTrack>,
    pub columns: Vec<ColumnTrack>,
    pub epoch: u64,
    next_id: u64,
}

impl GlobalMap {
    pub fn new(cfg: GlobalConfig, thresholds: FusionThresholds) -> Result<Self> {
        cfg.validate()?;
        thresholds.validate()?;
        Ok(Self {
            cfg,
            thresholds,
            walls: Vec::new(),
            columns: Vec::new(),
            epoch: 0,
            next_id: 0,
        })
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Folds one frame's walls and columns, observed from `pose`, into the
    /// map.
    pub fn update(&mut self, local: &LocalWallSet, pose: &Pose2) -> Result<EpochStats> {
        self.epoch += 1;
        let lc = self.cfg.lifecycle;
        let here = pose.position();
        let locals: Vec<PolarSegment> = local.walls.iter().map(|w| transform_polar(w, pose)).collect();
        let m = match_features(&locals, &self.walls, &self.thresholds);
        let mut stats = EpochStats {
            matched: m.pairs.len(),
            ..Default::default()
        };

        for &(ti, li, _) in &m.pairs {
            let tr = &mut self.walls[ti];
            kalman_update(tr, &locals[li], &self.cfg.noise, self.cfg.process_noise, self.cfg.extent_mode)?;
            tr.hits += 1;
            tr.misses = 0;
        }
        for &ti in &m.unmatched_tracks {
            let tr = &mut self.walls[ti];
            if segment_distance(&tr.state, here) <= lc.visibility_range {
                tr.misses += 1;
            }
        }
        for &li in &m.unmatched_locals {
            let id = self.fresh_id();
            self.walls.push(WallTrack::new(id, locals[li], &self.cfg.noise));
            stats.created += 1;
        }
        let before = self.walls.len();
        self.walls.retain(|t| t.misses <= lc.max_misses);
        stats.deleted = before - self.walls.len();
        for t in &mut self.walls {
            if t.hits >= lc.confirm_hits {
                t.confirmed = true;
            }
        }

        let cols: Vec<Column> = local
            .columns
            .iter()
            .map(|c| Column {
                center: pose.apply(c.center),
                radius: c.radius,
            })
            .collect();
        self.update_columns(&cols, here);
        Ok(stats)
    }

    fn update_columns(&mut self, cols: &[Column], here: Point2) {
        let lc = self.cfg.lifecycle;
        let gate = self.thresholds.tau_d;
        let mut cands = Vec::new();
        for (ti, tr) in self.columns.iter().enumerate() {
            for (ci, c) in cols.iter().enumerate() {
                let d = tr.center.distance(c.center);
                if d <= gate {
                    cands.push((d, tr.id, ci, ti));
                }
            }
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut tused = vec![false; self.columns.len()];
        let mut cused = vec![false; cols.len()];
        for (_, _, ci, ti) in cands {
            if tused[ti] || cused[ci] {
                continue;
            }
            tused[ti] = true;
            cused[ci] = true;
            let tr = &mut self.columns[ti];
            column_update(tr, &cols[ci]);
            tr.hits += 1;
            tr.misses = 0;
        }
        for (ti, tr) in self.columns.iter_mut().enumerate() {
            if !tused[ti] && tr.center.distance(here) <= lc.visibility_range {
                tr.misses += 1;
            }
        }
        for (ci, c) in cols.iter().enumerate() {
            if !cused[ci] {
                let id = self.fresh_id();
                self.columns.push(ColumnTrack {
                    id,
                    center: c.center,
                    radius: c.radius,
                    observations: 1,
                    hits: 1,
                    misses: 0,
                });
            }
        }
        self.columns.retain(|t| t.misses <= lc.max_misses);
    }

    pub fn confirmed_walls(&self) -> impl Iterator<Item = &WallTrack> {
        self.walls.iter().filter(|t| t.confirmed)
    }

    pub fn confirmed_columns(&self) -> impl Iterator<Item = &ColumnTrack> {
        let k = self.cfg.lifecycle.confirm_hits;
        self.columns.iter().filter(move |c| c.hits >= k)
    }

    pub fn snapshot(&self) -> MapSnapshot {
        MapSnapshot {
            epoch: self.epoch,
            walls: self
                .walls
                .iter()
                .map(|t| WallRecord {
                    id: t.id,
                    rho: t.state.rho,
                    alpha: t.state.alpha,
                    d1: t.state.d1,
                    d2: t.state.d2,
                    cov_diag: [0, 1, 2, 3].map(|i| t.covariance[(i, i)]),
                    hits: t.hits,
                    misses: t.misses,
                    observations: t.observations,
                    confirmed: t.confirmed,
                })
                .collect(),
            columns: self
                .confirmed_columns()
                .map(|c| ColumnRecord {
                    id: c.id,
                    x: c.center.x,
                    y: c.center.y,
                    r: c.radius,
                    observations: c.observations,
                })
                .collect(),
        }
    }
}

/// Immutable copy of the map after an epoch. Lists every live wall track
/// (with its `confirmed` flag) and every confirmed column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSnapshot {
    pub epoch: u64,
    pub walls: Vec<WallRecord>,
    pub columns: Vec<ColumnRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallRecord {
    pub id: u64,
    pub rho: f64,
    pub alpha: f64,
    pub d1: f64,
    pub d2: f64,
    pub cov_diag: [f64; 4],
    pub hits: u32,
    pub misses: u32,
    /// Number of measurements fused into the state.
    pub observations: u32,
    pub confirmed: bool,
}

impl WallRecord {
    pub fn segment(&self) -> PolarSegment {
        PolarSegment {
            rho: self.rho,
            alpha: self.alpha,
            d1: self.d1,
            d2: self.d2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRecord {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub observations: u32,
}

impl MapSnapshot {
    pub fn confirmed_walls(&self) -> impl Iterator<Item = &WallRecord> {
        self.walls.iter().filter(|w| w.confirmed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn wall(rho: f64, alpha: f64) -> PolarSegment {
        PolarSegment { rho, alpha, d1: -1.0, d2: 1.0 }
    }

    fn local(walls: Vec<PolarSegment>) -> LocalWallSet {
        LocalWallSet {
            walls,
            columns: vec![],
            frame_ts: 0.0,
            source: crate::detect::DetectorKind::Ransac,
        }
    }

    #[test]
    fn identical_measurements_closed_form() {
        let noise = NoiseModel { sigma_r: 0.02, sigma_alpha: 0.01 };
        let z = wall(2.0, 0.3);
        let mut t = WallTrack::new(0, z, &noise);
        for n in 1..=3 {
            kalman_update(&mut t, &z, &noise, 0.0, ExtentMode::Kalman).unwrap();
            let want = 0.0004 / (n as f64 + 1.0);
            assert!((t.covariance[(0, 0)] - want).abs() < 1e-18);
        }
        assert!((t.covariance[(0, 0)] - 1e-4).abs() < 1e-18);
        assert_eq!(t.state, z);
        assert_eq!(t.observations, 4);
    }

    #[test]
    fn alpha_innovation_wraps() {
        let noise = NoiseModel::default();
        let mut t = WallTrack::new(0, wall(2.0, 0.05), &noise);
        kalman_update(&mut t, &wall(2.0, TAU - 0.05), &noise, 0.0, ExtentMode::Kalman).unwrap();
        let a = wrap_pi(t.state.alpha);
        assert!(a.abs() < 1e-12, "{a}");
    }

    #[test]
    fn trace_decreases() {
        let noise = NoiseModel::default();
        let mut t = WallTrack::new(0, wall(2.0, 0.0), &noise);
        let before = t.covariance.trace();
        kalman_update(&mut t, &wall(2.01, 0.002), &noise, 0.0, ExtentMode::Kalman).unwrap();
        assert!(t.covariance.trace() < before);
    }

    #[test]
    fn competing_locals() {
        let th = FusionThresholds::default();
        let noise = NoiseModel::default();
        let tracks = vec![WallTrack::new(0, wall(2.0, 0.0), &noise)];
        let m = match_features(&[wall(2.0, 0.0)], &tracks, &th);
        assert_eq!(m.pairs, vec![(0, 0, 1.0)]);
        let m = match_features(&[wall(2.1, 0.0), wall(2.02, 0.0)], &tracks, &th);
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].1, 1);
        assert_eq!(m.unmatched_locals, vec![0]);
    }

    #[test]
    fn lifecycle_confirms_and_deletes() {
        let mut map = GlobalMap::new(GlobalConfig::default(), FusionThresholds::default()).unwrap();
        let static_wall = wall(3.0, 0.0);
        let pedestrian = PolarSegment { rho: 1.0, alpha: 1.5, d1: 0.0, d2: 0.6 };
        map.update(&local(vec![static_wall, pedestrian]), &Pose2::IDENTITY).unwrap();
        for epoch in 2..=7 {
            map.update(&local(vec![static_wall]), &Pose2::IDENTITY).unwrap();
            let ped_alive = map.walls.iter().any(|t| t.id == 1);
            assert_eq!(ped_alive, epoch < 7, "epoch {epoch}");
            assert_eq!(map.walls[0].confirmed, epoch >= 3);
        }
        assert_eq!(map.snapshot().confirmed_walls().count(), 1);
    }

    #[test]
    fn invisible_track_keeps_misses() {
        let mut map = GlobalMap::new(GlobalConfig::default(), FusionThresholds::default()).unwrap();
        map.update(&local(vec![wall(60.0, 0.0)]), &Pose2::IDENTITY).unwrap();
        map.update(&local(vec![]), &Pose2::IDENTITY).unwrap();
        assert_eq!(map.walls[0].misses, 0);
    }

    #[test]
    fn column_running_mean() {
        let mut c = ColumnTrack {
            id: 0,
            center: Point2::ORIGIN,
            radius: 0.2,
            observations: 1,
            hits: 1,
            misses: 0,
        };
        column_update(&mut c, &Column { center: Point2::new(1.0, 0.0), radius: 0.4 });
        assert_eq!(c.center, Point2::new(0.5, 0.0));
        assert!((c.radius - 0.3).abs() < 1e-15);
    }

    #[test]
    fn snapshot_json_keys() {
        let mut map = GlobalMap::new(GlobalConfig::default(), FusionThresholds::default()).unwrap();
        map.update(&local(vec![wall(3.0, 0.0)]), &Pose2::IDENTITY).unwrap();
        let v = serde_json::to_value(map.snapshot()).unwrap();
        assert_eq!(v["epoch"], 1);
        for k in ["id", "rho", "alpha", "d1", "d2", "cov_diag", "hits", "misses", "observations", "confirmed"] {
            assert!(v["walls"][0].get(k).is_some(), "{k}");
        }
    }
}
