//! Four-stage dataflow: data interface (flattening), detector, local
//! fusion, and global fusion with the Manhattan overlay. Stages run on
//! their own threads and hand messages over capacity-one queues; the same
//! stage functions can also be called back to back on one thread.
//!
//! Messages after the detector travel as JSON bytes, the same wire format
//! the stages would exchange across processes. The flattened frame is
//! handed over by ownership.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::bev::{flatten_cloud, flatten_pipeline, FlattenConfig, Flattened, LidarFrame, Point3};
use crate::detect::{
    detect_hough, detect_lsd, detect_ransac, obb_to_features, DetectorKind, HoughConfig, LsdConfig, ObbRecord,
    RansacConfig, RawDetection,
};
use crate::error::{Error, Result};
use crate::fuse_global::{GlobalConfig, GlobalMap, MapSnapshot};
use crate::fuse_local::{fuse_local, FusionThresholds, LocalWallSet};
use crate::geom::Pose2;
use crate::manhattan::{build_floorplan, Floorplan, ManhattanConfig};

/// What a full queue does with a new message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueuePolicy {
    /// Discard the waiting message and keep the new one.
    ReplaceOldest,
    /// Wait until the consumer has taken the waiting message.
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueueStats {
    pub delivered: u64,
    pub dropped: u64,
}

struct Slot<T> {
    item: Option<T>,
    closed: bool,
    stats: QueueStats,
}

/// Single-slot hand-off between two stages.
pub struct StageQueue<T> {
    policy: QueuePolicy,
    slot: Mutex<Slot<T>>,
    ready: Condvar,
}

impl<T> StageQueue<T> {
    pub fn new(policy: QueuePolicy) -> Self {
        Self {
            policy,
            slot: Mutex::new(Slot {
                item: None,
                closed: false,
                stats: QueueStats::default(),
            }),
            ready: Condvar::new(),
        }
    }

    /// Offers a message. Returns `false` once the queue is closed.
    pub fn push(&self, item: T) -> bool {
        let mut s = self.slot.lock().unwrap();
        if self.policy == QueuePolicy::Block {
            while s.item.is_some() && !s.closed {
                s = self.ready.wait(s).unwrap();
            }
        }
        if s.closed {
            return false;
        }
        if s.item.replace(item).is_some() {
            s.stats.dropped += 1;
        }
        self.ready.notify_all();
        true
    }

    /// Takes the waiting message, blocking until one arrives. Returns
    /// `None` when the queue is closed and empty.
    pub fn pop(&self) -> Option<T> {
        let mut s = self.slot.lock().unwrap();
        loop {
            if let Some(item) = s.item.take() {
                s.stats.delivered += 1;
                self.ready.notify_all();
                return Some(item);
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).unwrap();
        }
    }

    /// No further pushes; a waiting message can still be popped.
    pub fn close(&self) {
        self.slot.lock().unwrap().closed = true;
        self.ready.notify_all();
    }

    /// Closes and discards any waiting message, counting it as dropped.
    pub fn abort(&self) {
        let mut s = self.slot.lock().unwrap();
        s.closed = true;
        if s.item.take().is_some() {
            s.stats.dropped += 1;
        }
        self.ready.notify_all();
    }

    pub fn stats(&self) -> QueueStats {
        self.slot.lock().unwrap().stats
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObbConfig {
    pub confidence_floor: f64,
}

impl Default for ObbConfig {
    fn default() -> Self {
        Self {
            confidence_floor: crate::detect::obb::DEFAULT_CONFIDENCE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueueConfig {
    /// Policy between the data interface and the detector.
    pub sensor: QueuePolicy,
    /// Policy between the later stages.
    pub fusion: QueuePolicy,
    /// Replay rate of the frame source; zero replays as fast as possible.
    pub source_rate_hz: f64,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self {
            sensor: QueuePolicy::ReplaceOldest,
            fusion: QueuePolicy::Block,
            source_rate_hz: 10.0,
        }
    }
}

impl QueueConfig {
    /// No drops anywhere and no pacing.
    pub fn lossless() -> Self {
        Self {
            sensor: QueuePolicy::Block,
            fusion: QueuePolicy::Block,
            source_rate_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub detector: DetectorKind,
    pub ransac: RansacConfig,
    pub hough: HoughConfig,
    pub lsd: LsdConfig,
    pub obb: ObbConfig,
    pub flatten: FlattenConfig,
    pub fusion: FusionThresholds,
    pub global: GlobalConfig,
    pub manhattan: ManhattanConfig,
    pub queues: QueueConfig,
    /// Overrides the detector seeds when set.
    pub seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorKind::Hough,
            ransac: RansacConfig::default(),
            hough: HoughConfig::default(),
            lsd: LsdConfig::default(),
            obb: ObbConfig::default(),
            flatten: FlattenConfig::default(),
            fusion: FusionThresholds::default(),
            global: GlobalConfig::default(),
            manhattan: ManhattanConfig::default(),
            queues: QueueConfig::default(),
            seed: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.flatten.validate()?;
        self.fusion.validate()?;
        self.global.validate()?;
        self.manhattan.validate()?;
        match self.detector {
            DetectorKind::Ransac => self.ransac.validate(),
            DetectorKind::Hough => self.hough.validate(),
            DetectorKind::Lsd => self.lsd.validate(),
            DetectorKind::Obb => Ok(()),
        }?;
        if !(self.queues.source_rate_hz >= 0.0 && self.queues.source_rate_hz.is_finite()) {
            return Err(Error::Config("queues.source_rate_hz must be >= 0".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn seeded(mut self) -> Self {
        if let Some(s) = self.seed {
            self.ransac.seed = s;
            self.hough.seed = s;
        }
        self
    }
}

/// Raw sensor data for one frame.
#[derive(Debug, Clone)]
pub enum SensorData {
    Sweep(LidarFrame),
    /// Cartesian sensor-frame cloud, e.g. read from CSV.
    Cloud { points: Vec<Point3>, timestamp: f64 },
}

impl SensorData {
    pub fn timestamp(&self) -> f64 {
        match self {
            SensorData::Sweep(f) => f.timestamp,
            SensorData::Cloud { timestamp, .. } => *timestamp,
        }
    }
}

/// One frame of sensor data with the pose it was taken from and, for the
/// OBB adapter, the externally produced boxes.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub frame: SensorData,
    pub pose: Pose2,
    pub obb: Option<Vec<ObbRecord>>,
}

/// Per-frame timings in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencySample {
    pub frame_ts: f64,
    pub preprocess_ms: f64,
    pub detector_ms: f64,
    pub local_fusion_ms: f64,
    pub global_fusion_ms: f64,
    pub transfer_ms: f64,
    pub end_to_end_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochOutput {
    pub snapshot: MapSnapshot,
    pub floorplan: Option<Floorplan>,
    /// Why no floorplan was produced, when the optimiser rejected the map.
    pub floorplan_error: Option<String>,
    pub latency: LatencySample,
    /// Number of raw detector segments in this frame.
    pub raw_segments: usize,
    /// Number of walls after local fusion.
    pub local_walls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub epochs: Vec<EpochOutput>,
    pub offered: u64,
    pub sensor_queue: QueueStats,
    pub detection_queue: QueueStats,
    pub local_queue: QueueStats,
}

impl PipelineRun {
    pub fn final_snapshot(&self) -> Option<&MapSnapshot> {
        self.epochs.last().map(|e| &e.snapshot)
    }
}

/// Test instrumentation: slow the detector or make a stage panic.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hooks {
    pub detector_delay: Duration,
    /// Panic in the named stage when it sees the frame with this index.
    pub panic_at: Option<(&'static str, usize)>,
}

pub const STAGE_DATA: &str = "data-interface";
pub const STAGE_DETECTOR: &str = "detector";
pub const STAGE_LOCAL: &str = "local-fusion";
pub const STAGE_GLOBAL: &str = "global-fusion";

/// Bookkeeping that travels with a frame through the stages.
#[derive(Debug, Clone, Copy)]
struct Envelope {
    index: usize,
    pose: Pose2,
    acquired: Instant,
    latency: LatencySample,
}

struct Stages {
    cfg: PipelineConfig,
    hooks: Hooks,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl Stages {
    fn check_panic(&self, stage: &'static str, index: usize) {
        if self.hooks.panic_at == Some((stage, index)) {
            panic!("injected failure in {stage}");
        }
    }

    fn preprocess(&self, env: &mut Envelope, input: &FrameInput) -> Result<Flattened> {
        self.check_panic(STAGE_DATA, env.index);
        let t = Instant::now();
        let f = match &input.frame {
            SensorData::Sweep(frame) => flatten_pipeline(frame, &self.cfg.flatten)?,
            SensorData::Cloud { points, .. } => flatten_cloud(points, &self.cfg.flatten)?,
        };
        env.latency.preprocess_ms = ms(t.elapsed());
        Ok(f)
    }

    fn detect(&self, env: &mut Envelope, flat: &Flattened, obb: Option<&[ObbRecord]>) -> Result<Vec<u8>> {
        self.check_panic(STAGE_DETECTOR, env.index);
        if !self.hooks.detector_delay.is_zero() {
            thread::sleep(self.hooks.detector_delay);
        }
        let ts = env.latency.frame_ts;
        let t = Instant::now();
        let c = &self.cfg;
        let det = match c.detector {
            DetectorKind::Ransac => detect_ransac(&flat.points, &c.ransac, ts)?,
            DetectorKind::Hough => detect_hough(&flat.image, &c.hough, ts)?,
            DetectorKind::Lsd => detect_lsd(&flat.image, &c.lsd, ts)?,
            DetectorKind::Obb => obb_to_features(obb.unwrap_or(&[]), &c.flatten.raster, c.obb.confidence_floor, ts),
        };
        env.latency.detector_ms = ms(t.elapsed());
        let t = Instant::now();
        let bytes = serde_json::to_vec(&det)?;
        env.latency.transfer_ms += ms(t.elapsed());
        Ok(bytes)
    }

    fn local(&self, env: &mut Envelope, bytes: &[u8]) -> Result<(Vec<u8>, usize, usize)> {
        self.check_panic(STAGE_LOCAL, env.index);
        let t = Instant::now();
        let det: RawDetection = serde_json::from_slice(bytes)?;
        env.latency.transfer_ms += ms(t.elapsed());
        let t = Instant::now();
        let set = fuse_local(&det, &self.cfg.fusion)?;
        env.latency.local_fusion_ms = ms(t.elapsed());
        let t = Instant::now();
        let out = serde_json::to_vec(&set)?;
        env.latency.transfer_ms += ms(t.elapsed());
        Ok((out, det.segments.len(), set.walls.len()))
    }

    fn global(&self, env: &mut Envelope, map: &mut GlobalMap, bytes: &[u8]) -> Result<(MapSnapshot, Option<Floorplan>, Option<String>)> {
        self.check_panic(STAGE_GLOBAL, env.index);
        let t = Instant::now();
        let set: LocalWallSet = serde_json::from_slice(bytes)?;
        env.latency.transfer_ms += ms(t.elapsed());
        let t = Instant::now();
        map.update(&set, &env.pose)?;
        let snapshot = map.snapshot();
        let (mut fp, mut fp_err) = (None, None);
        if self.cfg.manhattan.enabled {
            let walls: Vec<_> = snapshot.confirmed_walls().map(|w| w.segment()).collect();
            if !walls.is_empty() {
                match build_floorplan(&walls, &snapshot.columns, &self.cfg.manhattan) {
                    Ok(f) => fp = Some(f),
                    Err(Error::NoDominantFrame(msg)) => {
                        debug!("epoch {}: no floorplan: {msg}", snapshot.epoch);
                        fp_err = Some(msg);
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        env.latency.global_fusion_ms = ms(t.elapsed());
        Ok((snapshot, fp, fp_err))
    }

    fn finish(&self, env: &mut Envelope) {
        env.latency.end_to_end_ms = ms(env.acquired.elapsed());
    }
}

fn guarded<T>(stage: &'static str, ts: f64, f: impl FnOnce() -> Result<T>) -> Result<T> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(_) => Err(Error::StagePanic { stage, timestamp: ts }),
    }
}

fn new_envelope(index: usize, input: &FrameInput) -> Envelope {
    Envelope {
        index,
        pose: input.pose,
        acquired: Instant::now(),
        latency: LatencySample {
            frame_ts: input.frame.timestamp(),
            ..Default::default()
        },
    }
}

/// Runs every frame through the four stages on the calling thread. Never
/// drops frames.
pub fn run_sequential<I>(source: I, cfg: &PipelineConfig) -> Result<PipelineRun>
where
    I: IntoIterator<Item = FrameInput>,
{
    run_sequential_with(source, cfg, Hooks::default())
}

pub fn run_sequential_with<I>(source: I, cfg: &PipelineConfig, hooks: Hooks) -> Result<PipelineRun>
where
    I: IntoIterator<Item = FrameInput>,
{
    cfg.validate()?;
    let cfg = cfg.seeded();
    let stages = Stages { cfg, hooks };
    let mut map = GlobalMap::new(cfg.global, cfg.fusion)?;
    let mut epochs = Vec::new();
    let mut offered = 0;
    for (index, input) in source.into_iter().enumerate() {
        offered += 1;
        let mut env = new_envelope(index, &input);
        let ts = env.latency.frame_ts;
        let flat = guarded(STAGE_DATA, ts, || stages.preprocess(&mut env, &input))?;
        let det = guarded(STAGE_DETECTOR, ts, || stages.detect(&mut env, &flat, input.obb.as_deref()))?;
        let (local, raw_segments, local_walls) = guarded(STAGE_LOCAL, ts, || stages.local(&mut env, &det))?;
        let (snapshot, floorplan, floorplan_error) =
            guarded(STAGE_GLOBAL, ts, || stages.global(&mut env, &mut map, &local))?;
        stages.finish(&mut env);
        epochs.push(EpochOutput {
            snapshot,
            floorplan,
            floorplan_error,
            latency: env.latency,
            raw_segments,
            local_walls,
        });
    }
    let all = QueueStats {
        delivered: offered,
        dropped: 0,
    };
    Ok(PipelineRun {
        epochs,
        offered,
        sensor_queue: all,
        detection_queue: all,
        local_queue: all,
    })
}

pub fn run_pipeline<I>(source: I, cfg: &PipelineConfig) -> Result<PipelineRun>
where
    I: IntoIterator<Item = FrameInput>,
    I::IntoIter: Send,
{
    run_pipeline_with(source, cfg, Hooks::default())
}

struct Msg<T> {
    env: Envelope,
    sent: Instant,
    body: T,
}

fn receive<T>(q: &StageQueue<Msg<T>>) -> Option<(Envelope, T)> {
    q.pop().map(|mut m| {
        m.env.latency.transfer_ms += ms(m.sent.elapsed());
        (m.env, m.body)
    })
}

/// Staged execution on four threads. The first error from any stage stops
/// the pipeline and is returned.
pub fn run_pipeline_with<I>(source: I, cfg: &PipelineConfig, hooks: Hooks) -> Result<PipelineRun>
where
    I: IntoIterator<Item = FrameInput>,
    I::IntoIter: Send,
{
    cfg.validate()?;
    let cfg = cfg.seeded();
    let stages = Arc::new(Stages { cfg, hooks });
    let q_sensor: StageQueue<Msg<(Flattened, Option<Vec<ObbRecord>>)>> = StageQueue::new(cfg.queues.sensor);
    let q_det: StageQueue<Msg<(Vec<u8>, ())>> = StageQueue::new(cfg.queues.fusion);
    let q_local: StageQueue<Msg<(Vec<u8>, usize, usize)>> = StageQueue::new(cfg.queues.fusion);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let mut map = GlobalMap::new(cfg.global, cfg.fusion)?;
    let source = source.into_iter();

    let abort_all = || {
        q_sensor.abort();
        q_det.abort();
        q_local.abort();
    };
    let fail = |e: Error| {
        let mut f = failure.lock().unwrap();
        if f.is_none() {
            warn!("pipeline stopped: {e}");
            *f = Some(e);
        }
        drop(f);
        abort_all();
    };

    let (offered, epochs) = thread::scope(|s| {
        let producer = s.spawn(|| {
            let period = (cfg.queues.source_rate_hz > 0.0).then(|| Duration::from_secs_f64(1.0 / cfg.queues.source_rate_hz));
            let start = Instant::now();
            let mut offered = 0u64;
            for (index, input) in source.enumerate() {
                if let Some(p) = period {
                    let due = start + p * index as u32;
                    if let Some(wait) = due.checked_duration_since(Instant::now()) {
                        thread::sleep(wait);
                    }
                }
                offered += 1;
                let mut env = new_envelope(index, &input);
                let ts = env.latency.frame_ts;
                match guarded(STAGE_DATA, ts, || stages.preprocess(&mut env, &input)) {
                    Ok(flat) => {
                        let msg = Msg {
                            env,
                            sent: Instant::now(),
                            body: (flat, input.obb),
                        };
                        if !q_sensor.push(msg) {
                            break;
                        }
                    }
                    Err(e) => {
                        fail(e);
                        break;
                    }
                }
            }
            q_sensor.close();
            offered
        });

        s.spawn(|| {
            while let Some((mut env, (flat, obb))) = receive(&q_sensor) {
                let ts = env.latency.frame_ts;
                match guarded(STAGE_DETECTOR, ts, || stages.detect(&mut env, &flat, obb.as_deref())) {
                    Ok(bytes) => {
                        if !q_det.push(Msg {
                            env,
                            sent: Instant::now(),
                            body: (bytes, ()),
                        }) {
                            break;
                        }
                    }
                    Err(e) => {
                        fail(e);
                        break;
                    }
                }
            }
            q_det.close();
        });

        s.spawn(|| {
            while let Some((mut env, (bytes, ()))) = receive(&q_det) {
                let ts = env.latency.frame_ts;
                match guarded(STAGE_LOCAL, ts, || stages.local(&mut env, &bytes)) {
                    Ok(body) => {
                        if !q_local.push(Msg {
                            env,
                            sent: Instant::now(),
                            body,
                        }) {
                            break;
                        }
                    }
                    Err(e) => {
                        fail(e);
                        break;
                    }
                }
            }
            q_local.close();
        });

        let mut epochs = Vec::new();
        while let Some((mut env, (bytes, raw_segments, local_walls))) = receive(&q_local) {
            let ts = env.latency.frame_ts;
            match guarded(STAGE_GLOBAL, ts, || stages.global(&mut env, &mut map, &bytes)) {
                Ok((snapshot, floorplan, floorplan_error)) => {
                    stages.finish(&mut env);
                    epochs.push(EpochOutput {
                        snapshot,
                        floorplan,
                        floorplan_error,
                        latency: env.latency,
                        raw_segments,
                        local_walls,
                    });
                }
                Err(e) => {
                    fail(e);
                    break;
                }
            }
        }
        // Unblock upstream stages if the consumer stopped early.
        abort_all();
        (producer.join().unwrap_or(0), epochs)
    });

    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(PipelineRun {
        epochs,
        offered,
        sensor_queue: q_sensor.stats(),
        detection_queue: q_det.stats(),
        local_queue: q_local.stats(),
    })
}
