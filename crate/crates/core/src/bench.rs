//! Per-stage latency statistics over repeated staged runs.

use serde::{Deserialize, Serialize};

use crate::detect::DetectorKind;
use crate::error::{Error, Result};
use crate::pipeline::{run_pipeline, FrameInput, LatencySample, PipelineConfig, QueueStats};
use crate::render::stacked_bars_svg;

/// The real-time budget of a 10 Hz sensor.
pub const REALTIME_BUDGET_MS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl Stat {
    /// Nearest-rank percentiles. Empty input gives all zeros.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: rank(0.5),
            p95: rank(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub detector: DetectorKind,
    pub repetitions: usize,
    /// Frames processed over all repetitions.
    pub frames: usize,
    pub preprocess_ms: Stat,
    pub detector_ms: Stat,
    pub local_fusion_ms: Stat,
    pub global_fusion_ms: Stat,
    pub transfer_ms: Stat,
    pub end_to_end_ms: Stat,
    /// Sensor-queue counters summed over repetitions.
    pub sensor_queue: QueueStats,
    pub offered: u64,
    /// Resident set size at the end of the run, where the platform exposes it.
    pub rss_kb: Option<u64>,
    pub samples: Vec<LatencySample>,
}

impl LatencyBreakdown {
    pub fn from_samples(detector: DetectorKind, repetitions: usize, samples: Vec<LatencySample>) -> Self {
        let col = |f: fn(&LatencySample) -> f64| Stat::of(&samples.iter().map(f).collect::<Vec<_>>());
        Self {
            detector,
            repetitions,
            frames: samples.len(),
            preprocess_ms: col(|s| s.preprocess_ms),
            detector_ms: col(|s| s.detector_ms),
            local_fusion_ms: col(|s| s.local_fusion_ms),
            global_fusion_ms: col(|s| s.global_fusion_ms),
            transfer_ms: col(|s| s.transfer_ms),
            end_to_end_ms: col(|s| s.end_to_end_ms),
            sensor_queue: QueueStats::default(),
            offered: 0,
            rss_kb: None,
            samples,
        }
    }

    /// Mean time of the four stacked components: detector, local fusion,
    /// global fusion, transfer.
    pub fn stacked_means(&self) -> Vec<f64> {
        vec![
            self.detector_ms.mean,
            self.local_fusion_ms.mean,
            self.global_fusion_ms.mean,
            self.transfer_ms.mean,
        ]
    }
}

pub const STACK_PARTS: [&str; 4] = ["Detector", "Local Fusion", "Global Fusion", "Data Transfer"];

/// Runs the staged pipeline `repetitions` times over `sequence`.
pub fn bench_pipeline(sequence: &[FrameInput], cfg: &PipelineConfig, repetitions: usize) -> Result<LatencyBreakdown> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    let mut samples = Vec::new();
    let mut sensor = QueueStats::default();
    let mut offered = 0;
    for _ in 0..repetitions {
        let run = run_pipeline(sequence.to_vec(), cfg)?;
        offered += run.offered;
        sensor.delivered += run.sensor_queue.delivered;
        sensor.dropped += run.sensor_queue.dropped;
        samples.extend(run.epochs.iter().map(|e| e.latency));
    }
    let mut b = LatencyBreakdown::from_samples(cfg.detector, repetitions, samples);
    b.sensor_queue = sensor;
    b.offered = offered;
    b.rss_kb = resident_kb();
    Ok(b)
}

/// Best effort; reads `VmRSS` from procfs.
pub fn resident_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmRSS:"))
        .and_then(|v| v.split_whitespace().next()?.parse().ok())
}

/// One stacked bar of mean stage times per breakdown, with the real-time
/// budget as a reference line.
pub fn latency_svg(title: &str, runs: &[LatencyBreakdown]) -> String {
    let rows: Vec<(String, Vec<f64>)> = runs
        .iter()
        .map(|b| (b.detector.name().to_string(), b.stacked_means()))
        .collect();
    stacked_bars_svg(title, &STACK_PARTS, &rows, Some(REALTIME_BUDGET_MS), "ms per frame")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        let s = Stat::of(&v);
        assert_eq!((s.p50, s.p95), (10.0, 19.0));
        assert_eq!(s.mean, 10.5);
        assert_eq!(Stat::of(&[3.0]).p95, 3.0);
    }
}
