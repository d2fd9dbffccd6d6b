//! Recorded-stream processing: demux → suppress → patch → estimate →
//! smooth → segment, with per-stage timing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{
    features, EventSegmenter, GeometricEstimator, Hysteresis, MeanFilter, Metrics, Model,
    Prediction, TouchEstimate, TouchEvent, SMOOTHING_WINDOW,
};
use crate::patches::{extract_all, keypoints_from_scene, HandKeypoints, DEFAULT_JITTER_PX};
use crate::scenekit::{ground_truth, GroundTruth, Scene};
use crate::streamio::{CompositeFrame, Trajectory};
use crate::suppress::{suppress, ChannelMode, LedSet, SuppressedFrame};

/// Real-time budget per composite (one firing sequence), ms.
pub const FRAME_BUDGET_MS: f64 = 12.5;
/// Per-patch inference time of the reference hardware, ms.
pub const REFERENCE_INFERENCE_MS: f64 = 0.47;

pub enum Estimator {
    Learned(Model),
    Geometric(GeometricEstimator),
}

impl Estimator {
    fn describe(&self) -> &'static str {
        match self {
            Estimator::Learned(_) => "learned",
            Estimator::Geometric(_) => "geometric",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// LED set and channel rule for the geometric estimator; a learned model
    /// carries its own.
    pub leds: LedSet,
    pub mode: ChannelMode,
    pub window: usize,
    pub hysteresis: Hysteresis,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            leds: LedSet::new(&[3, 4]).expect("valid set"),
            mode: ChannelMode::MultiChannel,
            window: SMOOTHING_WINDOW,
            hysteresis: Hysteresis::default(),
        }
    }
}

/// Wall-clock spent in each stage for one composite.
#[derive(Debug, Clone, Copy, Default)]
struct FrameTiming {
    suppress: Duration,
    patch: Duration,
    infer: Duration,
    smooth: Duration,
    patches: usize,
}

impl FrameTiming {
    fn total(&self) -> Duration {
        self.suppress + self.patch + self.infer + self.smooth
    }
}

struct Track {
    filter: MeanFilter,
    segmenter: EventSegmenter,
}

pub struct Pipeline {
    estimator: Estimator,
    leds: LedSet,
    mode: ChannelMode,
    window: usize,
    hysteresis: Hysteresis,
    tracks: BTreeMap<u8, Track>,
    estimates: Vec<TouchEstimate>,
    events: Vec<TouchEvent>,
    predictions: Vec<Prediction>,
    timings: Vec<FrameTiming>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub composites: usize,
    pub estimates: Vec<TouchEstimate>,
    /// Ordered by down frame, then finger.
    pub events: Vec<TouchEvent>,
    /// Frame-level metrics of the raw (unsmoothed) decisions, when ground
    /// truth was supplied.
    pub metrics: Option<Metrics>,
    pub timing: TimingReport,
}

impl Pipeline {
    pub fn new(estimator: Estimator, config: PipelineConfig) -> Result<Self> {
        let (leds, mode) = match &estimator {
            Estimator::Learned(m) => (m.leds, m.mode),
            Estimator::Geometric(_) => {
                if config.mode != ChannelMode::MultiChannel {
                    return Err(Error::InvalidArgument(
                        "the geometric estimator needs one channel per LED".into(),
                    ));
                }
                (config.leds, config.mode)
            }
        };
        if config.window == 0 {
            return Err(Error::InvalidArgument(
                "smoothing window must be positive".into(),
            ));
        }
        Ok(Self {
            estimator,
            leds,
            mode,
            window: config.window,
            hysteresis: config.hysteresis,
            tracks: BTreeMap::new(),
            estimates: Vec::new(),
            events: Vec::new(),
            predictions: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn leds(&self) -> LedSet {
        self.leds
    }

    pub fn mode(&self) -> ChannelMode {
        self.mode
    }

    /// Suppression for this pipeline's channel layout.
    pub fn suppress(&self, frame: &CompositeFrame) -> SuppressedFrame {
        suppress(frame, self.leds, self.mode)
    }

    /// Processes one composite. `truth`, when given, feeds the metrics.
    pub fn process(
        &mut self,
        frame: &CompositeFrame,
        keypoints: &HandKeypoints,
        truth: Option<&GroundTruth>,
    ) -> Result<Vec<TouchEstimate>> {
        let mut timing = FrameTiming::default();
        let t = Instant::now();
        let suppressed = self.suppress(frame);
        timing.suppress = t.elapsed();
        self.process_suppressed(&suppressed, keypoints, truth, timing)
    }

    fn process_suppressed(
        &mut self,
        suppressed: &SuppressedFrame,
        keypoints: &HandKeypoints,
        truth: Option<&GroundTruth>,
        mut timing: FrameTiming,
    ) -> Result<Vec<TouchEstimate>> {
        // (finger, logit, raw probability, hover, touch decision)
        let mut raw: Vec<(u8, f64, f64, f64, bool)> = Vec::new();
        match &self.estimator {
            Estimator::Learned(model) => {
                let t = Instant::now();
                let patches = extract_all(suppressed, keypoints);
                timing.patch = t.elapsed();
                timing.patches = patches.len();
                let t = Instant::now();
                for p in &patches {
                    if p.channels != model.channels {
                        return Err(Error::ShapeMismatch(format!(
                            "patch has {} channels, model expects {}",
                            p.channels, model.channels
                        )));
                    }
                    let out = model.head(model.logit(Array1::from(features(p)).view()));
                    raw.push((
                        p.finger_id,
                        out.logit,
                        out.probability,
                        out.hover_mm,
                        out.touch,
                    ));
                }
                timing.infer = t.elapsed();
            }
            Estimator::Geometric(geo) => {
                let t = Instant::now();
                for kp in keypoints.fingers.iter().filter(|f| f.in_view) {
                    timing.patches += 1;
                    if let Some(h) = geo.hover(suppressed, kp) {
                        let logit = geo.logit(h);
                        raw.push((
                            kp.finger_id,
                            logit,
                            crate::estimate::sigmoid(logit),
                            h,
                            logit > 0.0,
                        ));
                    }
                }
                timing.infer = t.elapsed();
            }
        }

        let t = Instant::now();
        let mut out = Vec::with_capacity(raw.len());
        for &(finger_id, logit, p, hover_mm, touch) in &raw {
            let (window, hysteresis) = (self.window, self.hysteresis);
            let track = self.tracks.entry(finger_id).or_insert_with(|| Track {
                filter: MeanFilter::new(window),
                segmenter: EventSegmenter::new(finger_id, hysteresis),
            });
            let probability = track.filter.push(p);
            if let Some(ev) = track.segmenter.push(suppressed.frame_index, probability) {
                self.events.push(ev);
            }
            let est = TouchEstimate {
                frame_index: suppressed.frame_index,
                finger_id,
                logit,
                probability,
                hover_mm,
            };
            out.push(est);
            if let Some(ft) = truth.and_then(|g| g.finger(finger_id)) {
                self.predictions.push(Prediction {
                    finger_id,
                    touch_pred: touch,
                    hover_pred_mm: hover_mm,
                    touch_true: ft.touch,
                    hover_true_mm: ft.hover_mm,
                });
            }
        }
        timing.smooth = t.elapsed();
        self.timings.push(timing);
        self.estimates.extend_from_slice(&out);
        Ok(out)
    }

    pub fn finish(self) -> PipelineOutput {
        let mut events = self.events;
        events.extend(
            self.tracks
                .into_values()
                .filter_map(|t| t.segmenter.finish()),
        );
        events.sort_by_key(|e| (e.down_frame, e.finger_id));
        let metrics = Metrics::from_predictions(&self.predictions).ok();
        PipelineOutput {
            composites: self.timings.len(),
            estimates: self.estimates,
            events,
            metrics,
            timing: TimingReport::from_timings(self.estimator.describe(), &self.timings),
        }
    }
}

/// Stand-in hand tracker: keypoints (with jitter) and labels from the
/// trajectory a stream was synthesized from.
#[derive(Debug, Clone)]
pub struct TrajectoryTracker {
    rig: Scene,
    trajectory: Trajectory,
    pub jitter_px: f64,
    seed: u64,
}

impl TrajectoryTracker {
    pub fn new(rig: Scene, trajectory: Trajectory, jitter_px: f64, seed: u64) -> Result<Self> {
        trajectory.validate(&rig)?;
        Ok(Self {
            rig,
            trajectory,
            jitter_px,
            seed,
        })
    }

    pub fn with_default_jitter(rig: Scene, trajectory: Trajectory, seed: u64) -> Result<Self> {
        Self::new(rig, trajectory, DEFAULT_JITTER_PX, seed)
    }

    pub fn rig(&self) -> &Scene {
        &self.rig
    }

    /// Keypoints and ground truth for composite `frame_index`.
    pub fn observe(&self, frame_index: u64) -> Result<(HandKeypoints, GroundTruth)> {
        let scene = self.trajectory.scene_at(&self.rig, frame_index as usize)?;
        // Separate stream family from the sensor noise of the same frame.
        let mut rng = crate::streamio::frame_rng(self.seed ^ 0x6b65_7970_6f69_6e74, frame_index);
        Ok((
            keypoints_from_scene(&scene, self.jitter_px, &mut rng),
            ground_truth(&scene),
        ))
    }
}

/// Runs a pipeline over demultiplexed composites, with keypoints from `tracker`.
pub fn run(
    pipeline: Pipeline,
    frames: &[CompositeFrame],
    tracker: &TrajectoryTracker,
    mut on_suppressed: impl FnMut(&SuppressedFrame) -> Result<()>,
) -> Result<PipelineOutput> {
    let mut pipeline = pipeline;
    for frame in frames {
        let (kp, truth) = tracker.observe(frame.frame_index())?;
        let mut timing = FrameTiming::default();
        let t = Instant::now();
        let suppressed = pipeline.suppress(frame);
        timing.suppress = t.elapsed();
        on_suppressed(&suppressed)?;
        pipeline.process_suppressed(&suppressed, &kp, Some(&truth), timing)?;
    }
    Ok(pipeline.finish())
}

/// Latency distribution of one stage, ms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl StageStats {
    fn from_ms(mut v: Vec<f64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        let pct = |q: f64| v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
        Self {
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
            p50_ms: pct(0.5),
            p95_ms: pct(0.95),
            p99_ms: pct(0.99),
            max_ms: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingReport {
    pub estimator: String,
    pub composites: usize,
    pub patches: usize,
    pub suppress: StageStats,
    pub patch: StageStats,
    pub infer: StageStats,
    pub smooth: StageStats,
    /// suppress + patch + infer + smooth per composite.
    pub total: StageStats,
    pub inference_per_patch_ms: Option<f64>,
    pub reference_inference_ms: f64,
    /// Composites per second if processed back to back.
    pub throughput_fps: f64,
    pub budget_ms: f64,
    /// Mean and 95th-percentile latency within the budget.
    pub within_budget: bool,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl TimingReport {
    fn from_timings(estimator: &str, t: &[FrameTiming]) -> Self {
        let stage = |f: fn(&FrameTiming) -> Duration| {
            StageStats::from_ms(t.iter().map(|x| ms(f(x))).collect())
        };
        let total = stage(FrameTiming::total);
        let patches: usize = t.iter().map(|x| x.patches).sum();
        let infer_sum: f64 = t.iter().map(|x| ms(x.infer)).sum();
        let total_sum: f64 = t.iter().map(|x| ms(x.total())).sum();
        Self {
            estimator: estimator.to_string(),
            composites: t.len(),
            patches,
            suppress: stage(|x| x.suppress),
            patch: stage(|x| x.patch),
            infer: stage(|x| x.infer),
            smooth: stage(|x| x.smooth),
            total,
            inference_per_patch_ms: (patches > 0).then(|| infer_sum / patches as f64),
            reference_inference_ms: REFERENCE_INFERENCE_MS,
            throughput_fps: if total_sum > 0.0 {
                1e3 * t.len() as f64 / total_sum
            } else {
                0.0
            },
            budget_ms: FRAME_BUDGET_MS,
            within_budget: total.mean_ms <= FRAME_BUDGET_MS && total.p95_ms <= FRAME_BUDGET_MS,
        }
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "estimator         {}", self.estimator);
        let _ = writeln!(s, "composites        {}", self.composites);
        let _ = writeln!(s, "patches           {}", self.patches);
        let _ = writeln!(
            s,
            "stage             mean      p50      p95      p99      max  (ms)"
        );
        for (name, st) in [
            ("suppress", &self.suppress),
            ("patch", &self.patch),
            ("infer", &self.infer),
            ("smooth", &self.smooth),
            ("total", &self.total),
        ] {
            let _ = writeln!(
                s,
                "{name:<14} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
                st.mean_ms, st.p50_ms, st.p95_ms, st.p99_ms, st.max_ms
            );
        }
        match self.inference_per_patch_ms {
            Some(v) => {
                let _ = writeln!(
                    s,
                    "inference/patch   {v:.4} ms (reference {:.2} ms)",
                    self.reference_inference_ms
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    "inference/patch   n/a (reference {:.2} ms)",
                    self.reference_inference_ms
                );
            }
        }
        let _ = writeln!(
            s,
            "throughput        {:.1} composites/s",
            self.throughput_fps
        );
        let _ = writeln!(
            s,
            "budget            {:.1} ms per composite: {}",
            self.budget_ms,
            if self.within_budget { "met" } else { "MISSED" }
        );
        s
    }
}
