//! Windowed smoothing and hysteresis event segmentation.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default smoothing window, frames.
pub const SMOOTHING_WINDOW: usize = 30;

/// Mean of the last `min(len, window)` values.
pub fn smooth(history: &[f64], window: usize) -> Result<f64> {
    if history.is_empty() || window == 0 {
        return Err(Error::InvalidArgument(
            "smoothing needs a non-empty history and window".into(),
        ));
    }
    let tail = &history[history.len().saturating_sub(window)..];
    Ok(offset_mean(tail.iter().copied(), tail.len()))
}

// Mean taken relative to the first value, so a constant series returns itself exactly.
fn offset_mean(values: impl Iterator<Item = f64> + Clone, n: usize) -> f64 {
    let Some(first) = values.clone().next() else {
        return f64::NAN;
    };
    first + values.map(|v| v - first).sum::<f64>() / n as f64
}

/// Streaming form of [`smooth`].
#[derive(Debug, Clone)]
pub struct MeanFilter {
    window: usize,
    values: VecDeque<f64>,
}

impl MeanFilter {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "window must be positive");
        Self {
            window,
            values: VecDeque::with_capacity(window),
        }
    }

    /// Adds a value and returns the current windowed mean.
    pub fn push(&mut self, value: f64) -> f64 {
        if self.values.len() == self.window {
            self.values.pop_front();
        }
        self.values.push_back(value);
        // Summed fresh each time so results match `smooth` bit for bit.
        offset_mean(self.values.iter().copied(), self.values.len())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for MeanFilter {
    fn default() -> Self {
        Self::new(SMOOTHING_WINDOW)
    }
}

/// Debounce thresholds for touch events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hysteresis {
    /// A touch starts when the probability rises above this.
    pub on: f64,
    /// A touch ends when the probability falls below this.
    pub off: f64,
    /// Shorter touches are discarded, frames.
    pub min_frames: u64,
}

impl Default for Hysteresis {
    fn default() -> Self {
        Self {
            on: 0.6,
            off: 0.4,
            min_frames: 3,
        }
    }
}

/// One debounced touch. `up_frame` is the first frame after release, or
/// `None` when the series ended while touching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouchEvent {
    #[serde(rename = "finger")]
    pub finger_id: u8,
    pub down_frame: u64,
    pub up_frame: Option<u64>,
    pub peak_p: f64,
}

/// Streaming hysteresis segmenter for one finger.
#[derive(Debug, Clone)]
pub struct EventSegmenter {
    finger_id: u8,
    hysteresis: Hysteresis,
    active: Option<(u64, f64)>,
    last_frame: Option<u64>,
}

impl EventSegmenter {
    pub fn new(finger_id: u8, hysteresis: Hysteresis) -> Self {
        Self {
            finger_id,
            hysteresis,
            active: None,
            last_frame: None,
        }
    }

    /// Feeds one smoothed probability; returns an event when a touch that
    /// lasted long enough ends on this frame.
    pub fn push(&mut self, frame: u64, p: f64) -> Option<TouchEvent> {
        if let Some(last) = self.last_frame {
            debug_assert!(frame > last, "frames must increase");
        }
        self.last_frame = Some(frame);
        match &mut self.active {
            None => {
                if p > self.hysteresis.on {
                    self.active = Some((frame, p));
                }
                None
            }
            Some((down, peak)) => {
                if p < self.hysteresis.off {
                    let (down, peak) = (*down, *peak);
                    self.active = None;
                    (frame - down >= self.hysteresis.min_frames).then_some(TouchEvent {
                        finger_id: self.finger_id,
                        down_frame: down,
                        up_frame: Some(frame),
                        peak_p: peak,
                    })
                } else {
                    *peak = peak.max(p);
                    None
                }
            }
        }
    }

    /// Closes the series; an ongoing touch of sufficient length is returned open.
    pub fn finish(self) -> Option<TouchEvent> {
        let (down, peak) = self.active?;
        let last = self.last_frame?;
        (last + 1 - down >= self.hysteresis.min_frames).then_some(TouchEvent {
            finger_id: self.finger_id,
            down_frame: down,
            up_frame: None,
            peak_p: peak,
        })
    }
}

/// Segments a series of `(frame, smoothed probability)` for one finger.
pub fn segment_events(
    series: &[(u64, f64)],
    finger_id: u8,
    hysteresis: &Hysteresis,
) -> Vec<TouchEvent> {
    let mut seg = EventSegmenter::new(finger_id, *hysteresis);
    let mut events: Vec<TouchEvent> = series.iter().filter_map(|&(f, p)| seg.push(f, p)).collect();
    events.extend(seg.finish());
    events
}

/// Writes one JSON object per line.
pub fn write_events_jsonl<W: Write>(mut w: W, events: &[TouchEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e).map_err(|e| Error::format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
