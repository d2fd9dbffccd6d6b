//! Groups raw subframes into firing sequences.
//!
//! With [`Realign::TrustTags`] (the default) each subframe's step tag is
//! authoritative. A sequence that misses a step is dropped whole and the
//! demuxer waits for the next step-0 subframe. [`Realign::DarkestSubframe`]
//! ignores tags and takes the darkest subframe of each group of five as the
//! ambient step.

use log::{debug, warn};

use super::frame::{CompositeFrame, RawSubframe};
use crate::scenekit::SUBFRAME_SPACING_US;
use crate::STEPS_PER_SEQUENCE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Realign {
    #[default]
    TrustTags,
    DarkestSubframe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemuxConfig {
    pub subframe_spacing_us: u64,
    /// Tolerated excess of a sequence's span over its nominal 12.5 ms.
    pub jitter_budget_us: u64,
    pub realign: Realign,
}

impl Default for DemuxConfig {
    fn default() -> Self {
        Self {
            subframe_spacing_us: SUBFRAME_SPACING_US,
            jitter_budget_us: 500,
            realign: Realign::TrustTags,
        }
    }
}

impl DemuxConfig {
    pub fn sequence_period_us(&self) -> u64 {
        self.subframe_spacing_us * STEPS_PER_SEQUENCE as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DropEvent {
    /// A started sequence was abandoned; `missing_step` is the step that
    /// did not arrive when expected.
    Sequence {
        base_timestamp_us: u64,
        missing_step: u8,
    },
    /// A complete sequence spanned longer than the budget.
    Span {
        base_timestamp_us: u64,
        span_us: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DropReport {
    pub composites: usize,
    /// Sequences dropped mid-stream.
    pub dropped_sequences: usize,
    /// Subframes before the first step-0 subframe.
    pub leading_discarded: usize,
    /// Subframes skipped while waiting to realign after a drop.
    pub skipped_subframes: usize,
    /// Subframes of an incomplete sequence at the end of the stream.
    pub trailing_incomplete: usize,
    pub events: Vec<DropEvent>,
}

/// Streaming, single-consumer demultiplexer (tag-trusting).
#[derive(Debug)]
pub struct Demuxer {
    config: DemuxConfig,
    pending: Vec<RawSubframe>,
    /// Timestamp of step 0 of the first sequence seen.
    origin_us: Option<u64>,
    seen_step0: bool,
    /// Discarding the remainder of an abandoned sequence.
    skipping: bool,
    report: DropReport,
}

impl Demuxer {
    pub fn new(config: DemuxConfig) -> Self {
        Self {
            config,
            pending: Vec::new(),
            origin_us: None,
            seen_step0: false,
            skipping: false,
            report: DropReport::default(),
        }
    }

    fn frame_index(&self, base_ts: u64) -> u64 {
        let origin = self.origin_us.unwrap_or(base_ts);
        let period = self.config.sequence_period_us();
        (base_ts.saturating_sub(origin) + period / 2) / period
    }

    fn abandon(&mut self, missing_step: u8) {
        let base = self.pending[0].timestamp_us;
        warn!("dropping firing sequence at {base} us: step {missing_step} missing");
        self.report.dropped_sequences += 1;
        self.report.events.push(DropEvent::Sequence {
            base_timestamp_us: base,
            missing_step,
        });
        self.pending.clear();
        self.skipping = true;
    }

    pub fn push(&mut self, frame: RawSubframe) -> Option<CompositeFrame> {
        if self.origin_us.is_none() {
            self.origin_us = Some(
                frame
                    .timestamp_us
                    .saturating_sub(frame.sequence_step as u64 * self.config.subframe_spacing_us),
            );
        }
        let step = frame.sequence_step;
        if step == 0 {
            if !self.pending.is_empty() {
                let expected = self.pending.len() as u8;
                self.abandon(expected);
            }
            self.seen_step0 = true;
            self.skipping = false;
            self.pending.push(frame);
            return None;
        }
        if self.pending.is_empty() {
            if self.seen_step0 {
                if !self.skipping {
                    // Ambient subframe of this sequence never arrived.
                    let base = frame
                        .timestamp_us
                        .saturating_sub(step as u64 * self.config.subframe_spacing_us);
                    warn!("dropping firing sequence at {base} us: step 0 missing");
                    self.report.dropped_sequences += 1;
                    self.report.events.push(DropEvent::Sequence {
                        base_timestamp_us: base,
                        missing_step: 0,
                    });
                    self.skipping = true;
                }
                self.report.skipped_subframes += 1;
            } else {
                self.report.leading_discarded += 1;
            }
            debug!(
                "discarding step {step} at {} us while unaligned",
                frame.timestamp_us
            );
            return None;
        }
        let expected = self.pending.len() as u8;
        if step != expected {
            self.abandon(expected);
            self.report.skipped_subframes += 1;
            return None;
        }
        self.pending.push(frame);
        if self.pending.len() < STEPS_PER_SEQUENCE {
            return None;
        }
        let subframes = std::mem::take(&mut self.pending);
        let base = subframes[0].timestamp_us;
        let span =
            subframes[STEPS_PER_SEQUENCE - 1].timestamp_us - base + self.config.subframe_spacing_us;
        if span > self.config.sequence_period_us() + self.config.jitter_budget_us {
            warn!("dropping firing sequence at {base} us: span {span} us over budget");
            self.report.dropped_sequences += 1;
            self.report.events.push(DropEvent::Span {
                base_timestamp_us: base,
                span_us: span,
            });
            return None;
        }
        let index = self.frame_index(base);
        match CompositeFrame::from_subframes(index, subframes) {
            Ok(c) => {
                self.report.composites += 1;
                Some(c)
            }
            Err(e) => {
                warn!("dropping malformed sequence at {base} us: {e}");
                self.report.dropped_sequences += 1;
                self.report.events.push(DropEvent::Sequence {
                    base_timestamp_us: base,
                    missing_step: 0,
                });
                None
            }
        }
    }

    pub fn finish(mut self) -> DropReport {
        self.report.trailing_incomplete = self.pending.len();
        self.report
    }
}

fn mean_level(f: &RawSubframe) -> f64 {
    let px = f.image.pixels();
    px.iter().map(|&v| v as u64).sum::<u64>() as f64 / px.len().max(1) as f64
}

/// Re-tags subframes so that each group of five starts at its darkest frame.
fn retag_by_brightness(raw: Vec<RawSubframe>) -> Vec<RawSubframe> {
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i + STEPS_PER_SEQUENCE <= raw.len() {
        let window = &raw[i..i + STEPS_PER_SEQUENCE];
        let darkest = (0..STEPS_PER_SEQUENCE)
            .min_by(|&a, &b| mean_level(&window[a]).total_cmp(&mean_level(&window[b])))
            .unwrap();
        if darkest != 0 {
            // Skip ahead so the next window starts on the ambient frame.
            i += darkest;
            continue;
        }
        for (step, f) in window.iter().enumerate() {
            out.push(RawSubframe {
                sequence_step: step as u8,
                ..f.clone()
            });
        }
        i += STEPS_PER_SEQUENCE;
    }
    out
}

/// Demultiplexes a whole stream.
pub fn demux(
    raw: impl IntoIterator<Item = RawSubframe>,
    config: DemuxConfig,
) -> (Vec<CompositeFrame>, DropReport) {
    let raw: Box<dyn Iterator<Item = RawSubframe>> = match config.realign {
        Realign::TrustTags => Box::new(raw.into_iter()),
        Realign::DarkestSubframe => {
            Box::new(retag_by_brightness(raw.into_iter().collect()).into_iter())
        }
    };
    let mut d = Demuxer::new(config);
    let composites = raw.filter_map(|f| d.push(f)).collect();
    (composites, d.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    fn stream(sequences: usize) -> Vec<RawSubframe> {
        (0..sequences * 5)
            .map(|i| RawSubframe {
                timestamp_us: i as u64 * 2500,
                sequence_step: (i % 5) as u8,
                image: Image::filled(2, 2, if i % 5 == 0 { 3 } else { 50 + (i % 5) as u8 }),
            })
            .collect()
    }

    #[test]
    fn four_hundred_fps_becomes_eighty() {
        let (c, r) = demux(stream(80), DemuxConfig::default());
        assert_eq!(c.len(), 80);
        assert_eq!(r.dropped_sequences, 0);
        assert!(c
            .windows(2)
            .all(|w| w[1].base_timestamp_us() > w[0].base_timestamp_us()));
        assert_eq!(c[79].frame_index(), 79);
    }

    #[test]
    fn one_missing_subframe_drops_one_sequence() {
        let mut raw = stream(10);
        raw.remove(4 * 5 + 2); // LED 2 of sequence 4
        let (c, r) = demux(raw, DemuxConfig::default());
        assert_eq!(c.len(), 9);
        assert_eq!(r.dropped_sequences, 1);
        assert_eq!(
            r.events,
            vec![DropEvent::Sequence {
                base_timestamp_us: 50_000,
                missing_step: 2
            }]
        );
        let idx: Vec<u64> = c.iter().map(|f| f.frame_index()).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn missing_ambient_drops_the_sequence() {
        let mut raw = stream(4);
        raw.remove(10);
        let (c, r) = demux(raw, DemuxConfig::default());
        assert_eq!(c.len(), 3);
        assert_eq!(r.skipped_subframes, 4);
        assert_eq!(r.dropped_sequences, 1);
        assert_eq!(
            r.events,
            vec![DropEvent::Sequence {
                base_timestamp_us: 25_000,
                missing_step: 0
            }]
        );
    }

    #[test]
    fn leading_partial_sequence_is_discarded() {
        let raw: Vec<_> = stream(4).into_iter().skip(3).collect();
        let (c, r) = demux(raw, DemuxConfig::default());
        assert_eq!(c.len(), 3);
        assert_eq!(r.leading_discarded, 2);
        assert_eq!(r.dropped_sequences, 0);
        assert_eq!(c[0].base_timestamp_us(), 12_500);
        assert_eq!(c[0].frame_index(), 1);
    }

    #[test]
    fn overlong_span_is_dropped() {
        let mut raw = stream(2);
        for f in &mut raw[5..] {
            f.timestamp_us += 1000 * (f.sequence_step as u64);
        }
        let (c, r) = demux(raw, DemuxConfig::default());
        assert_eq!(c.len(), 1);
        assert!(matches!(r.events[0], DropEvent::Span { .. }));
    }

    #[test]
    fn darkest_subframe_realignment_ignores_tags() {
        let mut raw: Vec<_> = stream(6).into_iter().skip(2).collect();
        for f in &mut raw {
            f.sequence_step = 0;
        }
        let cfg = DemuxConfig {
            realign: Realign::DarkestSubframe,
            ..Default::default()
        };
        let (c, r) = demux(raw, cfg);
        assert_eq!(c.len(), 5);
        assert_eq!(r.dropped_sequences, 0);
        assert_eq!(c[0].ambient().image.get(0, 0), 3);
    }
}
