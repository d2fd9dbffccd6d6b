use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::STEPS_PER_SEQUENCE;

/// One camera exposure tagged with its firing-sequence step
/// (0 = ambient, k = LED k).
#[derive(Debug, Clone, PartialEq)]
pub struct RawSubframe {
    pub timestamp_us: u64,
    pub sequence_step: u8,
    pub image: GrayImage,
}

/// The five subframes of one firing sequence, treated as simultaneous.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeFrame {
    frame_index: u64,
    subframes: Vec<RawSubframe>,
}

impl CompositeFrame {
    /// Requires exactly steps 0..=4 in order, sharing one image size.
    pub fn from_subframes(frame_index: u64, subframes: Vec<RawSubframe>) -> Result<Self> {
        if subframes.len() != STEPS_PER_SEQUENCE {
            return Err(Error::format(format!(
                "composite needs {STEPS_PER_SEQUENCE} subframes, got {}",
                subframes.len()
            )));
        }
        for (i, s) in subframes.iter().enumerate() {
            if s.sequence_step as usize != i {
                return Err(Error::format(format!(
                    "subframe {i} carries step {}",
                    s.sequence_step
                )));
            }
            if !s.image.same_shape(&subframes[0].image) {
                return Err(Error::format("subframe sizes differ"));
            }
        }
        if subframes
            .windows(2)
            .any(|w| w[1].timestamp_us <= w[0].timestamp_us)
        {
            return Err(Error::format("subframe timestamps not increasing"));
        }
        Ok(Self {
            frame_index,
            subframes,
        })
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    pub fn base_timestamp_us(&self) -> u64 {
        self.subframes[0].timestamp_us
    }

    pub fn subframes(&self) -> &[RawSubframe] {
        &self.subframes
    }

    pub fn into_subframes(self) -> Vec<RawSubframe> {
        self.subframes
    }

    pub fn ambient(&self) -> &RawSubframe {
        &self.subframes[0]
    }

    /// Subframe for LED `index` (1..=4).
    pub fn led(&self, index: u8) -> &RawSubframe {
        assert!(
            (1..STEPS_PER_SEQUENCE as u8).contains(&index),
            "LED index {index}"
        );
        &self.subframes[index as usize]
    }

    pub fn width(&self) -> usize {
        self.subframes[0].image.width()
    }

    pub fn height(&self) -> usize {
        self.subframes[0].image.height()
    }
}
