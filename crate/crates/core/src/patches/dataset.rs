//! Labeled patch datasets.
//!
//! Binary layout, little-endian:
//!
//! | field        | type       | notes                               |
//! |--------------|------------|-------------------------------------|
//! | magic        | `[u8; 4]`  | `"ECLD"`                            |
//! | version      | `u16`      | 1                                   |
//! | patch size   | `u16`      | 64                                  |
//! | channels     | `u8`       | 1..=4                               |
//! | LED mask     | `u8`       | bit `k−1` set for LED k             |
//! | mode         | `u8`       | 0 multi-channel, 1 single-channel   |
//! | reserved     | `u8`       | 0                                   |
//! | count        | `u32`      | number of records                   |
//!
//! Each record: `scene_id u32`, `frame_index u64`, `finger_id u8`,
//! `touch u8`, `hover_mm f32`, then `channels × 64 × 64` pixels as `u8`
//! (`round(255·v)`, channel-major, row-major).

use std::io::{Read, Write};

use super::{FingerPatch, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::suppress::{ChannelMode, LedSet};

pub const DATASET_MAGIC: [u8; 4] = *b"ECLD";
pub const DATASET_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub leds: LedSet,
    pub mode: ChannelMode,
}

impl DatasetHeader {
    pub fn channels(&self) -> usize {
        self.mode.channels(self.leds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Samples sharing a scene id are kept on the same side of a split.
    pub scene_id: u32,
    pub patch: FingerPatch,
    pub hover_mm: f32,
    pub touch: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(leds: LedSet, mode: ChannelMode) -> Self {
        Self {
            header: DatasetHeader { leds, mode },
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.patch.channels != self.header.channels() {
            return Err(Error::ShapeMismatch(format!(
                "patch has {} channels, dataset expects {}",
                sample.patch.channels,
                self.header.channels()
            )));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_dataset(&mut w, self)?;
        w.flush()?;
        Ok(())
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    let count = u32::try_from(ds.samples.len()).map_err(|_| Error::format("too many records"))?;
    w.write_all(&DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(PATCH_SIZE as u16).to_le_bytes())?;
    let mode = match ds.header.mode {
        ChannelMode::MultiChannel => 0u8,
        ChannelMode::SingleChannel => 1,
    };
    w.write_all(&[ds.header.channels() as u8, ds.header.leds.mask(), mode, 0])?;
    w.write_all(&count.to_le_bytes())?;
    let mut buf = Vec::new();
    for s in &ds.samples {
        buf.clear();
        buf.extend_from_slice(&s.scene_id.to_le_bytes());
        buf.extend_from_slice(&s.patch.frame_index.to_le_bytes());
        buf.push(s.patch.finger_id);
        buf.push(s.touch as u8);
        buf.extend_from_slice(&s.hover_mm.to_le_bytes());
        buf.extend(s.patch.pixels.iter().map(|&v| quantize(v)));
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|_| Error::format("dataset header truncated"))?;
    let magic: [u8; 4] = head[0..4].try_into().unwrap();
    if magic != DATASET_MAGIC {
        return Err(Error::BadMagic {
            expected: DATASET_MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let size = u16::from_le_bytes([head[6], head[7]]) as usize;
    if size != PATCH_SIZE {
        return Err(Error::ShapeMismatch(format!(
            "patch size {size}, expected {PATCH_SIZE}"
        )));
    }
    let channels = head[8] as usize;
    let leds = LedSet::from_mask(head[9]).map_err(|e| Error::format(e.to_string()))?;
    let mode = match head[10] {
        0 => ChannelMode::MultiChannel,
        1 => ChannelMode::SingleChannel,
        m => return Err(Error::format(format!("unknown channel mode {m}"))),
    };
    let header = DatasetHeader { leds, mode };
    if header.channels() != channels {
        return Err(Error::format(format!(
            "channel count {channels} inconsistent with LED set {leds}"
        )));
    }
    let count = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let npx = channels * PATCH_SIZE * PATCH_SIZE;
    let mut rec = vec![0u8; 18 + npx];
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        r.read_exact(&mut rec)
            .map_err(|_| Error::Truncated { frame: i })?;
        let finger_id = rec[12];
        if !(1..=5).contains(&finger_id) {
            return Err(Error::format(format!("record {i}: finger id {finger_id}")));
        }
        samples.push(Sample {
            scene_id: u32::from_le_bytes(rec[0..4].try_into().unwrap()),
            patch: FingerPatch {
                finger_id,
                frame_index: u64::from_le_bytes(rec[4..12].try_into().unwrap()),
                channels,
                pixels: rec[18..].iter().map(|&b| b as f32 / 255.0).collect(),
            },
            touch: rec[13] != 0,
            hover_mm: f32::from_le_bytes(rec[14..18].try_into().unwrap()),
        });
    }
    Ok(Dataset { header, samples })
}
