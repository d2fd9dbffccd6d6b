//! Two-layer perceptron over downsampled patches with a distance-in-logit head.
//!
//! Model file, little-endian:
//!
//! | field      | type      | notes                                |
//! |------------|-----------|--------------------------------------|
//! | magic      | `[u8; 4]` | `"ECLM"`                             |
//! | version    | `u16`     | 1                                    |
//! | channels   | `u16`     | patch channels                       |
//! | grid       | `u16`     | feature grid side (16)               |
//! | hidden     | `u16`     | hidden width                         |
//! | input      | `u32`     | `channels·grid² + 5`                 |
//! | LED mask   | `u8`      | bit `k−1` set for LED k              |
//! | mode       | `u8`      | 0 multi-channel, 1 single-channel    |
//! | reserved   | `u16`     | 0                                    |
//!
//! followed by `f32` values: `w1` (hidden × input, row-major), `b1`
//! (hidden), `w2` (hidden), `b2`, `κ`, `τ`.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::patches::{FingerPatch, PATCH_SIZE};
use crate::suppress::{ChannelMode, LedSet};

pub const MODEL_MAGIC: [u8; 4] = *b"ECLM";
pub const MODEL_VERSION: u16 = 1;
/// Per-channel feature grid side.
pub const FEATURE_GRID: usize = 16;
/// Length of the finger-id one-hot suffix.
pub const FINGER_IDS: usize = 5;
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_KAPPA_MM: f64 = 10.0;
pub const DEFAULT_TAU: f64 = 0.5;

/// Feature length for `channels` patch channels.
pub fn input_dim(channels: usize) -> usize {
    channels * FEATURE_GRID * FEATURE_GRID + FINGER_IDS
}

/// Widths of the feature bins along each patch axis, border to border.
/// Bins are 2 px wide at the fingertip and grow towards the patch edge, so
/// the contact region keeps fine detail while distant shadows still land in
/// some bin.
pub const FEATURE_BINS: [usize; FEATURE_GRID] = [7, 6, 5, 4, 3, 3, 2, 2, 2, 2, 3, 3, 4, 5, 6, 7];

const fn bin_starts() -> [usize; FEATURE_GRID + 1] {
    let mut s = [0; FEATURE_GRID + 1];
    let mut i = 0;
    while i < FEATURE_GRID {
        s[i + 1] = s[i] + FEATURE_BINS[i];
        i += 1;
    }
    assert!(s[FEATURE_GRID] == PATCH_SIZE);
    s
}

const BIN_STARTS: [usize; FEATURE_GRID + 1] = bin_starts();

/// Bin-mean downsample of one 64×64 channel to the 16×16 foveated grid
/// ([`FEATURE_BINS`]), appended to `out` row-major.
pub fn downsample_channel(channel: &[f32], out: &mut Vec<f64>) {
    // Column sums per bin, one patch row at a time.
    let mut rows = [[0.0f64; FEATURE_GRID]; PATCH_SIZE];
    for (y, sums) in rows.iter_mut().enumerate() {
        let row = &channel[y * PATCH_SIZE..(y + 1) * PATCH_SIZE];
        for (gx, s) in sums.iter_mut().enumerate() {
            *s = row[BIN_STARTS[gx]..BIN_STARTS[gx + 1]]
                .iter()
                .map(|&v| v as f64)
                .sum();
        }
    }
    for gy in 0..FEATURE_GRID {
        let ys = BIN_STARTS[gy]..BIN_STARTS[gy + 1];
        for gx in 0..FEATURE_GRID {
            let s: f64 = rows[ys.clone()].iter().map(|r| r[gx]).sum();
            out.push(s / (FEATURE_BINS[gy] * FEATURE_BINS[gx]) as f64);
        }
    }
}

/// Appends the one-hot encoding of `finger_id` (1..=5).
pub fn push_finger_one_hot(finger_id: u8, out: &mut Vec<f64>) {
    out.extend((1..=FINGER_IDS as u8).map(|i| if i == finger_id { 1.0 } else { 0.0 }));
}

/// Model input for a patch.
pub fn features(patch: &FingerPatch) -> Vec<f64> {
    let mut out = Vec::with_capacity(input_dim(patch.channels));
    for c in 0..patch.channels {
        downsample_channel(patch.channel(c), &mut out);
    }
    push_finger_one_hot(patch.finger_id, &mut out);
    out
}

/// tanh-approximated GELU and its derivative.
pub(crate) fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * A * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub leds: LedSet,
    pub mode: ChannelMode,
    pub channels: usize,
    /// Hidden layer, `hidden × input`.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
    /// `ln κ`; κ is the hover distance in mm per unit of negative logit.
    pub log_kappa: f64,
    /// Touch threshold on `sigmoid(logit)`.
    pub tau: f64,
}

/// Output of [`infer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inference {
    pub logit: f64,
    pub probability: f64,
    pub touch: bool,
    pub hover_mm: f64,
}

impl Model {
    /// Random initialization: `w1 ~ N(0, 1/input)`, `w2 ~ N(0, 1/hidden)`, zero biases.
    pub fn init<R: Rng + ?Sized>(
        leds: LedSet,
        mode: ChannelMode,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let channels = mode.channels(leds);
        Self::init_with_input(leds, mode, channels, input_dim(channels), hidden, rng)
    }

    pub(crate) fn init_with_input<R: Rng + ?Sized>(
        leds: LedSet,
        mode: ChannelMode,
        channels: usize,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let n1 = Normal::new(0.0, (1.0 / input as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).unwrap();
        let w1 = Array2::from_shape_fn((hidden, input), |_| n1.sample(rng));
        let w2 = Array1::from_shape_fn(hidden, |_| n2.sample(rng));
        Self {
            leds,
            mode,
            channels,
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: 0.0,
            log_kappa: DEFAULT_KAPPA_MM.ln(),
            tau: DEFAULT_TAU,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn kappa(&self) -> f64 {
        self.log_kappa.exp()
    }

    /// Logit for one feature vector.
    pub fn logit(&self, x: ArrayView1<f64>) -> f64 {
        let pre = self.w1.dot(&x) + &self.b1;
        pre.iter()
            .zip(self.w2.iter())
            .map(|(&a, &w)| gelu(a).0 * w)
            .sum::<f64>()
            + self.b2
    }

    /// Logits for a batch of feature rows.
    pub fn logits(&self, x: &Array2<f64>) -> Array1<f64> {
        let mut pre = x.dot(&self.w1.t());
        pre += &self.b1.view().insert_axis(Axis(0));
        pre.mapv_inplace(|a| gelu(a).0);
        pre.dot(&self.w2) + self.b2
    }

    /// Distance-in-logit head: `hover = max(0, −κ·logit)`.
    pub fn head(&self, logit: f64) -> Inference {
        let probability = sigmoid(logit);
        Inference {
            logit,
            probability,
            touch: probability > self.tau,
            hover_mm: (-self.kappa() * logit).max(0.0),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let narrow = |v: usize, what: &str| {
            u16::try_from(v).map_err(|_| Error::format(format!("{what} too large")))
        };
        w.write_all(&MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&narrow(self.channels, "channels")?.to_le_bytes())?;
        w.write_all(&(FEATURE_GRID as u16).to_le_bytes())?;
        w.write_all(&narrow(self.hidden(), "hidden width")?.to_le_bytes())?;
        w.write_all(&(self.input_dim() as u32).to_le_bytes())?;
        let mode = match self.mode {
            ChannelMode::MultiChannel => 0u8,
            ChannelMode::SingleChannel => 1,
        };
        w.write_all(&[self.leds.mask(), mode, 0, 0])?;
        let mut buf = Vec::with_capacity(4 * (self.w1.len() + 2 * self.hidden() + 3));
        let mut put = |v: f64| buf.extend_from_slice(&(v as f32).to_le_bytes());
        self.w1.iter().for_each(|&v| put(v));
        self.b1.iter().for_each(|&v| put(v));
        self.w2.iter().for_each(|&v| put(v));
        put(self.b2);
        put(self.kappa());
        put(self.tau);
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 20];
        r.read_exact(&mut head)
            .map_err(|_| Error::format("model header truncated"))?;
        let magic: [u8; 4] = head[0..4].try_into().unwrap();
        if magic != MODEL_MAGIC {
            return Err(Error::BadMagic {
                expected: MODEL_MAGIC,
                found: magic,
            });
        }
        let u16_at = |i: usize| u16::from_le_bytes([head[i], head[i + 1]]) as usize;
        let version = u16_at(4) as u16;
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                expected: MODEL_VERSION,
                found: version,
            });
        }
        let (channels, grid, hidden) = (u16_at(6), u16_at(8), u16_at(10));
        let input = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
        if grid != FEATURE_GRID || input != input_dim(channels) || hidden == 0 {
            return Err(Error::ShapeMismatch(format!(
                "model header: channels {channels}, grid {grid}, hidden {hidden}, input {input}"
            )));
        }
        let leds = LedSet::from_mask(head[16]).map_err(|e| Error::format(e.to_string()))?;
        let mode = match head[17] {
            0 => ChannelMode::MultiChannel,
            1 => ChannelMode::SingleChannel,
            m => return Err(Error::format(format!("unknown channel mode {m}"))),
        };
        if mode.channels(leds) != channels {
            return Err(Error::ShapeMismatch(format!(
                "{channels} channels inconsistent with LED set {leds}"
            )));
        }
        let count = hidden * input + 2 * hidden + 3;
        let mut raw = vec![0u8; 4 * count];
        r.read_exact(&mut raw)
            .map_err(|_| Error::format("model weights truncated"))?;
        let vals: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let (w1, rest) = vals.split_at(hidden * input);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, rest) = rest.split_at(hidden);
        let (b2, kappa, tau) = (rest[0], rest[1], rest[2]);
        if !(kappa > 0.0) || !(tau > 0.0 && tau < 1.0) {
            return Err(Error::format(format!(
                "invalid head constants κ={kappa}, τ={tau}"
            )));
        }
        Ok(Self {
            leds,
            mode,
            channels,
            w1: Array2::from_shape_vec((hidden, input), w1.to_vec()).unwrap(),
            b1: Array1::from(b1.to_vec()),
            w2: Array1::from(w2.to_vec()),
            b2,
            log_kappa: kappa.ln(),
            tau,
        })
    }
}

/// Runs the model on one patch.
pub fn infer(model: &Model, patch: &FingerPatch) -> Result<Inference> {
    if patch.channels != model.channels {
        return Err(Error::ShapeMismatch(format!(
            "patch has {} channels, model expects {}",
            patch.channels, model.channels
        )));
    }
    if !(1..=FINGER_IDS as u8).contains(&patch.finger_id) {
        return Err(Error::InvalidArgument(format!(
            "finger id {}",
            patch.finger_id
        )));
    }
    let x = Array1::from(features(patch));
    Ok(model.head(model.logit(x.view())))
}
