//! Ambient subtraction and brightness normalization.
//!
//! Each LED subframe `Bk` contains the ambient image `A` plus the LED's own
//! contribution, so `Bk − A` keeps only the shadow cast by that LED.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{unit_to_gray, write_png, Image};
use crate::streamio::CompositeFrame;
use crate::LED_COUNT;

/// Lower and upper percentiles mapped to 0 and 1.
pub const NORMALIZE_PERCENTILES: (f64, f64) = (0.01, 0.99);
/// Relative spread below which an image counts as constant.
pub const DEGENERATE_SPREAD: f32 = 1e-6;

/// Non-empty subset of the headset LEDs, stored as a bitmask (bit `k-1` = LED k).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct LedSet(u8);

impl LedSet {
    pub const ALL: LedSet = LedSet(0b1111);

    pub fn new(indices: &[u8]) -> Result<Self> {
        let mut mask = 0u8;
        for &k in indices {
            if !(1..=LED_COUNT as u8).contains(&k) {
                return Err(Error::InvalidArgument(format!(
                    "LED index {k} outside 1..={LED_COUNT}"
                )));
            }
            mask |= 1 << (k - 1);
        }
        if mask == 0 {
            return Err(Error::InvalidArgument("empty LED set".into()));
        }
        Ok(Self(mask))
    }

    pub fn from_mask(mask: u8) -> Result<Self> {
        if mask == 0 || mask >> LED_COUNT != 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid LED mask {mask:#06b}"
            )));
        }
        Ok(Self(mask))
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn contains(self, k: u8) -> bool {
        (1..=LED_COUNT as u8).contains(&k) && self.0 & (1 << (k - 1)) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Ascending LED indices.
    pub fn iter(self) -> impl Iterator<Item = u8> {
        (1..=LED_COUNT as u8).filter(move |&k| self.contains(k))
    }
}

impl TryFrom<Vec<u8>> for LedSet {
    type Error = Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<LedSet> for Vec<u8> {
    fn from(s: LedSet) -> Self {
        s.iter().collect()
    }
}

impl fmt::Display for LedSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|k| k.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for LedSet {
    type Err = Error;
    /// Parses `"3,4"`-style lists.
    fn from_str(s: &str) -> Result<Self> {
        let idx = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u8>()
                    .map_err(|_| Error::InvalidArgument(format!("bad LED index {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(&idx)
    }
}

/// How an LED set maps to image channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    /// One channel per LED.
    #[default]
    MultiChannel,
    /// The LED subframes are averaged into one channel.
    SingleChannel,
}

impl ChannelMode {
    pub fn channels(self, leds: LedSet) -> usize {
        match self {
            ChannelMode::MultiChannel => leds.len(),
            ChannelMode::SingleChannel => 1,
        }
    }
}

/// Normalized, ambient-free images for one composite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuppressedFrame {
    pub frame_index: u64,
    pub base_timestamp_us: u64,
    pub leds: LedSet,
    pub mode: ChannelMode,
    /// Multi-channel: one image per LED in ascending order. Single-channel: one image.
    pub channels: Vec<Image<f32>>,
}

impl SuppressedFrame {
    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    /// Channel for LED `k` in multi-channel mode.
    pub fn led_channel(&self, k: u8) -> Option<&Image<f32>> {
        if self.mode != ChannelMode::MultiChannel {
            return None;
        }
        self.leds
            .iter()
            .position(|i| i == k)
            .map(|p| &self.channels[p])
    }

    /// Writes each channel as an 8-bit grayscale PNG (`round(255·v)`), named
    /// `frame{index:06}_led{k}.png` or `frame{index:06}_avg{k1k2..}.png`.
    pub fn dump_png(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let names: Vec<String> = match self.mode {
            ChannelMode::MultiChannel => self.leds.iter().map(|k| format!("led{k}")).collect(),
            ChannelMode::SingleChannel => {
                vec![format!(
                    "avg{}",
                    self.leds.iter().map(|k| k.to_string()).collect::<String>()
                )]
            }
        };
        for (name, img) in names.iter().zip(&self.channels) {
            let path = dir.join(format!("frame{:06}_{name}.png", self.frame_index));
            write_png(&path, &unit_to_gray(img))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// `Dk = max(Bk − A, 0)` for each LED in `leds`, ascending.
pub fn subtract_ambient(composite: &CompositeFrame, leds: LedSet) -> Vec<Image<f32>> {
    let ambient = composite.ambient().image.pixels();
    leds.iter()
        .map(|k| {
            let b = composite.led(k).image.pixels();
            let px = b
                .iter()
                .zip(ambient)
                .map(|(&b, &a)| (b as f32 - a as f32).max(0.0))
                .collect();
            Image::from_vec(composite.width(), composite.height(), px).expect("same shape")
        })
        .collect()
}

/// Exact order statistics of non-negative data at the given ranks, found
/// through a coarse histogram followed by selection inside the hit bins.
fn order_stats(values: &[f32], peak: f32, ranks: &[usize]) -> Vec<f32> {
    const BINS: usize = 4096;
    let scale = if peak > 0.0 {
        (BINS as f32 - 1.0) / peak
    } else {
        0.0
    };
    let bin = |v: f32| ((v * scale) as usize).min(BINS - 1);
    let mut counts = vec![0usize; BINS];
    let mut lo = vec![f32::INFINITY; BINS];
    let mut hi = vec![f32::NEG_INFINITY; BINS];
    for &v in values {
        let b = bin(v);
        counts[b] += 1;
        lo[b] = lo[b].min(v);
        hi[b] = hi[b].max(v);
    }
    // For each rank: its bin and the rank within that bin.
    let mut starts = Vec::with_capacity(BINS);
    let mut acc = 0;
    for &c in &counts {
        starts.push(acc);
        acc += c;
    }
    let locate = |r: usize| {
        let b = starts.partition_point(|&s| s <= r) - 1;
        (b, r - starts[b])
    };
    let wanted: Vec<(usize, usize)> = ranks.iter().map(|&r| locate(r)).collect();
    // Bins holding a single distinct value (the common case for integer
    // data) need no selection.
    let mut bins: Vec<usize> = wanted
        .iter()
        .map(|w| w.0)
        .filter(|&b| lo[b] != hi[b])
        .collect();
    bins.sort_unstable();
    bins.dedup();
    let mut members: Vec<Vec<f32>> = bins
        .iter()
        .map(|&b| Vec::with_capacity(counts[b]))
        .collect();
    for &v in values {
        if let Ok(i) = bins.binary_search(&bin(v)) {
            members[i].push(v);
        }
    }
    wanted
        .iter()
        .map(|&(b, k)| match bins.binary_search(&b) {
            Ok(i) => *members[i].select_nth_unstable_by(k, f32::total_cmp).1,
            Err(_) => lo[b],
        })
        .collect()
}

/// Percentiles `lo` and `hi` with linear interpolation between ranks.
fn percentile_pair(values: &[f32], peak: f32, lo: f64, hi: f64) -> (f32, f32) {
    let last = values.len() - 1;
    let split = |q: f64| {
        let r = q * last as f64;
        let k = r.floor() as usize;
        (k, (k + 1).min(last), (r - k as f64) as f32)
    };
    let (a0, a1, fa) = split(lo);
    let (b0, b1, fb) = split(hi);
    let s = order_stats(values, peak, &[a0, a1, b0, b1]);
    (s[0] + fa * (s[1] - s[0]), s[2] + fb * (s[3] - s[2]))
}

/// Percentile stretch: the 1st percentile maps to 0, the 99th to 1, values
/// are clamped to `[0, 1]`. Negative inputs are treated as 0. Images whose
/// percentile spread is at most `1e-6 · max|x|` come back all zeros.
pub fn normalize(image: &Image<f32>) -> Image<f32> {
    let (w, h) = (image.width(), image.height());
    if image.pixels().is_empty() {
        return image.clone();
    }
    let clamped: Vec<f32>;
    let values = if image.pixels().iter().any(|&v| v < 0.0) {
        clamped = image.pixels().iter().map(|&v| v.max(0.0)).collect();
        &clamped[..]
    } else {
        image.pixels()
    };
    let peak = values.iter().copied().fold(0.0f32, f32::max);
    let (lo, hi) = percentile_pair(
        values,
        peak,
        NORMALIZE_PERCENTILES.0,
        NORMALIZE_PERCENTILES.1,
    );
    match Stretch::new(lo, hi, peak) {
        Some(s) => image.map(|&v| s.apply(v.max(0.0))),
        None => Image::new(w, h),
    }
}

/// The affine map from `[lo, hi]` onto `[0, 1]`, clamped.
#[derive(Clone, Copy)]
struct Stretch {
    lo: f32,
    inv: f32,
}

impl Stretch {
    fn new(lo: f32, hi: f32, peak: f32) -> Option<Self> {
        let spread = hi - lo;
        (spread > DEGENERATE_SPREAD * peak).then(|| Self {
            lo,
            inv: 1.0 / spread,
        })
    }

    fn apply(self, v: f32) -> f32 {
        ((v - self.lo) * self.inv).clamp(0.0, 1.0)
    }
}

/// [`normalize`] for images whose pixel `i` is `keys[i] / divisor` with
/// integer keys below `levels`: percentiles come from a count histogram and
/// the mapping from a lookup table. Bit-identical to the generic path.
fn normalize_keys(keys: &[u16], levels: usize, divisor: f32, w: usize, h: usize) -> Image<f32> {
    if keys.is_empty() {
        return Image::new(w, h);
    }
    let value = |k: usize| k as f32 / divisor;
    let mut counts = vec![0usize; levels];
    for &k in keys {
        counts[k as usize] += 1;
    }
    let last = keys.len() - 1;
    // Key at sorted position `r`.
    let mut cum = Vec::with_capacity(levels);
    let mut acc = 0;
    for &c in &counts {
        acc += c;
        cum.push(acc);
    }
    let at = |r: usize| value(cum.partition_point(|&c| c <= r));
    let pct = |q: f64| {
        let r = q * last as f64;
        let k = r.floor() as usize;
        let f = (r - k as f64) as f32;
        let (a, b) = (at(k), at((k + 1).min(last)));
        a + f * (b - a)
    };
    let peak = value(counts.iter().rposition(|&c| c > 0).unwrap_or(0));
    let (lo, hi) = (pct(NORMALIZE_PERCENTILES.0), pct(NORMALIZE_PERCENTILES.1));
    let Some(s) = Stretch::new(lo, hi, peak) else {
        return Image::new(w, h);
    };
    let lut: Vec<f32> = (0..levels).map(|k| s.apply(value(k))).collect();
    let px = keys.iter().map(|&k| lut[k as usize]).collect();
    Image::from_vec(w, h, px).expect("sized")
}

/// `normalize(max(Bk − A, 0))`.
pub fn normalized_difference(composite: &CompositeFrame, k: u8) -> Image<f32> {
    let a = composite.ambient().image.pixels();
    let b = composite.led(k).image.pixels();
    let keys: Vec<u16> = b
        .iter()
        .zip(a)
        .map(|(&b, &a)| b.saturating_sub(a) as u16)
        .collect();
    normalize_keys(&keys, 256, 1.0, composite.width(), composite.height())
}

/// `normalize(combined_difference(composite, leds))`.
pub fn normalized_combination(composite: &CompositeFrame, leds: LedSet) -> Image<f32> {
    let n = leds.len();
    let keys = combined_keys(composite, leds);
    normalize_keys(
        &keys,
        255 * n + 1,
        n as f32,
        composite.width(),
        composite.height(),
    )
}

/// `max(Σ Bk − n·A, 0)` per pixel.
fn combined_keys(composite: &CompositeFrame, leds: LedSet) -> Vec<u16> {
    let n = leds.len() as i32;
    let mut sum: Vec<i32> = composite
        .ambient()
        .image
        .pixels()
        .iter()
        .map(|&a| -n * a as i32)
        .collect();
    for k in leds.iter() {
        for (s, &b) in sum.iter_mut().zip(composite.led(k).image.pixels()) {
            *s += b as i32;
        }
    }
    sum.into_iter().map(|v| v.max(0) as u16).collect()
}

/// Mean of the raw LED subframes in `leds`, then ambient subtraction and
/// normalization. Averaging happens before subtraction; since subtraction
/// is linear the order only matters through the clamp.
pub fn combine_subframes(composite: &CompositeFrame, leds: LedSet) -> Result<Image<f32>> {
    if leds.is_empty() {
        return Err(Error::InvalidArgument("empty LED set".into()));
    }
    Ok(normalized_combination(composite, leds))
}

/// `max(mean(Bk) − A, 0)` before normalization, computed exactly in
/// integers as `max(Σ Bk − n·A, 0) / n`.
pub fn combined_difference(composite: &CompositeFrame, leds: LedSet) -> Image<f32> {
    let n = leds.len() as f32;
    let px = combined_keys(composite, leds)
        .into_iter()
        .map(|k| k as f32 / n)
        .collect();
    Image::from_vec(composite.width(), composite.height(), px).expect("same shape")
}

/// Full suppression for one composite.
pub fn suppress(composite: &CompositeFrame, leds: LedSet, mode: ChannelMode) -> SuppressedFrame {
    let channels = match mode {
        ChannelMode::MultiChannel => leds
            .iter()
            .map(|k| normalized_difference(composite, k))
            .collect(),
        ChannelMode::SingleChannel => vec![normalized_combination(composite, leds)],
    };
    SuppressedFrame {
        frame_index: composite.frame_index(),
        base_timestamp_us: composite.base_timestamp_us(),
        leds,
        mode,
        channels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;
    use crate::streamio::RawSubframe;
    use proptest::prelude::*;

    fn composite(images: [Vec<u8>; 5], w: usize, h: usize) -> CompositeFrame {
        let subs = images
            .into_iter()
            .enumerate()
            .map(|(i, px)| RawSubframe {
                timestamp_us: i as u64 * 2500,
                sequence_step: i as u8,
                image: GrayImage::from_vec(w, h, px).unwrap(),
            })
            .collect();
        CompositeFrame::from_subframes(0, subs).unwrap()
    }

    fn ramp(n: usize, scale: u8, offset: u8) -> Vec<u8> {
        (0..n)
            .map(|i| ((i as u32 * scale as u32) % 200) as u8 + offset)
            .collect()
    }

    #[test]
    fn led_set_parsing() {
        let s: LedSet = "3,4".parse().unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(s.to_string(), "3,4");
        assert!("0".parse::<LedSet>().is_err());
        assert!("5".parse::<LedSet>().is_err());
        assert!(LedSet::new(&[]).is_err());
        assert_eq!(serde_json::to_string(&s).unwrap(), "[3,4]");
    }

    #[test]
    fn zero_ambient_passes_led_through() {
        let n = 12;
        let b = ramp(n, 7, 3);
        let c = composite(
            [vec![0; n], b.clone(), b.clone(), b.clone(), b.clone()],
            4,
            3,
        );
        let d = subtract_ambient(&c, LedSet::new(&[2]).unwrap());
        assert_eq!(
            d[0].pixels(),
            b.iter().map(|&v| v as f32).collect::<Vec<_>>().as_slice()
        );
    }

    #[test]
    fn led_equal_to_ambient_gives_zero() {
        let n = 12;
        let a = ramp(n, 5, 10);
        let c = composite(
            [a.clone(), a.clone(), a.clone(), a.clone(), a.clone()],
            4,
            3,
        );
        for d in subtract_ambient(&c, LedSet::ALL) {
            assert!(d.pixels().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn negative_differences_clamp() {
        let c = composite(
            [
                vec![50; 4],
                vec![10; 4],
                vec![60; 4],
                vec![50; 4],
                vec![0; 4],
            ],
            2,
            2,
        );
        let d = subtract_ambient(&c, LedSet::new(&[1, 2]).unwrap());
        assert!(d[0].pixels().iter().all(|&v| v == 0.0));
        assert!(d[1].pixels().iter().all(|&v| v == 10.0));
    }

    #[test]
    fn constant_image_normalizes_to_zero() {
        let img = Image::filled(8, 8, 42.0f32);
        assert!(normalize(&img).pixels().iter().all(|&v| v == 0.0));
        assert!(normalize(&Image::<f32>::new(3, 3))
            .pixels()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn percentiles_map_to_unit_range() {
        // 0..=100: p1 = 1, p99 = 99 under linear interpolation.
        let img = Image::from_vec(101, 1, (0..=100).map(|v| v as f32).collect()).unwrap();
        let n = normalize(&img);
        assert_eq!(n.get(0, 0), 0.0);
        assert_eq!(n.get(1, 0), 0.0);
        assert!((n.get(50, 0) - 49.0 / 98.0).abs() < 1e-6);
        assert_eq!(n.get(99, 0), 1.0);
        assert_eq!(n.get(100, 0), 1.0);
    }

    #[test]
    fn combine_singleton_matches_multi_channel() {
        let n = 20;
        let c = composite(
            [
                ramp(n, 3, 0),
                ramp(n, 11, 20),
                ramp(n, 13, 5),
                ramp(n, 17, 9),
                ramp(n, 19, 1),
            ],
            5,
            4,
        );
        for k in 1..=4 {
            let s = LedSet::new(&[k]).unwrap();
            let single = combine_subframes(&c, s).unwrap();
            let multi = suppress(&c, s, ChannelMode::MultiChannel);
            assert_eq!(single, multi.channels[0]);
        }
    }

    #[test]
    fn suppressed_channel_count() {
        let c = composite(
            [vec![1; 4], vec![2; 4], vec![3; 4], vec![4; 4], vec![5; 4]],
            2,
            2,
        );
        let s = LedSet::new(&[3, 4]).unwrap();
        assert_eq!(suppress(&c, s, ChannelMode::MultiChannel).channels.len(), 2);
        assert_eq!(
            suppress(&c, s, ChannelMode::SingleChannel).channels.len(),
            1
        );
        assert!(suppress(&c, s, ChannelMode::MultiChannel)
            .led_channel(4)
            .is_some());
    }

    fn sorted_percentile(v: &[f32], q: f64) -> f32 {
        let mut s = v.to_vec();
        s.sort_by(f32::total_cmp);
        let r = q * (s.len() - 1) as f64;
        let k = r.floor() as usize;
        let f = (r - k as f64) as f32;
        s[k] + f * (s[(k + 1).min(s.len() - 1)] - s[k])
    }

    proptest! {
        #[test]
        fn histogram_percentiles_match_sorting(px in proptest::collection::vec(0.0f32..300.0, 1..2000)) {
            let peak = px.iter().copied().fold(0.0f32, f32::max);
            let (lo, hi) = percentile_pair(&px, peak, 0.01, 0.99);
            prop_assert_eq!(lo, sorted_percentile(&px, 0.01));
            prop_assert_eq!(hi, sorted_percentile(&px, 0.99));
        }

        #[test]
        fn normalize_is_scale_invariant_and_bounded(
            px in proptest::collection::vec(0.0f32..1000.0, 16..200),
            a in 0.01f32..100.0,
        ) {
            let img = Image::from_vec(px.len(), 1, px.clone()).unwrap();
            let scaled = img.map(|&v| v * a);
            let n0 = normalize(&img);
            let n1 = normalize(&scaled);
            for (x, y) in n0.pixels().iter().zip(n1.pixels()) {
                prop_assert!((0.0..=1.0).contains(x));
                prop_assert!((x - y).abs() < 1e-4, "{} vs {}", x, y);
            }
        }

        #[test]
        fn integer_paths_match_generic_normalize(
            a in proptest::collection::vec(0u8..=255, 64),
            b in proptest::collection::vec(0u8..=255, 64),
            c in proptest::collection::vec(0u8..=255, 64),
            d in proptest::collection::vec(0u8..=255, 64),
            shift in 0u8..120,
        ) {
            // Bias LED frames upwards so most differences are positive.
            let up = |v: &Vec<u8>| v.iter().map(|&x| x.saturating_add(shift)).collect::<Vec<u8>>();
            let f = composite([a, up(&b), up(&c), up(&d), b.clone()], 8, 8);
            for k in 1..=4u8 {
                let generic = normalize(&subtract_ambient(&f, LedSet::new(&[k]).unwrap())[0]);
                let fast = normalized_difference(&f, k);
                prop_assert_eq!(fast.pixels(), generic.pixels());
            }
            for m in [0b0011u8, 0b0111, 0b1111, 0b1010] {
                let leds = LedSet::from_mask(m).unwrap();
                let generic = normalize(&combined_difference(&f, leds));
                let fast = normalized_combination(&f, leds);
                prop_assert_eq!(fast.pixels(), generic.pixels());
            }
        }

        #[test]
        fn averaging_commutes_with_subtraction(
            a in proptest::collection::vec(0u8..100, 9),
            b3 in proptest::collection::vec(100u8..=255, 9),
            b4 in proptest::collection::vec(100u8..=255, 9),
        ) {
            let c = composite([a.clone(), a.clone(), a.clone(), b3.clone(), b4.clone()], 3, 3);
            let mean_first = combined_difference(&c, LedSet::new(&[3, 4]).unwrap());
            let diffs = subtract_ambient(&c, LedSet::new(&[3, 4]).unwrap());
            for i in 0..9 {
                let sub_first = 0.5 * (diffs[0].pixels()[i] + diffs[1].pixels()[i]);
                prop_assert!((mean_first.pixels()[i] - sub_first).abs() < 1e-4);
            }
        }
    }
}
