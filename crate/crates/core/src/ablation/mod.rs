//! Illuminator-configuration study: every non-empty LED subset as separate
//! channels, and every multi-LED subset averaged into one channel, each
//! trained and scored on the same benchmark suite.

mod suite;

use std::fmt::{self, Write as _};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{
    downsample_channel, push_finger_one_hot, train_on_features, Metrics, Model, Prediction,
    TrainConfig, TrainingData, FEATURE_GRID,
};
use crate::image::Image;
use crate::patches::{extract_patch, patch_transform, Dataset, HandKeypoints, Sample};
use crate::streamio::CompositeFrame;
use crate::suppress::{
    normalized_combination, normalized_difference, suppress, ChannelMode, LedSet, SuppressedFrame,
};
use crate::LED_COUNT;

pub use suite::{
    AmbientSetup, Material, SuiteSample, SuiteSpec, AMBIENT_SETUPS, FINGER_DIMS, MATERIALS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IlluminatorConfig {
    pub mode: ChannelMode,
    pub leds: LedSet,
}

impl IlluminatorConfig {
    pub fn channels(&self) -> usize {
        self.mode.channels(self.leds)
    }
}

impl fmt::Display for IlluminatorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            ChannelMode::MultiChannel => "multi",
            ChannelMode::SingleChannel => "single",
        };
        write!(f, "{mode} {{{}}}", self.leds)
    }
}

/// Non-empty LED subsets ordered by size, then lexicographically.
fn subsets(min_len: usize) -> Vec<LedSet> {
    let mut sets: Vec<LedSet> = (1u8..1 << LED_COUNT)
        .map(|m| LedSet::from_mask(m).expect("non-empty mask"))
        .filter(|s| s.len() >= min_len)
        .collect();
    sets.sort_by_key(|s| (s.len(), s.iter().collect::<Vec<_>>()));
    sets
}

/// The 15 multi-channel configurations followed by the 11 single-channel ones.
pub fn enumerate_configs() -> Vec<IlluminatorConfig> {
    let multi = subsets(1).into_iter().map(|leds| IlluminatorConfig {
        mode: ChannelMode::MultiChannel,
        leds,
    });
    let single = subsets(2).into_iter().map(|leds| IlluminatorConfig {
        mode: ChannelMode::SingleChannel,
        leds,
    });
    multi.chain(single).collect()
}

const GRID: usize = FEATURE_GRID * FEATURE_GRID;

/// Feature slots stored per sample: one per LED, then one per averaged set.
fn slot_sets() -> Vec<LedSet> {
    (1..=LED_COUNT as u8)
        .map(|k| LedSet::new(&[k]).expect("valid"))
        .chain(subsets(2))
        .collect()
}

/// Downsampled patch features of every suite sample under every channel
/// rule, so that all configurations train on identical renders.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub rows: Vec<BankRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankRow {
    pub scene_id: u32,
    pub test: bool,
    pub finger_id: u8,
    pub hover_mm: f64,
    pub touch: bool,
    /// `slots × 16 × 16` block means.
    pub features: Vec<f32>,
}

fn single_channel_frame(
    frame: &CompositeFrame,
    image: Image<f32>,
    leds: LedSet,
    mode: ChannelMode,
) -> SuppressedFrame {
    SuppressedFrame {
        frame_index: frame.frame_index(),
        base_timestamp_us: frame.base_timestamp_us(),
        leds,
        mode,
        channels: vec![image],
    }
}

/// Normalized images for every bank slot of one frame.
fn slot_frames(frame: &CompositeFrame) -> Vec<SuppressedFrame> {
    let sets = slot_sets();
    let mut out = Vec::with_capacity(sets.len());
    for k in 1..=LED_COUNT as u8 {
        let leds = LedSet::new(&[k]).expect("valid");
        out.push(single_channel_frame(
            frame,
            normalized_difference(frame, k),
            leds,
            ChannelMode::MultiChannel,
        ));
    }
    for set in &sets[LED_COUNT..] {
        out.push(single_channel_frame(
            frame,
            normalized_combination(frame, *set),
            *set,
            ChannelMode::SingleChannel,
        ));
    }
    out
}

/// Tracker draws to crop from: the primary one, plus extra jittered draws
/// for training samples.
fn crops(spec: &SuiteSpec, sample: &SuiteSample, kp: HandKeypoints) -> Vec<HandKeypoints> {
    let mut all = vec![kp];
    if !sample.test {
        all.extend(spec.extra_keypoints(sample));
    }
    all
}

fn bank_rows(spec: &SuiteSpec, sample: &SuiteSample) -> Result<Vec<BankRow>> {
    let (frame, truth, kp) = spec.render(sample);
    let slots = slot_frames(&frame);
    let mut rows = Vec::new();
    for kp in crops(spec, sample, kp) {
        for finger in &kp.fingers {
            let id = finger.finger_id;
            let transform = patch_transform(&kp, id)?;
            let mut features = Vec::with_capacity(slots.len() * GRID);
            let mut f = Vec::with_capacity(GRID);
            for sf in &slots {
                let patch = extract_patch(sf, &transform, id);
                f.clear();
                downsample_channel(patch.channel(0), &mut f);
                features.extend(f.iter().map(|&v| v as f32));
            }
            let ft = truth
                .finger(id)
                .ok_or_else(|| Error::InvalidScene(format!("no truth for finger {id}")))?;
            rows.push(BankRow {
                scene_id: sample.scene_id,
                test: sample.test,
                finger_id: id,
                hover_mm: ft.hover_mm,
                touch: ft.touch,
                features,
            });
        }
    }
    Ok(rows)
}

impl FeatureBank {
    pub fn build(spec: &SuiteSpec) -> Result<Self> {
        let samples = spec.samples()?;
        let rows = samples
            .par_iter()
            .map(|s| bank_rows(spec, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rows: rows.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Model inputs for `config` on one split.
    pub fn training_data(&self, config: &IlluminatorConfig, test: bool) -> (TrainingData, Vec<u8>) {
        let sets = slot_sets();
        let slots: Vec<usize> = match config.mode {
            ChannelMode::MultiChannel => config.leds.iter().map(|k| k as usize - 1).collect(),
            ChannelMode::SingleChannel => vec![sets
                .iter()
                .position(|s| *s == config.leds)
                .expect("multi-LED set")],
        };
        let rows: Vec<&BankRow> = self.rows.iter().filter(|r| r.test == test).collect();
        let dim = crate::estimate::input_dim(slots.len());
        let mut x = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            for &s in &slots {
                x.extend(
                    r.features[s * GRID..(s + 1) * GRID]
                        .iter()
                        .map(|&v| v as f64),
                );
            }
            push_finger_one_hot(r.finger_id, &mut x);
        }
        let data = TrainingData {
            x: Array2::from_shape_vec((rows.len(), dim), x).expect("uniform rows"),
            touch: rows.iter().map(|r| r.touch).collect(),
            hover_mm: rows.iter().map(|r| r.hover_mm).collect(),
        };
        (data, rows.iter().map(|r| r.finger_id).collect())
    }
}

/// Scores a model on prepared inputs.
pub fn evaluate_features(model: &Model, data: &TrainingData, finger_ids: &[u8]) -> Result<Metrics> {
    if data.x.ncols() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} columns, model expects {}",
            data.x.ncols(),
            model.input_dim()
        )));
    }
    let logits = model.logits(&data.x);
    let preds: Vec<Prediction> = logits
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let out = model.head(z);
            Prediction {
                finger_id: finger_ids[i],
                touch_pred: out.touch,
                hover_pred_mm: out.hover_mm,
                touch_true: data.touch[i],
                hover_true_mm: data.hover_mm[i],
            }
        })
        .collect();
    Metrics::from_predictions(&preds)
}

/// Trains one configuration on the bank's training split and scores it on
/// the held-out split.
pub fn train_config(
    bank: &FeatureBank,
    config: &IlluminatorConfig,
    cfg: &TrainConfig,
) -> Result<(Model, Metrics)> {
    let (train, _) = bank.training_data(config, false);
    let (test, ids) = bank.training_data(config, true);
    let (model, _) = train_on_features(&train, config.leds, config.mode, config.channels(), cfg)?;
    let metrics = evaluate_features(&model, &test, &ids)?;
    Ok((model, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub mode: ChannelMode,
    pub leds: LedSet,
    pub channels: usize,
    pub accuracy: f64,
    pub hover_mae_mm: Option<f64>,
    pub hover_mae_near_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: String,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
    /// In [`enumerate_configs`] order.
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, mode: ChannelMode, leds: LedSet) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode && r.leds == leds)
    }

    /// Rows by descending accuracy (ties keep enumeration order).
    pub fn sorted(&self) -> Vec<&AblationRow> {
        let mut rows: Vec<&AblationRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
        rows
    }

    pub fn report(&self) -> String {
        let mm = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "suite {} (train {}, test {}), seed {}",
            self.suite, self.train_samples, self.test_samples, self.seed
        );
        let _ = writeln!(
            s,
            "rank  config              channels  accuracy  hover MAE  <10 mm"
        );
        for (i, r) in self.sorted().into_iter().enumerate() {
            let _ = writeln!(
                s,
                "{:>4}  {:<18} {:>9}  {:>7.2}%  {:>9}  {:>6}",
                i + 1,
                r.config,
                r.channels,
                100.0 * r.accuracy,
                mm(r.hover_mae_mm),
                mm(r.hover_mae_near_mm)
            );
        }
        s
    }

    /// `config,mode,leds,channels,accuracy,hover_mae_mm,hover_mae_near_mm`
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
        let mut s =
            String::from("config,mode,leds,channels,accuracy,hover_mae_mm,hover_mae_near_mm\n");
        for r in &self.rows {
            let mode = match r.mode {
                ChannelMode::MultiChannel => "multi",
                ChannelMode::SingleChannel => "single",
            };
            let leds = r
                .leds
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join("+");
            let _ = writeln!(
                s,
                "{},{mode},{leds},{},{:.6},{},{}",
                r.config.replace(',', "+"),
                r.channels,
                r.accuracy,
                opt(r.hover_mae_mm),
                opt(r.hover_mae_near_mm)
            );
        }
        s
    }
}

/// Trains and scores every configuration on a prebuilt bank.
pub fn run_ablation_on_bank(
    bank: &FeatureBank,
    suite: &str,
    cfg: &TrainConfig,
) -> Result<AblationReport> {
    let configs = enumerate_configs();
    let rows = configs
        .par_iter()
        .map(|c| {
            let (_, m) = train_config(bank, c, cfg)?;
            log::info!("{c}: accuracy {:.2}%", 100.0 * m.accuracy);
            Ok(AblationRow {
                config: c.to_string(),
                mode: c.mode,
                leds: c.leds,
                channels: c.channels(),
                accuracy: m.accuracy,
                hover_mae_mm: m.hover_mae_mm,
                hover_mae_near_mm: m.hover_mae_near_mm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let test_samples = bank.rows.iter().filter(|r| r.test).count();
    Ok(AblationReport {
        suite: suite.to_string(),
        train_samples: bank.len() - test_samples,
        test_samples,
        seed: cfg.seed,
        rows,
    })
}

/// Renders the suite and runs every configuration; `seed` drives training.
/// Training schedule used for every configuration of the study.
pub fn ablation_train_config() -> TrainConfig {
    TrainConfig {
        touch_epochs: 40,
        hover_epochs: 40,
        ..TrainConfig::default()
    }
}

pub fn run_ablation(spec: &SuiteSpec, cfg: &TrainConfig, seed: u64) -> Result<AblationReport> {
    let bank = FeatureBank::build(spec)?;
    run_ablation_on_bank(&bank, &spec.name, &TrainConfig { seed, ..*cfg })
}

/// Which suite samples to include in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// Renders suite samples into full patches for one channel configuration.
pub fn generate_dataset(
    spec: &SuiteSpec,
    leds: LedSet,
    mode: ChannelMode,
    split: Split,
) -> Result<Dataset> {
    let samples: Vec<SuiteSample> = spec
        .samples()?
        .into_iter()
        .filter(|s| match split {
            Split::Train => !s.test,
            Split::Test => s.test,
            Split::All => true,
        })
        .collect();
    let rendered = samples
        .par_iter()
        .map(|s| {
            let (frame, truth, kp) = spec.render(s);
            let sf = suppress(&frame, leds, mode);
            let mut out = Vec::new();
            for kp in crops(spec, s, kp) {
                for finger in &kp.fingers {
                    let id = finger.finger_id;
                    let patch = extract_patch(&sf, &patch_transform(&kp, id)?, id);
                    let ft = truth
                        .finger(id)
                        .ok_or_else(|| Error::InvalidScene(format!("no truth for finger {id}")))?;
                    out.push(Sample {
                        scene_id: s.scene_id,
                        patch,
                        hover_mm: ft.hover_mm as f32,
                        touch: ft.touch,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::new(leds, mode);
    for s in rendered.into_iter().flatten() {
        ds.push(s)?;
    }
    Ok(ds)
}
