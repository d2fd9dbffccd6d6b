//! Two-stage training: touch classification, then distance-in-logit regression.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{features, gelu, sigmoid, Model, DEFAULT_HIDDEN, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::patches::Dataset;
use crate::suppress::{ChannelMode, LedSet};

/// Hover errors enter the regression loss in centimetres.
const HOVER_LOSS_UNIT_MM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub touch_epochs: usize,
    pub hover_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    /// Weight of the classification loss during the hover stage.
    pub hover_stage_bce_weight: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            touch_epochs: 10,
            hover_epochs: 10,
            batch_size: 128,
            learning_rate: 2e-3,
            hidden: DEFAULT_HIDDEN,
            hover_stage_bce_weight: 0.5,
            tau: DEFAULT_TAU,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Binary cross-entropy on touch flags.
    Touch,
    /// MAE + MSE on hover of non-touch samples, plus weighted BCE.
    Hover { bce_weight_millis: u32 },
}

impl Stage {
    pub fn hover(bce_weight: f64) -> Self {
        Stage::Hover {
            bce_weight_millis: (bce_weight * 1000.0).round() as u32,
        }
    }

    fn bce_weight(self) -> f64 {
        match self {
            Stage::Touch => 1.0,
            Stage::Hover { bce_weight_millis } => bce_weight_millis as f64 / 1000.0,
        }
    }
}

/// Feature rows with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub x: Array2<f64>,
    pub touch: Vec<bool>,
    pub hover_mm: Vec<f64>,
}

impl TrainingData {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let rows: Vec<Vec<f64>> = ds.samples.iter().map(|s| features(&s.patch)).collect();
        let dim = rows.first().map_or(0, Vec::len);
        let x = Array2::from_shape_vec((rows.len(), dim), rows.concat()).expect("uniform rows");
        Self {
            x,
            touch: ds.samples.iter().map(|s| s.touch).collect(),
            hover_mm: ds.samples.iter().map(|s| s.hover_mm as f64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.touch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.touch.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), idx),
            touch: idx.iter().map(|&i| self.touch[i]).collect(),
            hover_mm: idx.iter().map(|&i| self.hover_mm[i]).collect(),
        }
    }
}

/// Gradients with the shapes of the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
    pub log_kappa: f64,
}

impl Gradients {
    fn flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.w1.iter().copied().collect();
        v.extend(self.b1.iter());
        v.extend(self.w2.iter());
        v.push(self.b2);
        v.push(self.log_kappa);
        v
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Loss of `model` on a batch and its gradient.
pub fn loss_and_grad(model: &Model, data: &TrainingData, stage: Stage) -> (f64, Gradients) {
    let b = data.len() as f64;
    let mut pre = data.x.dot(&model.w1.t());
    pre += &model.b1.view().insert_axis(Axis(0));
    let mut act = pre.clone();
    let mut dact = pre;
    ndarray::Zip::from(&mut act)
        .and(&mut dact)
        .for_each(|a, d| {
            let (y, dy) = gelu(*a);
            *a = y;
            *d = dy;
        });
    let z = act.dot(&model.w2) + model.b2;

    let bce_w = stage.bce_weight();
    let mut loss = 0.0;
    let mut dz = Array1::zeros(z.len());
    for i in 0..z.len() {
        let y = if data.touch[i] { 1.0 } else { 0.0 };
        loss += bce_w * (softplus(z[i]) - y * z[i]) / b;
        dz[i] = bce_w * (sigmoid(z[i]) - y) / b;
    }
    let mut dlog_kappa = 0.0;
    if let Stage::Hover { .. } = stage {
        let kappa = model.kappa();
        let m = data.touch.iter().filter(|t| !**t).count();
        if m > 0 {
            let m = m as f64;
            for i in 0..z.len() {
                if data.touch[i] {
                    continue;
                }
                let e = (-kappa * z[i] - data.hover_mm[i]) / HOVER_LOSS_UNIT_MM;
                loss += (e.abs() + e * e) / m;
                let de = (e.signum() + 2.0 * e) / m;
                dz[i] += de * (-kappa / HOVER_LOSS_UNIT_MM);
                dlog_kappa += de * (-kappa * z[i] / HOVER_LOSS_UNIT_MM);
            }
        }
    }
    let w2 = act.t().dot(&dz);
    let b2 = dz.sum();
    let mut dpre = dz
        .view()
        .insert_axis(Axis(1))
        .dot(&model.w2.view().insert_axis(Axis(0)));
    dpre *= &dact;
    let w1 = dpre.t().dot(&data.x);
    let b1 = dpre.sum_axis(Axis(0));
    (
        loss,
        Gradients {
            w1,
            b1,
            w2,
            b2,
            log_kappa: dlog_kappa,
        },
    )
}

/// Norm-wise relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` between the analytic
/// gradient and central differences with step `eps`, over all parameters.
pub fn gradient_check(model: &Model, data: &TrainingData, stage: Stage, eps: f64) -> f64 {
    let analytic = loss_and_grad(model, data, stage).1.flat();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut m = model.clone();
    let loss = |m: &Model| loss_and_grad(m, data, stage).0;
    let mut probe = |get: &mut dyn FnMut(&mut Model) -> &mut f64| {
        let orig = *get(&mut m);
        *get(&mut m) = orig + eps;
        let up = loss(&m);
        *get(&mut m) = orig - eps;
        let down = loss(&m);
        *get(&mut m) = orig;
        numeric.push((up - down) / (2.0 * eps));
    };
    let (h, d) = (model.hidden(), model.input_dim());
    for r in 0..h {
        for c in 0..d {
            probe(&mut |m| &mut m.w1[[r, c]]);
        }
    }
    for r in 0..h {
        probe(&mut |m| &mut m.b1[r]);
    }
    for r in 0..h {
        probe(&mut |m| &mut m.w2[r]);
    }
    probe(&mut |m| &mut m.b2);
    probe(&mut |m| &mut m.log_kappa);
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-300)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Model, g: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut i = 0;
        let mut upd = |p: &mut f64, g: f64, m: &mut [f64], v: &mut [f64]| {
            m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g;
            v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g * g;
            *p -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            i += 1;
        };
        let (m, v) = (&mut self.m, &mut self.v);
        for (p, &g) in model.w1.iter_mut().zip(g.w1.iter()) {
            upd(p, g, m, v);
        }
        for (p, &g) in model.b1.iter_mut().zip(g.b1.iter()) {
            upd(p, g, m, v);
        }
        for (p, &g) in model.w2.iter_mut().zip(g.w2.iter()) {
            upd(p, g, m, v);
        }
        upd(&mut model.b2, g.b2, m, v);
        upd(&mut model.log_kappa, g.log_kappa, m, v);
    }
}

/// Full-data loss after every epoch of each stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub touch_losses: Vec<f64>,
    pub hover_losses: Vec<f64>,
}

fn check_data(data: &TrainingData) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    let touches = data.touch.iter().filter(|t| **t).count();
    if touches == 0 || touches == data.len() {
        return Err(Error::InvalidDataset(
            "dataset needs both touch and hover samples".into(),
        ));
    }
    Ok(())
}

fn run_stage(
    model: &mut Model,
    data: &TrainingData,
    stage: Stage,
    epochs: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n_params = model.w1.len() + 2 * model.hidden() + 2;
    let mut adam = Adam::new(n_params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch = data.select(chunk);
            let (_, g) = loss_and_grad(model, &batch, stage);
            adam.step(model, &g, cfg.learning_rate);
        }
        losses.push(loss_and_grad(model, data, stage).0);
    }
    losses
}

/// Per-column mean and standard deviation (floored so constant columns pass through).
fn column_stats(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x
        .mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(x.ncols()));
    let scale = x.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-3));
    (mean, scale)
}

/// Trains on precomputed features. `channels` describes the patch layout the
/// features came from.
pub fn train_on_features(
    data: &TrainingData,
    leds: LedSet,
    mode: ChannelMode,
    channels: usize,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    check_data(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model =
        Model::init_with_input(leds, mode, channels, data.x.ncols(), cfg.hidden, &mut rng);
    model.tau = cfg.tau;
    if cfg.touch_epochs + cfg.hover_epochs == 0 {
        return Ok((model, TrainReport::default()));
    }
    // Optimize on standardized inputs, then fold the scaling into the first layer.
    let (mean, scale) = column_stats(&data.x);
    let standardized = TrainingData {
        x: (&data.x - &mean) / &scale,
        ..data.clone()
    };
    let touch_losses = run_stage(
        &mut model,
        &standardized,
        Stage::Touch,
        cfg.touch_epochs,
        cfg,
        &mut rng,
    );
    let hover_stage = Stage::hover(cfg.hover_stage_bce_weight);
    let hover_losses = run_stage(
        &mut model,
        &standardized,
        hover_stage,
        cfg.hover_epochs,
        cfg,
        &mut rng,
    );
    log::debug!("training losses: touch {touch_losses:?}, hover {hover_losses:?}");
    model.w1 /= &scale;
    model.b1 -= &model.w1.dot(&mean);
    Ok((
        model,
        TrainReport {
            touch_losses,
            hover_losses,
        },
    ))
}

/// Trains a model for the dataset's LED configuration.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    let data = TrainingData::from_dataset(ds);
    train_on_features(
        &data,
        ds.header.leds,
        ds.header.mode,
        ds.header.channels(),
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn leds() -> LedSet {
        LedSet::new(&[3]).unwrap()
    }

    /// Two Gaussian blobs; touch samples centered at +1, hover at −1.
    fn blobs(n: usize, dim: usize, seed: u64) -> TrainingData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut x = Array2::zeros((n, dim));
        let mut touch = Vec::new();
        let mut hover = Vec::new();
        for i in 0..n {
            let t = i % 2 == 0;
            let c = if t { 1.0 } else { -1.0 };
            for j in 0..dim {
                x[[i, j]] = c + noise.sample(&mut rng);
            }
            touch.push(t);
            hover.push(if t { 0.0 } else { rng.random_range(1.0..50.0) });
        }
        TrainingData {
            x,
            touch,
            hover_mm: hover,
        }
    }

    fn random_instance(seed: u64) -> (Model, TrainingData) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = blobs(12, 6, seed + 100);
        let mut m = Model::init_with_input(leds(), ChannelMode::MultiChannel, 1, 6, 5, &mut rng);
        m.b1.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        m.b2 = rng.random_range(-0.5..0.5);
        m.log_kappa = rng.random_range(1.0..3.0);
        (m, data)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let (m, d) = random_instance(seed);
            for stage in [Stage::Touch, Stage::hover(0.5)] {
                let err = gradient_check(&m, &d, stage, 1e-6);
                assert!(err < 1e-4, "seed {seed} {stage:?}: {err}");
            }
        }
    }

    #[test]
    fn separable_blobs_reach_full_accuracy() {
        let data = blobs(256, 8, 1);
        let cfg = TrainConfig {
            touch_epochs: 10,
            hover_epochs: 0,
            hidden: 16,
            ..Default::default()
        };
        let (m, rep) =
            train_on_features(&data, leds(), ChannelMode::MultiChannel, 1, &cfg).unwrap();
        let z = m.logits(&data.x);
        let correct = z
            .iter()
            .zip(&data.touch)
            .filter(|(z, t)| m.head(**z).touch == **t)
            .count();
        assert_eq!(correct, data.len());
        for w in rep.touch_losses.windows(2) {
            assert!(w[1] <= w[0] * 1.05 + 1e-9, "{:?}", rep.touch_losses);
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = blobs(20, 4, 2);
        let cfg = TrainConfig {
            touch_epochs: 0,
            hover_epochs: 0,
            hidden: 8,
            seed: 7,
            ..Default::default()
        };
        let (m, rep) =
            train_on_features(&data, leds(), ChannelMode::MultiChannel, 1, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let init = Model::init_with_input(leds(), ChannelMode::MultiChannel, 1, 4, 8, &mut rng);
        assert_eq!(m, init);
        assert!(rep.touch_losses.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(100, 4, 3);
        let cfg = TrainConfig {
            touch_epochs: 2,
            hover_epochs: 2,
            hidden: 8,
            ..Default::default()
        };
        let a = train_on_features(&data, leds(), ChannelMode::MultiChannel, 1, &cfg).unwrap();
        let b = train_on_features(&data, leds(), ChannelMode::MultiChannel, 1, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hover_stage_fits_distance() {
        // Hover proportional to the first feature.
        let mut data = blobs(400, 4, 4);
        for i in 0..data.len() {
            if !data.touch[i] {
                data.x[[i, 0]] = -data.hover_mm[i] / 25.0;
            }
        }
        let cfg = TrainConfig {
            touch_epochs: 5,
            hover_epochs: 60,
            hidden: 16,
            ..Default::default()
        };
        let (m, rep) =
            train_on_features(&data, leds(), ChannelMode::MultiChannel, 1, &cfg).unwrap();
        let z = m.logits(&data.x);
        let mae: f64 = (0..data.len())
            .filter(|&i| !data.touch[i])
            .map(|i| (m.head(z[i]).hover_mm - data.hover_mm[i]).abs())
            .sum::<f64>()
            / (data.len() / 2) as f64;
        assert!(mae < 3.0, "mae {mae}, losses {:?}", rep.hover_losses);
    }

    #[test]
    fn degenerate_datasets_are_rejected() {
        let mut data = blobs(10, 3, 5);
        let cfg = TrainConfig::default();
        let empty = data.select(&[]);
        assert!(matches!(
            train_on_features(&empty, leds(), ChannelMode::MultiChannel, 1, &cfg),
            Err(Error::InvalidDataset(_))
        ));
        data.touch.iter_mut().for_each(|t| *t = true);
        assert!(matches!(
            train_on_features(&data, leds(), ChannelMode::MultiChannel, 1, &cfg),
            Err(Error::InvalidDataset(_))
        ));
    }
}
