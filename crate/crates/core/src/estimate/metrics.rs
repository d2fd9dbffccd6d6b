//! Touch accuracy and hover error summaries.

use std::fmt::Write as _;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::model::{features, Model};
use crate::error::{Error, Result};
use crate::patches::Dataset;

/// Upper edge of the near-hover band, mm.
pub const NEAR_BAND_MM: f64 = 10.0;
/// Upper edge of the evaluated hover range, mm.
pub const FAR_BAND_MM: f64 = 100.0;

/// One labeled prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub finger_id: u8,
    pub touch_pred: bool,
    pub hover_pred_mm: f64,
    pub touch_true: bool,
    pub hover_true_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerMetrics {
    pub finger_id: u8,
    pub samples: usize,
    pub accuracy: f64,
    pub hover_mae_mm: Option<f64>,
}

/// Hover errors are measured on non-touch samples with true hover up to
/// 100 mm; the near band is `h < 10`, the far band `10 ≤ h ≤ 100`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    pub accuracy: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
    pub hover_samples: usize,
    pub hover_mae_mm: Option<f64>,
    pub hover_mae_near_mm: Option<f64>,
    pub hover_mae_far_mm: Option<f64>,
    pub per_finger: Vec<FingerMetrics>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl Metrics {
    pub fn from_predictions(preds: &[Prediction]) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::InvalidDataset("no samples to evaluate".into()));
        }
        let count = |f: &dyn Fn(&Prediction) -> bool| preds.iter().filter(|p| f(p)).count();
        let tp = count(&|p| p.touch_pred && p.touch_true);
        let fp = count(&|p| p.touch_pred && !p.touch_true);
        let tn = count(&|p| !p.touch_pred && !p.touch_true);
        let fn_ = count(&|p| !p.touch_pred && p.touch_true);
        let hover: Vec<&Prediction> = preds
            .iter()
            .filter(|p| !p.touch_true && p.hover_true_mm <= FAR_BAND_MM)
            .collect();
        let err = |p: &&Prediction| (p.hover_pred_mm - p.hover_true_mm).abs();
        let mut per_finger = Vec::new();
        for id in 1..=5u8 {
            let mine: Vec<&Prediction> = preds.iter().filter(|p| p.finger_id == id).collect();
            if mine.is_empty() {
                continue;
            }
            per_finger.push(FingerMetrics {
                finger_id: id,
                samples: mine.len(),
                accuracy: mine.iter().filter(|p| p.touch_pred == p.touch_true).count() as f64
                    / mine.len() as f64,
                hover_mae_mm: mean(hover.iter().filter(|p| p.finger_id == id).map(err)),
            });
        }
        Ok(Self {
            samples: preds.len(),
            accuracy: (tp + tn) as f64 / preds.len() as f64,
            true_positive: tp,
            false_positive: fp,
            true_negative: tn,
            false_negative: fn_,
            hover_samples: hover.len(),
            hover_mae_mm: mean(hover.iter().map(err)),
            hover_mae_near_mm: mean(
                hover
                    .iter()
                    .filter(|p| p.hover_true_mm < NEAR_BAND_MM)
                    .map(err),
            ),
            hover_mae_far_mm: mean(
                hover
                    .iter()
                    .filter(|p| p.hover_true_mm >= NEAR_BAND_MM)
                    .map(err),
            ),
            per_finger,
        })
    }

    /// Human-readable summary.
    pub fn report(&self) -> String {
        let mm = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2} mm"));
        let mut s = String::new();
        let _ = writeln!(s, "samples           {}", self.samples);
        let _ = writeln!(s, "touch accuracy    {:.2}%", 100.0 * self.accuracy);
        let _ = writeln!(
            s,
            "confusion         tp {} fp {} tn {} fn {}",
            self.true_positive, self.false_positive, self.true_negative, self.false_negative
        );
        let _ = writeln!(
            s,
            "hover MAE         {} over {} samples",
            mm(self.hover_mae_mm),
            self.hover_samples
        );
        let _ = writeln!(s, "  h < 10 mm       {}", mm(self.hover_mae_near_mm));
        let _ = writeln!(s, "  10..100 mm      {}", mm(self.hover_mae_far_mm));
        for f in &self.per_finger {
            let _ = writeln!(
                s,
                "finger {}          {:.2}% over {}, hover {}",
                f.finger_id,
                100.0 * f.accuracy,
                f.samples,
                mm(f.hover_mae_mm)
            );
        }
        s
    }
}

/// Runs the model over a labeled dataset.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<Metrics> {
    if ds.header.channels() != model.channels {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} channels, model expects {}",
            ds.header.channels(),
            model.channels
        )));
    }
    let preds: Vec<Prediction> = ds
        .samples
        .iter()
        .map(|s| {
            let out = model.head(model.logit(Array1::from(features(&s.patch)).view()));
            Prediction {
                finger_id: s.patch.finger_id,
                touch_pred: out.touch,
                hover_pred_mm: out.hover_mm,
                touch_true: s.touch,
                hover_true_mm: s.hover_mm as f64,
            }
        })
        .collect();
    Metrics::from_predictions(&preds)
}
