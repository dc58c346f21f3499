//! MAE / WAPE and test-set evaluation.

use alloc::vec::Vec;

use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::model::{Model, TextQueries, Variant};
use crate::text::PoolingStrategy;

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Metric(alloc::format!(
            "prediction length {} != target length {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Metric("empty input".into()));
    }
    Ok(())
}

/// `(1/N) Σ |target − pred|`
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (t - p).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// `Σ |target − pred| / Σ |target|`; undefined for an all-zero target.
pub fn wape(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    let denom: f64 = target.iter().map(|t| t.abs()).sum();
    if denom == 0.0 {
        return Err(Error::Metric("WAPE undefined: target is all zeros".into()));
    }
    let num: f64 = pred.iter().zip(target).map(|(p, t)| (t - p).abs()).sum();
    Ok(num / denom)
}

/// Scale on which metrics are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum MetricScale {
    /// Forecast and target both standardized by the input window's statistics.
    #[default]
    Normalized,
    Raw,
}

impl MetricScale {
    /// Maps raw-scale values of one window onto this scale.
    pub fn apply(self, sample: &WindowSample, raw: &[f64]) -> Vec<f64> {
        match self {
            MetricScale::Normalized => raw.iter().map(|&v| sample.norm_stats.normalize(v)).collect(),
            MetricScale::Raw => raw.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum VariantKind {
    WithText,
    WithoutText,
}

/// Metrics of one trained model on one horizon.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub variant: VariantKind,
    pub pooling: Option<PoolingStrategy>,
    pub horizon: usize,
    pub mae: f64,
    pub wape: f64,
    pub n_windows: usize,
    pub seed: u64,
    pub scale: MetricScale,
}

impl MetricsReport {
    pub fn model_variant(&self) -> Variant {
        match self.pooling {
            Some(pooling) => Variant::WithText { pooling },
            None => Variant::WithoutText,
        }
    }
}

/// Report plus the per-window forecasts and targets it was computed from,
/// both on the report's scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// Forecasts every test window, maps forecasts and targets onto `scale` and
/// pools all (window, step) errors into one MAE and one WAPE.
pub fn evaluate_model<E: Executor>(
    model: &Model,
    test: &[WindowSample],
    queries: Option<&TextQueries>,
    scale: MetricScale,
    seed: u64,
    exec: &E,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    if let Variant::WithText { .. } = model.cfg.variant {
        if queries.is_none() {
            return Err(Error::Text("with-text model evaluated without text queries".into()));
        }
    }
    let rows = exec.map(test.len(), &|i| -> Result<(Vec<f64>, Vec<f64>)> {
        let s = &test[i];
        let q = queries.and_then(|q| q.get(s.channel_index));
        let pred = model.predict(s, q)?;
        Ok((scale.apply(s, &pred), scale.apply(s, &s.y)))
    });
    let mut predictions = Vec::with_capacity(test.len());
    let mut targets = Vec::with_capacity(test.len());
    for r in rows {
        let (p, t) = r?;
        predictions.push(p);
        targets.push(t);
    }
    let flat_p: Vec<f64> = predictions.iter().flatten().copied().collect();
    let flat_t: Vec<f64> = targets.iter().flatten().copied().collect();
    let (variant, pooling) = match model.cfg.variant {
        Variant::WithText { pooling } => (VariantKind::WithText, Some(pooling)),
        Variant::WithoutText => (VariantKind::WithoutText, None),
    };
    let report = MetricsReport {
        variant,
        pooling,
        horizon: model.cfg.horizon,
        mae: mae(&flat_p, &flat_t)?,
        wape: wape(&flat_p, &flat_t)?,
        n_windows: test.len(),
        seed,
        scale,
    };
    Ok(Evaluation {
        report,
        predictions,
        targets,
    })
}
