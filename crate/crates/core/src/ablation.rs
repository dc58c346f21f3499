//! With-text vs without-text ablation across horizons and pooling
//! strategies, and the comparison tables built from it.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{make_windows, split_chronological, PatchConfig, RawDataset, SplitRatios, WindowSample};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, MetricScale, MetricsReport};
use crate::exec::Executor;
use crate::fusion::FusionConfig;
use crate::model::{Model, ModelConfig, TextQueries, Variant};
use crate::text::{PoolingStrategy, TokenEmbeddingSet};
use crate::train::{train, NoHook, TrainConfig};

/// Shared settings for every arm of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentSetup {
    pub input_len: usize,
    pub window_stride: usize,
    pub split: SplitRatios,
    pub patch: PatchConfig,
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub normalize: bool,
    pub scale: MetricScale,
    /// `train.seed` also seeds parameter initialization.
    pub train: TrainConfig,
}

impl ExperimentSetup {
    pub fn model_config(&self, horizon: usize, variant: Variant, d_tx: usize) -> ModelConfig {
        ModelConfig {
            input_len: self.input_len,
            horizon,
            patch: self.patch,
            encoder: self.encoder,
            fusion: self.fusion,
            variant,
            d_tx,
            normalize: self.normalize,
        }
    }
}

/// Train / validation / test windows for one horizon.
#[derive(Debug, Clone)]
pub struct WindowSets {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

pub fn window_sets(d: &RawDataset, setup: &ExperimentSetup, horizon: usize) -> Result<WindowSets> {
    let l = setup.input_len;
    let splits = split_chronological(d.n_rows(), setup.split, l + horizon)?;
    Ok(WindowSets {
        train: make_windows(d, splits.train, l, horizon, setup.window_stride)?,
        val: make_windows(d, splits.val, l, horizon, setup.window_stride)?,
        test: make_windows(d, splits.test, l, horizon, setup.window_stride)?,
    })
}

/// Orders embedding sets by the dataset's channel order.
pub fn align_embeddings<'a>(
    d: &RawDataset,
    sets: &'a [TokenEmbeddingSet],
) -> Result<Vec<&'a TokenEmbeddingSet>> {
    d.channel_ids()
        .iter()
        .map(|id| {
            sets.iter()
                .find(|s| &s.channel_id == id)
                .ok_or_else(|| Error::Text(format!("no embeddings for channel `{id}`")))
        })
        .collect()
}

/// Trains and evaluates one arm on prepared windows.
pub fn run_arm<E: Executor>(
    setup: &ExperimentSetup,
    windows: &WindowSets,
    horizon: usize,
    variant: Variant,
    embeddings: Option<&[&TokenEmbeddingSet]>,
    exec: &E,
) -> Result<(MetricsReport, crate::train::Checkpoint)> {
    let (queries, d_tx) = match variant {
        Variant::WithText { pooling } => {
            let sets = embeddings.ok_or_else(|| Error::Text("with-text arm needs embeddings".into()))?;
            let d_tx = sets.first().map_or(0, |s| s.d_tx());
            (Some(TextQueries::pooled(sets, pooling)?), d_tx)
        }
        Variant::WithoutText => (None, 0),
    };
    let cfg = setup.model_config(horizon, variant, d_tx);
    let model = Model::new(cfg, setup.train.seed)?;
    let outcome = train(
        model,
        &windows.train,
        &windows.val,
        queries.as_ref(),
        &setup.train,
        exec,
        &mut NoHook,
    )?;
    let eval = evaluate_model(
        &outcome.checkpoint.model,
        &windows.test,
        queries.as_ref(),
        setup.scale,
        setup.train.seed,
        exec,
    )?;
    Ok((eval.report, outcome.checkpoint))
}

/// All cells of one ablation run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationReport {
    pub horizons: Vec<usize>,
    pub strategies: Vec<PoolingStrategy>,
    pub seed: u64,
    pub scale: MetricScale,
    pub cells: Vec<MetricsReport>,
}

/// For every horizon, trains one without-text model and one with-text model
/// per pooling strategy from the same seed, and evaluates each on the test
/// split. `on_cell` sees each report as it completes.
pub fn run_ablation<E: Executor>(
    dataset: &RawDataset,
    embeddings: &[TokenEmbeddingSet],
    horizons: &[usize],
    strategies: &[PoolingStrategy],
    setup: &ExperimentSetup,
    exec: &E,
    on_cell: &mut dyn FnMut(&MetricsReport),
) -> Result<AblationReport> {
    if horizons.is_empty() {
        return Err(Error::config("horizons", "must be nonempty"));
    }
    let aligned = if strategies.is_empty() {
        Vec::new()
    } else {
        align_embeddings(dataset, embeddings)?
    };
    for &h in horizons {
        split_chronological(dataset.n_rows(), setup.split, setup.input_len + h)?;
    }
    let mut cells = Vec::with_capacity(horizons.len() * (1 + strategies.len()));
    for &h in horizons {
        let windows = window_sets(dataset, setup, h)?;
        let arms = core::iter::once(Variant::WithoutText)
            .chain(strategies.iter().map(|&pooling| Variant::WithText { pooling }));
        for variant in arms {
            let (report, _) = run_arm(setup, &windows, h, variant, Some(&aligned), exec)?;
            on_cell(&report);
            cells.push(report);
        }
    }
    Ok(AblationReport {
        horizons: horizons.to_vec(),
        strategies: strategies.to_vec(),
        seed: setup.train.seed,
        scale: setup.scale,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Metric {
    Mae,
    Wape,
}

impl Metric {
    pub fn of(self, r: &MetricsReport) -> f64 {
        match self {
            Metric::Mae => r.mae,
            Metric::Wape => r.wape,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Wape => "wape",
        }
    }
}

/// Marks the minimum of `values`; equal minima are all marked.
pub fn mark_best(values: &[f64]) -> Vec<bool> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    values.iter().map(|&v| v == min).collect()
}

/// One row of a comparison table: an arm's metric per horizon, with the
/// per-column best marks.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TableRow {
    pub arm: Variant,
    pub values: Vec<f64>,
    pub best: Vec<bool>,
}

/// Rows for `arms` with best marks computed down each horizon column.
pub fn comparison(values: &[(Variant, Vec<f64>)]) -> Vec<TableRow> {
    let n_cols = values.first().map_or(0, |(_, v)| v.len());
    let mut best = alloc::vec![alloc::vec![false; n_cols]; values.len()];
    for c in 0..n_cols {
        let column: Vec<f64> = values.iter().map(|(_, v)| v[c]).collect();
        for (r, b) in mark_best(&column).into_iter().enumerate() {
            best[r][c] = b;
        }
    }
    values
        .iter()
        .zip(best)
        .map(|((arm, v), best)| TableRow {
            arm: *arm,
            values: v.clone(),
            best,
        })
        .collect()
}

impl AblationReport {
    pub fn cell(&self, horizon: usize, arm: Variant) -> Option<&MetricsReport> {
        self.cells
            .iter()
            .find(|c| c.horizon == horizon && c.model_variant() == arm)
    }

    /// Arms in row order: `wo`, then one `wt` per strategy.
    pub fn arms(&self) -> Vec<Variant> {
        core::iter::once(Variant::WithoutText)
            .chain(self.strategies.iter().map(|&pooling| Variant::WithText { pooling }))
            .collect()
    }

    fn row(&self, arm: Variant, metric: Metric) -> Result<Vec<f64>> {
        self.horizons
            .iter()
            .map(|&h| {
                self.cell(h, arm).map(|c| metric.of(c)).ok_or_else(|| {
                    Error::Data(format!("ablation report has no cell for {} at h={h}", arm.label()))
                })
            })
            .collect()
    }

    /// Without-text vs with-text (first strategy) per horizon.
    pub fn text_table(&self, metric: Metric) -> Result<Vec<TableRow>> {
        let mut rows = alloc::vec![(Variant::WithoutText, self.row(Variant::WithoutText, metric)?)];
        if let Some(&pooling) = self.strategies.first() {
            let arm = Variant::WithText { pooling };
            rows.push((arm, self.row(arm, metric)?));
        }
        Ok(comparison(&rows))
    }

    /// With-text arms compared across pooling strategies.
    pub fn strategy_table(&self, metric: Metric) -> Result<Vec<TableRow>> {
        let rows = self
            .strategies
            .iter()
            .map(|&pooling| {
                let arm = Variant::WithText { pooling };
                Ok((arm, self.row(arm, metric)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(comparison(&rows))
    }

    /// Every arm, best marked across all of them.
    pub fn full_table(&self, metric: Metric) -> Result<Vec<TableRow>> {
        let rows = self
            .arms()
            .into_iter()
            .map(|arm| Ok((arm, self.row(arm, metric)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(comparison(&rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn best_marking_follows_reported_values() {
        let wo = Variant::WithoutText;
        let wt = Variant::WithText {
            pooling: PoolingStrategy::Mean,
        };
        // MAE at the shortest News horizon
        let rows = comparison(&[(wo, vec![0.3464]), (wt, vec![0.3367])]);
        assert_eq!((rows[0].best[0], rows[1].best[0]), (false, true));
        // WAPE at Wiki-People h = 21
        let rows = comparison(&[(wo, vec![0.6382]), (wt, vec![0.6474])]);
        assert_eq!((rows[0].best[0], rows[1].best[0]), (true, false));
        let rows = comparison(&[(wo, vec![0.5]), (wt, vec![0.5])]);
        assert!(rows[0].best[0] && rows[1].best[0]);
    }

    #[test]
    fn mark_best_handles_columns() {
        assert_eq!(mark_best(&[3.0, 1.0, 2.0, 1.0]), vec![false, true, false, true]);
    }
}
