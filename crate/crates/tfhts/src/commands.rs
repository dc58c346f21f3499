//! Subcommand bodies. Each takes a fully resolved config.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use tfhts_core::ablation::{align_embeddings, run_ablation, window_sets, AblationReport};
use tfhts_core::data::RawDataset;
use tfhts_core::eval::{evaluate_model, MetricsReport};
use tfhts_core::gradcheck::{full_suite, GradCheck};
use tfhts_core::model::{Model, TextQueries, Variant};
use tfhts_core::synthetic::generate;
use tfhts_core::text::{hash_embed_text, PoolingStrategy, TokenEmbeddingSet};
use tfhts_core::train::{train, NoHook, TrainOutcome};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, write_series_csv, write_text_sidecar};
use crate::embedding::{read_embedding_file, write_embedding_file};
use crate::error::{Error, Result};
use crate::executor::Rayon;
use crate::report::{write_ablation_report, write_metrics};

/// Dataset and, when text is used, one embedding set per channel.
pub struct Inputs {
    pub dataset: RawDataset,
    pub embeddings: Vec<TokenEmbeddingSet>,
}

pub fn load_inputs(cfg: &RunConfig, need_text: bool) -> Result<Inputs> {
    let Some(series) = &cfg.data.series else {
        let period = cfg.synthetic.period_len();
        if cfg.window_stride != period {
            warn!("synthetic windows are regime-blind only at window_stride {period}");
        }
        let (dataset, embeddings) = generate(&cfg.synthetic)?;
        return Ok(Inputs { dataset, embeddings });
    };
    let dataset = load_dataset(series, cfg.data.texts.as_deref())?;
    let embeddings = match (&cfg.data.embeddings, need_text) {
        (_, false) => Vec::new(),
        (Some(path), true) => read_embedding_file(path)?,
        (None, true) => {
            dataset.require_texts()?;
            (0..dataset.n_channels())
                .map(|c| {
                    let id = &dataset.channel_ids()[c];
                    let text = dataset.text(c).expect("texts checked");
                    hash_embed_text(id, text, cfg.data.hash_d_tx, cfg.seed)
                })
                .collect::<tfhts_core::Result<Vec<_>>>()?
        }
    };
    Ok(Inputs { dataset, embeddings })
}

fn queries_for(inputs: &Inputs, variant: Variant) -> Result<(Option<TextQueries>, usize)> {
    match variant {
        Variant::WithoutText => Ok((None, 0)),
        Variant::WithText { pooling } => {
            let aligned = align_embeddings(&inputs.dataset, &inputs.embeddings)?;
            let d_tx = aligned.first().map_or(0, |s| s.d_tx());
            Ok((Some(TextQueries::pooled(&aligned, pooling)?), d_tx))
        }
    }
}

pub fn checkpoint_path(dir: &Path, horizon: usize) -> PathBuf {
    dir.join(format!("model_h{horizon}.tfhc"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains one model per configured horizon and saves each checkpoint.
pub fn cmd_train(cfg: &RunConfig, exec: &Rayon) -> Result<Vec<(usize, TrainOutcome)>> {
    let variant = cfg.variant();
    let inputs = load_inputs(cfg, variant.pooling().is_some())?;
    let (queries, d_tx) = queries_for(&inputs, variant)?;
    let setup = cfg.setup();
    create_dir(&cfg.out_dir)?;
    let mut outcomes = Vec::new();
    for &h in &cfg.horizons {
        let w = window_sets(&inputs.dataset, &setup, h)?;
        info!(
            "h={h} {}: {} train / {} val windows",
            variant.label(),
            w.train.len(),
            w.val.len()
        );
        let model = Model::new(setup.model_config(h, variant, d_tx), setup.train.seed)?;
        let out = train(model, &w.train, &w.val, queries.as_ref(), &setup.train, exec, &mut NoHook)?;
        for e in &out.log {
            info!("h={h} epoch {} train {:.6} val {:.6}", e.epoch, e.train_loss, e.val_loss);
        }
        let path = checkpoint_path(&cfg.out_dir, h);
        save_checkpoint(&out.checkpoint, &path)?;
        let log_path = cfg.out_dir.join(format!("train_log_h{h}.json"));
        let log = serde_json::json!({
            "horizon": h,
            "variant": variant,
            "epochs": out.log,
            "stopped_early": out.stopped_early,
            "best_epoch": out.checkpoint.best_epoch,
        });
        fs::write(&log_path, serde_json::to_vec_pretty(&log).expect("log serializes"))
            .map_err(|e| Error::io(&log_path, e))?;
        info!("wrote {}", path.display());
        outcomes.push((h, out));
    }
    Ok(outcomes)
}

/// Evaluates saved checkpoints on the test split. `checkpoint` overrides
/// the per-horizon files in the output directory; `strategy` overrides the
/// checkpoint's pooling.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    strategy: Option<PoolingStrategy>,
    exec: &Rayon,
) -> Result<Vec<MetricsReport>> {
    let paths: Vec<PathBuf> = match checkpoint {
        Some(p) => vec![p.to_path_buf()],
        None => cfg.horizons.iter().map(|&h| checkpoint_path(&cfg.out_dir, h)).collect(),
    };
    let mut reports = Vec::new();
    let mut inputs: Option<Inputs> = None;
    create_dir(&cfg.out_dir)?;
    for path in paths {
        let ck = load_checkpoint(&path)?;
        let model = ck.model;
        let variant = match (model.cfg.variant, strategy) {
            (Variant::WithText { .. }, Some(pooling)) => Variant::WithText { pooling },
            (v, _) => v,
        };
        if inputs.is_none() {
            inputs = Some(load_inputs(cfg, variant.pooling().is_some())?);
        }
        let inputs = inputs.as_ref().expect("loaded above");
        let (queries, d_tx) = queries_for(inputs, variant)?;
        if variant.pooling().is_some() && d_tx != model.cfg.d_tx {
            return Err(Error::Config(format!(
                "embeddings have d_tx {d_tx}, checkpoint expects {}",
                model.cfg.d_tx
            )));
        }
        let mut setup = cfg.setup();
        setup.input_len = model.cfg.input_len;
        let w = window_sets(&inputs.dataset, &setup, model.cfg.horizon)?;
        let mut eval_model = model;
        eval_model.cfg.variant = variant;
        let eval = evaluate_model(&eval_model, &w.test, queries.as_ref(), cfg.metric_scale, ck.train_cfg.seed, exec)?;
        let out = cfg.out_dir.join(format!("metrics_h{}.json", eval_model.cfg.horizon));
        write_metrics(&eval.report, &out)?;
        info!(
            "h={} {}: mae {:.6} wape {:.6} over {} windows",
            eval.report.horizon,
            variant.label(),
            eval.report.mae,
            eval.report.wape,
            eval.report.n_windows
        );
        reports.push(eval.report);
    }
    Ok(reports)
}

pub fn cmd_ablate(cfg: &RunConfig, exec: &Rayon) -> Result<AblationReport> {
    let strategies: Vec<PoolingStrategy> = if cfg.with_text {
        cfg.strategies.clone()
    } else {
        Vec::new()
    };
    let inputs = load_inputs(cfg, !strategies.is_empty())?;
    let report = run_ablation(
        &inputs.dataset,
        &inputs.embeddings,
        &cfg.horizons,
        &strategies,
        &cfg.setup(),
        exec,
        &mut |r| {
            info!(
                "h={} {}: mae {:.6} wape {:.6}",
                r.horizon,
                r.model_variant().label(),
                r.mae,
                r.wape
            )
        },
    )?;
    write_ablation_report(&report, &cfg.out_dir)?;
    Ok(report)
}

/// Writes `series.csv`, `texts.jsonl`, `embeddings.tfhe` and `spec.json`.
pub fn cmd_gen_synthetic(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (dataset, embeddings) = generate(&cfg.synthetic)?;
    let dir = &cfg.out_dir;
    create_dir(dir)?;
    let series = dir.join("series.csv");
    let texts = dir.join("texts.jsonl");
    let emb = dir.join("embeddings.tfhe");
    let spec = dir.join("spec.json");
    write_series_csv(&dataset, &series)?;
    write_text_sidecar(&dataset, &texts)?;
    write_embedding_file(&embeddings, &emb)?;
    let json = serde_json::to_vec_pretty(&cfg.synthetic).expect("spec serializes");
    fs::write(&spec, json).map_err(|e| Error::io(&spec, e))?;
    Ok(vec![series, texts, emb, spec])
}

pub fn cmd_grad_check(seed: u64) -> Result<Vec<GradCheck>> {
    Ok(full_suite(seed)?)
}
