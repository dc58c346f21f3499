//! Run configuration: strict JSON with defaults and key-path errors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tfhts_core::ablation::ExperimentSetup;
use tfhts_core::data::{PatchConfig, SplitRatios};
use tfhts_core::encoder::EncoderConfig;
use tfhts_core::eval::MetricScale;
use tfhts_core::fusion::FusionConfig;
use tfhts_core::model::Variant;
use tfhts_core::synthetic::SyntheticSpec;
use tfhts_core::text::PoolingStrategy;
use tfhts_core::train::TrainConfig;

use crate::error::{Error, Result};

/// Where the series and texts come from. Without `series`, the run uses
/// the synthetic benchmark described by [`RunConfig::synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub series: Option<PathBuf>,
    pub texts: Option<PathBuf>,
    /// Binary token-embedding file. When absent, texts are hash-embedded.
    pub embeddings: Option<PathBuf>,
    /// Width of hash embeddings for texts without an embedding file.
    pub hash_d_tx: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            series: None,
            texts: None,
            embeddings: None,
            hash_d_tx: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed: parameter initialization and shuffling for every arm.
    pub seed: u64,
    pub input_len: usize,
    pub horizons: Vec<usize>,
    pub window_stride: usize,
    pub split: SplitRatios,
    pub patch: PatchConfig,
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    /// Whether `train` and `evaluate` use the text tower.
    pub with_text: bool,
    /// Pooling for single-model runs.
    pub pooling: PoolingStrategy,
    /// Pooling strategies compared by `ablate`.
    pub strategies: Vec<PoolingStrategy>,
    pub normalize: bool,
    pub metric_scale: MetricScale,
    pub data: DataConfig,
    pub synthetic: SyntheticSpec,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            input_len: 7,
            horizons: vec![7],
            window_stride: 1,
            split: SplitRatios::default(),
            patch: PatchConfig::default(),
            encoder: EncoderConfig::default(),
            fusion: FusionConfig::default(),
            train: TrainConfig::default(),
            with_text: true,
            pooling: PoolingStrategy::Mean,
            strategies: PoolingStrategy::ALL.to_vec(),
            normalize: true,
            metric_scale: MetricScale::Normalized,
            data: DataConfig::default(),
            synthetic: SyntheticSpec::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn invalid(key: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {reason}"))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 {
            return Err(invalid("input_len", "must be positive"));
        }
        if self.horizons.is_empty() {
            return Err(invalid("horizons", "must be nonempty"));
        }
        if let Some(i) = self.horizons.iter().position(|&h| h == 0) {
            return Err(invalid(&format!("horizons[{i}]"), "must be positive"));
        }
        if self.window_stride == 0 {
            return Err(invalid("window_stride", "must be positive"));
        }
        if self.data.hash_d_tx == 0 {
            return Err(invalid("data.hash_d_tx", "must be positive"));
        }
        if self.data.texts.is_some() && self.data.series.is_none() {
            return Err(invalid("data.texts", "requires data.series"));
        }
        self.split.validate()?;
        self.patch.validate(self.input_len)?;
        self.encoder.validate()?;
        self.fusion.validate(self.encoder.d_ts)?;
        self.train.validate()?;
        if self.data.series.is_none() {
            self.synthetic.validate()?;
        }
        Ok(())
    }

    /// Shared settings for every arm, with the root seed applied.
    pub fn setup(&self) -> ExperimentSetup {
        ExperimentSetup {
            input_len: self.input_len,
            window_stride: self.window_stride,
            split: self.split,
            patch: self.patch,
            encoder: self.encoder,
            fusion: self.fusion,
            normalize: self.normalize,
            scale: self.metric_scale,
            train: TrainConfig {
                seed: self.seed,
                ..self.train
            },
        }
    }

    pub fn variant(&self) -> Variant {
        if self.with_text {
            Variant::WithText { pooling: self.pooling }
        } else {
            Variant::WithoutText
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a config document. Errors name the offending key.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
