//! The two experiment arms as one model type: patch encoder plus either the
//! cross-attention text head or the flatten (series-only) head.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{patchify, NormStats, PatchConfig, WindowSample};
use crate::encoder::{encode_series, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::fusion::{
    cross_attention, flatten_head, forecast_head, BaselineParams, FusionConfig, FusionParams,
};
use crate::params::{Binder, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::text::{pool, PoolingStrategy, TokenEmbeddingSet};

/// Which experiment arm a model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Variant {
    WithText { pooling: PoolingStrategy },
    WithoutText,
}

impl Variant {
    pub fn pooling(self) -> Option<PoolingStrategy> {
        match self {
            Variant::WithText { pooling } => Some(pooling),
            Variant::WithoutText => None,
        }
    }

    /// Short label such as `wo` or `wt-mean`.
    pub fn label(self) -> alloc::string::String {
        match self {
            Variant::WithText { pooling } => format!("wt-{pooling}"),
            Variant::WithoutText => "wo".into(),
        }
    }
}

/// Everything needed to rebuild a model's architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ModelConfig {
    pub input_len: usize,
    pub horizon: usize,
    pub patch: PatchConfig,
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub variant: Variant,
    /// Text embedding width; ignored without text.
    pub d_tx: usize,
    /// Per-window instance normalization.
    pub normalize: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 {
            return Err(Error::config("data.input_len", "must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizons", "must be positive"));
        }
        self.patch.validate(self.input_len)?;
        self.encoder.validate()?;
        if matches!(self.variant, Variant::WithText { .. }) {
            self.fusion.validate(self.encoder.d_ts)?;
            if self.d_tx == 0 {
                return Err(Error::config("d_tx", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        self.patch.num_patches(self.input_len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Fusion(FusionParams),
    Flatten(BaselineParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub head: Head,
}

impl Model {
    /// Seeded initialization. Parameters are registered in a fixed order, so
    /// the same `(cfg, seed)` always yields bit-identical weights.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = cfg.num_patches();
        let encoder = EncoderParams::init(&cfg.encoder, &cfg.patch, p, &mut store, &mut rng);
        let head = match cfg.variant {
            Variant::WithText { .. } => Head::Fusion(FusionParams::init(
                &cfg.fusion,
                cfg.d_tx,
                cfg.encoder.d_ts,
                cfg.horizon,
                &mut store,
                &mut rng,
            )),
            Variant::WithoutText => Head::Flatten(BaselineParams::init(
                p,
                cfg.encoder.d_ts,
                cfg.horizon,
                &mut store,
                &mut rng,
            )),
        };
        Ok(Model {
            cfg,
            store,
            encoder,
            head,
        })
    }

    fn stats(&self, sample: &WindowSample) -> Option<NormStats> {
        self.cfg.normalize.then_some(sample.norm_stats)
    }

    /// Input window on the model scale.
    pub fn model_input(&self, sample: &WindowSample) -> Vec<f64> {
        match self.stats(sample) {
            Some(s) => sample.x.iter().map(|&v| s.normalize(v)).collect(),
            None => sample.x.clone(),
        }
    }

    /// Target on the model scale (the scale the loss is computed on).
    pub fn model_target(&self, sample: &WindowSample) -> Vec<f64> {
        match self.stats(sample) {
            Some(s) => sample.y.iter().map(|&v| s.normalize(v)).collect(),
            None => sample.y.clone(),
        }
    }

    /// Maps a model-scale forecast back to the raw series scale.
    pub fn to_raw(&self, sample: &WindowSample, pred: &[f64]) -> Vec<f64> {
        match self.stats(sample) {
            Some(s) => pred.iter().map(|&v| s.denormalize(v)).collect(),
            None => pred.to_vec(),
        }
    }

    fn check_query(&self, query: Option<&[f64]>) -> Result<()> {
        match (&self.head, query) {
            (Head::Fusion(_), Some(q)) if q.len() == self.cfg.d_tx => Ok(()),
            (Head::Fusion(_), Some(q)) => Err(Error::Text(format!(
                "query width {} does not match model d_tx {}",
                q.len(),
                self.cfg.d_tx
            ))),
            (Head::Fusion(_), None) => Err(Error::Text("with-text model needs a text query".into())),
            (Head::Flatten(_), _) => Ok(()),
        }
    }

    /// Records a forward pass on `tape` and returns the `1 × h` forecast on
    /// the model scale. `query` is the pooled text vector (ignored by the
    /// flatten head).
    pub fn forward(
        &self,
        tape: &mut Tape,
        binder: &mut Binder<'_>,
        sample: &WindowSample,
        query: Option<&[f64]>,
    ) -> Result<Var> {
        self.check_query(query)?;
        if sample.x.len() != self.cfg.input_len {
            return Err(Error::Data(format!(
                "window has {} inputs, model expects {}",
                sample.x.len(),
                self.cfg.input_len
            )));
        }
        let patches = patchify(&self.model_input(sample), &self.cfg.patch)?;
        let patches = tape.constant(patches);
        let z_ts = encode_series(tape, binder, &self.encoder, &self.cfg.encoder, patches)?;
        match &self.head {
            Head::Fusion(fp) => {
                let q = query.expect("checked");
                let z_tx = tape.constant(Tensor::matrix(1, q.len(), q.to_vec())?);
                let fused = cross_attention(tape, binder, fp, z_tx, z_ts)?;
                forecast_head(tape, binder, fp, fused.z)
            }
            Head::Flatten(bp) => flatten_head(tape, binder, bp, z_ts),
        }
    }

    /// Forecast on the model scale without recording gradients.
    pub fn predict_model_scale(&self, sample: &WindowSample, query: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(&self.store);
        let out = self.forward(&mut tape, &mut binder, sample, query)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Raw-scale forecast: normalize, patch, encode, fuse, head, de-normalize.
    pub fn predict(&self, sample: &WindowSample, query: Option<&[f64]>) -> Result<Vec<f64>> {
        let pred = self.predict_model_scale(sample, query)?;
        Ok(self.to_raw(sample, &pred))
    }

    /// Text-conditioned forecast for one window.
    pub fn forecast_with_text(
        &self,
        sample: &WindowSample,
        embedding: &TokenEmbeddingSet,
    ) -> Result<Vec<f64>> {
        let Variant::WithText { pooling } = self.cfg.variant else {
            return Err(Error::Text("model was built without a text head".into()));
        };
        self.forecast_with_strategy(sample, embedding, pooling)
    }

    /// Like [`forecast_with_text`](Self::forecast_with_text) with an explicit
    /// pooling strategy.
    pub fn forecast_with_strategy(
        &self,
        sample: &WindowSample,
        embedding: &TokenEmbeddingSet,
        strategy: PoolingStrategy,
    ) -> Result<Vec<f64>> {
        let q = pool(embedding, strategy)?;
        self.predict(sample, Some(&q))
    }

    /// Series-only forecast. Fails on a with-text model.
    pub fn forecast_without_text(&self, sample: &WindowSample) -> Result<Vec<f64>> {
        match self.head {
            Head::Flatten(_) => self.predict(sample, None),
            Head::Fusion(_) => Err(Error::Text("with-text model needs a text query".into())),
        }
    }
}

/// Pooled query vectors indexed by dataset channel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TextQueries {
    queries: Vec<Vec<f64>>,
}

impl TextQueries {
    pub fn from_vectors(queries: Vec<Vec<f64>>) -> Self {
        TextQueries { queries }
    }

    /// Pools each channel's set, in channel order.
    pub fn pooled(sets: &[&TokenEmbeddingSet], strategy: PoolingStrategy) -> Result<Self> {
        let queries = sets
            .iter()
            .map(|s| pool(s, strategy))
            .collect::<Result<Vec<_>>>()?;
        Ok(TextQueries { queries })
    }

    pub fn get(&self, channel: usize) -> Option<&[f64]> {
        self.queries.get(channel).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::hash_embed_text;

    pub(crate) fn tiny_cfg(variant: Variant, horizon: usize) -> ModelConfig {
        ModelConfig {
            input_len: 7,
            horizon,
            patch: PatchConfig::default(),
            encoder: EncoderConfig {
                d_ts: 8,
                n_layers: 1,
                n_heads: 2,
                d_ff: 16,
                ..Default::default()
            },
            fusion: FusionConfig::default(),
            variant,
            d_tx: 6,
            normalize: true,
        }
    }

    fn sample(ch: usize) -> WindowSample {
        let x = [1.0, 1.5, 0.5, 2.0, 2.5, 2.0, 3.0];
        WindowSample::new(ch, 0, x.to_vec(), alloc::vec![0.0; 3])
    }

    #[test]
    fn text_changes_forecast() {
        let m = Model::new(tiny_cfg(Variant::WithText { pooling: PoolingStrategy::Mean }, 3), 1).unwrap();
        let a = hash_embed_text("a", "alpha beta", 6, 0).unwrap();
        let b = hash_embed_text("b", "gamma delta", 6, 0).unwrap();
        let ya = m.forecast_with_text(&sample(0), &a).unwrap();
        let yb = m.forecast_with_text(&sample(1), &b).unwrap();
        assert_eq!(ya.len(), 3);
        assert_ne!(ya, yb);
    }

    #[test]
    fn without_text_is_channel_blind() {
        let m = Model::new(tiny_cfg(Variant::WithoutText, 3), 1).unwrap();
        let ya = m.forecast_without_text(&sample(0)).unwrap();
        let yb = m.forecast_without_text(&sample(5)).unwrap();
        assert_eq!(ya.len(), 3);
        assert_eq!(ya, yb);
    }

    #[test]
    fn query_required_for_text_model() {
        let m = Model::new(tiny_cfg(Variant::WithText { pooling: PoolingStrategy::Mean }, 3), 1).unwrap();
        assert!(m.predict(&sample(0), None).is_err());
        assert!(m.predict(&sample(0), Some(&[0.0; 5])).is_err());
        assert!(m.forecast_without_text(&sample(0)).is_err());
    }

    #[test]
    fn same_seed_same_model() {
        let cfg = tiny_cfg(Variant::WithoutText, 3);
        assert_eq!(Model::new(cfg, 3).unwrap(), Model::new(cfg, 3).unwrap());
        assert_ne!(Model::new(cfg, 3).unwrap().store, Model::new(cfg, 4).unwrap().store);
    }
}
