//! Cross-attention fusion of the pooled text query with the patch
//! sequence, the feed-forward forecast head, and the text-free flatten head.

use alloc::format;

use rand_chacha::ChaCha8Rng;

use crate::encoder::multi_head_attention;
use crate::error::{Error, Result};
use crate::params::{Binder, ParamId, ParamStore};
use crate::tape::{Activation, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FusionConfig {
    /// Fused width; `None` means `d_ts`.
    pub d: Option<usize>,
    pub n_heads: usize,
    /// Head MLP hidden width; `None` means `2·d`.
    pub head_hidden: Option<usize>,
    pub activation: Activation,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            d: None,
            n_heads: 1,
            head_hidden: None,
            activation: Activation::Gelu,
        }
    }
}

impl FusionConfig {
    pub fn width(&self, d_ts: usize) -> usize {
        self.d.unwrap_or(d_ts)
    }

    pub fn hidden(&self, d_ts: usize) -> usize {
        self.head_hidden.unwrap_or(2 * self.width(d_ts))
    }

    pub fn validate(&self, d_ts: usize) -> Result<()> {
        let d = self.width(d_ts);
        if d == 0 {
            return Err(Error::config("fusion.d", "must be positive"));
        }
        if self.n_heads == 0 || !d.is_multiple_of(self.n_heads) {
            return Err(Error::config(
                "fusion.n_heads",
                format!("fused width {d} is not divisible by {} heads", self.n_heads),
            ));
        }
        if self.hidden(d_ts) == 0 {
            return Err(Error::config("fusion.head_hidden", "must be positive"));
        }
        Ok(())
    }
}

/// Query/key/value projections plus the forecast MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub head_w1: ParamId,
    pub head_b1: ParamId,
    pub head_w2: ParamId,
    pub head_b2: ParamId,
    pub n_heads: usize,
    pub activation: Activation,
}

impl FusionParams {
    pub fn init(
        cfg: &FusionConfig,
        d_tx: usize,
        d_ts: usize,
        horizon: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = cfg.width(d_ts);
        let hid = cfg.hidden(d_ts);
        FusionParams {
            w_q: store.push_uniform("fusion.w_q", d_tx, &[d_tx, d], rng),
            b_q: store.push_zeros("fusion.b_q", &[d]),
            w_k: store.push_uniform("fusion.w_k", d_ts, &[d_ts, d], rng),
            b_k: store.push_zeros("fusion.b_k", &[d]),
            w_v: store.push_uniform("fusion.w_v", d_ts, &[d_ts, d], rng),
            b_v: store.push_zeros("fusion.b_v", &[d]),
            head_w1: store.push_uniform("head.w1", d, &[d, hid], rng),
            head_b1: store.push_zeros("head.b1", &[hid]),
            head_w2: store.push_uniform("head.w2", hid, &[hid, horizon], rng),
            head_b2: store.push_zeros("head.b2", &[horizon]),
            n_heads: cfg.n_heads,
            activation: cfg.activation,
        }
    }
}

/// Output of [`cross_attention`].
#[derive(Debug, Clone, Copy)]
pub struct Fused {
    /// `1 × d`
    pub z: Var,
    /// `1 × p` attention weights (first head when multi-head).
    pub weights: Var,
}

/// `z = softmax(q·Kᵀ/√d)·V` with `q = z_tx·W_q`, `K = z_ts·W_k`, `V = z_ts·W_v`.
///
/// `z_tx` is `1 × d_tx`, `z_ts` is `p × d_ts`.
pub fn cross_attention(
    tape: &mut Tape,
    binder: &mut Binder<'_>,
    params: &FusionParams,
    z_tx: Var,
    z_ts: Var,
) -> Result<Fused> {
    let (w_q, b_q) = (binder.var(tape, params.w_q), binder.var(tape, params.b_q));
    let (w_k, b_k) = (binder.var(tape, params.w_k), binder.var(tape, params.b_k));
    let (w_v, b_v) = (binder.var(tape, params.w_v), binder.var(tape, params.b_v));
    let q = tape.linear(z_tx, w_q, b_q)?;
    let k = tape.linear(z_ts, w_k, b_k)?;
    let v = tape.linear(z_ts, w_v, b_v)?;
    let (z, weights) = multi_head_attention(tape, q, k, v, params.n_heads)?;
    Ok(Fused { z, weights })
}

/// Feed-forward map from the fused `1 × d` vector to `1 × h`.
pub fn forecast_head(
    tape: &mut Tape,
    binder: &mut Binder<'_>,
    params: &FusionParams,
    z: Var,
) -> Result<Var> {
    let (w1, b1) = (binder.var(tape, params.head_w1), binder.var(tape, params.head_b1));
    let (w2, b2) = (binder.var(tape, params.head_w2), binder.var(tape, params.head_b2));
    let hidden = tape.linear(z, w1, b1)?;
    let hidden = tape.activation(hidden, params.activation);
    Ok(tape.linear(hidden, w2, b2)?)
}

/// Linear head over the flattened `p·d_ts` encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl BaselineParams {
    pub fn init(
        p: usize,
        d_ts: usize,
        horizon: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        BaselineParams {
            w: store.push_uniform("flatten.w", p * d_ts, &[p * d_ts, horizon], rng),
            b: store.push_zeros("flatten.b", &[horizon]),
        }
    }
}

pub fn flatten_head(
    tape: &mut Tape,
    binder: &mut Binder<'_>,
    params: &BaselineParams,
    z_ts: Var,
) -> Result<Var> {
    let n = tape.value(z_ts).len();
    let flat = tape.reshape(z_ts, &[1, n])?;
    let (w, b) = (binder.var(tape, params.w), binder.var(tape, params.b));
    Ok(tape.linear(flat, w, b)?)
}
