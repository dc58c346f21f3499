//! Channel-independent patch transformer encoder.
//!
//! A window's patches are linearly projected to `d_ts`, offset by a learned
//! positional table, and passed through `n_layers` pre-norm blocks
//! (multi-head self-attention then feed-forward, each with a residual).
//! The `p × d_ts` output is the key/value sequence for fusion.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::params::{Binder, ParamId, ParamStore};
use crate::tape::{Activation, Tape, Var};
use crate::data::PatchConfig;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EncoderConfig {
    pub d_ts: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_ts: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            activation: Activation::Gelu,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("encoder.d_ts", self.d_ts),
            ("encoder.n_heads", self.n_heads),
            ("encoder.d_ff", self.d_ff),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !self.d_ts.is_multiple_of(self.n_heads) {
            return Err(Error::config(
                "encoder.n_heads",
                format!("d_ts = {} is not divisible by {} heads", self.d_ts, self.n_heads),
            ));
        }
        Ok(())
    }

    /// Closed-form learnable scalar count for `max_patches` positions.
    pub fn param_count(&self, patch: &PatchConfig, max_patches: usize) -> usize {
        let d = self.d_ts;
        let proj = patch.patch_len * d + d;
        let pos = max_patches * d;
        let attn = 4 * (d * d + d);
        let norms = 2 * 2 * d;
        let ff = d * self.d_ff + self.d_ff + self.d_ff * d + d;
        proj + pos + self.n_layers * (attn + norms + ff)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
}

/// Handles into a [`ParamStore`] for every encoder weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub patch_w: ParamId,
    pub patch_b: ParamId,
    pub pos: ParamId,
    pub max_patches: usize,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    /// Registers freshly initialized encoder weights in `store`.
    /// Matrices are uniform in `±1/√fan_in`; biases zero; norm gains one.
    pub fn init(
        cfg: &EncoderConfig,
        patch: &PatchConfig,
        max_patches: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = cfg.d_ts;
        let patch_w = store.push_uniform("enc.patch.w", patch.patch_len, &[patch.patch_len, d], rng);
        let patch_b = store.push_zeros("enc.patch.b", &[d]);
        let pos = store.push_uniform("enc.pos", d, &[max_patches, d], rng);
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let n = |s: &str| format!("enc.layer{i}.{s}");
                LayerParams {
                    ln1_gain: store.push_ones(&n("ln1.gain"), &[d]),
                    ln1_bias: store.push_zeros(&n("ln1.bias"), &[d]),
                    w_q: store.push_uniform(&n("attn.w_q"), d, &[d, d], rng),
                    b_q: store.push_zeros(&n("attn.b_q"), &[d]),
                    w_k: store.push_uniform(&n("attn.w_k"), d, &[d, d], rng),
                    b_k: store.push_zeros(&n("attn.b_k"), &[d]),
                    w_v: store.push_uniform(&n("attn.w_v"), d, &[d, d], rng),
                    b_v: store.push_zeros(&n("attn.b_v"), &[d]),
                    w_o: store.push_uniform(&n("attn.w_o"), d, &[d, d], rng),
                    b_o: store.push_zeros(&n("attn.b_o"), &[d]),
                    ln2_gain: store.push_ones(&n("ln2.gain"), &[d]),
                    ln2_bias: store.push_zeros(&n("ln2.bias"), &[d]),
                    ff_w1: store.push_uniform(&n("ff.w1"), d, &[d, cfg.d_ff], rng),
                    ff_b1: store.push_zeros(&n("ff.b1"), &[cfg.d_ff]),
                    ff_w2: store.push_uniform(&n("ff.w2"), cfg.d_ff, &[cfg.d_ff, d], rng),
                    ff_b2: store.push_zeros(&n("ff.b2"), &[d]),
                }
            })
            .collect();
        EncoderParams {
            patch_w,
            patch_b,
            pos,
            max_patches,
            layers,
        }
    }
}

/// Encoder-only parameter set, seeded.
pub fn init_params(
    cfg: &EncoderConfig,
    patch: &PatchConfig,
    max_patches: usize,
    seed: u64,
) -> (ParamStore, EncoderParams) {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let params = EncoderParams::init(cfg, patch, max_patches, &mut store, &mut rng);
    (store, params)
}

/// Scaled dot-product attention over heads: `softmax(q·kᵀ/√d_head)·v`
/// per head, heads concatenated along columns. Also returns the first
/// head's weight matrix.
pub(crate) fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    n_heads: usize,
) -> Result<(Var, Var)> {
    let d = tape.value(q).last_dim();
    let dh = d / n_heads;
    let scale = 1.0 / math::sqrt(dh as f64);
    let mut heads = Vec::with_capacity(n_heads);
    let mut first_weights = None;
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, dh)?,
                tape.slice_cols(k, h * dh, dh)?,
                tape.slice_cols(v, h * dh, dh)?,
            )
        };
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_lastdim(scores);
        first_weights.get_or_insert(weights);
        heads.push(tape.matmul(weights, vh)?);
    }
    let out = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    Ok((out, first_weights.expect("at least one head")))
}

/// Encodes a `p × patch_len` patch matrix into `p × d_ts`.
pub fn encode_series(
    tape: &mut Tape,
    binder: &mut Binder<'_>,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    patches: Var,
) -> Result<Var> {
    let (p, _) = tape.value(patches).dims2("encode_series")?;
    if p > params.max_patches {
        return Err(Error::Data(format!(
            "{p} patches exceed the positional table of {}",
            params.max_patches
        )));
    }
    let w = binder.var(tape, params.patch_w);
    let b = binder.var(tape, params.patch_b);
    let mut h = tape.linear(patches, w, b)?;
    let pos = binder.var(tape, params.pos);
    let pos = if p == params.max_patches {
        pos
    } else {
        tape.slice_rows(pos, 0, p)?
    };
    h = tape.add(h, pos)?;

    for layer in &params.layers {
        let mut pv = |id| binder.var(tape, id);
        let (g1, b1) = (pv(layer.ln1_gain), pv(layer.ln1_bias));
        let (wq, bq, wk, bk) = (pv(layer.w_q), pv(layer.b_q), pv(layer.w_k), pv(layer.b_k));
        let (wv, bv, wo, bo) = (pv(layer.w_v), pv(layer.b_v), pv(layer.w_o), pv(layer.b_o));
        let (g2, b2) = (pv(layer.ln2_gain), pv(layer.ln2_bias));
        let (fw1, fb1, fw2, fb2) = (pv(layer.ff_w1), pv(layer.ff_b1), pv(layer.ff_w2), pv(layer.ff_b2));

        let a = tape.layer_norm(h, g1, b1, LAYER_NORM_EPS)?;
        let q = tape.linear(a, wq, bq)?;
        let k = tape.linear(a, wk, bk)?;
        let v = tape.linear(a, wv, bv)?;
        let (attn, _) = multi_head_attention(tape, q, k, v, cfg.n_heads)?;
        let attn = tape.linear(attn, wo, bo)?;
        h = tape.add(h, attn)?;

        let a = tape.layer_norm(h, g2, b2, LAYER_NORM_EPS)?;
        let f = tape.linear(a, fw1, fb1)?;
        let f = tape.activation(f, cfg.activation);
        let f = tape.linear(f, fw2, fb2)?;
        h = tape.add(h, f)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::patchify;
    use crate::tensor::Tensor;

    fn small() -> (EncoderConfig, PatchConfig) {
        (
            EncoderConfig {
                d_ts: 16,
                n_layers: 2,
                n_heads: 2,
                d_ff: 32,
                activation: Activation::Gelu,
            },
            PatchConfig::default(),
        )
    }

    fn encode(store: &ParamStore, params: &EncoderParams, cfg: &EncoderConfig, patches: Tensor) -> Tensor {
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(store);
        let x = tape.constant(patches);
        let out = encode_series(&mut tape, &mut binder, params, cfg, x).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let (cfg, patch) = small();
        let (a, _) = init_params(&cfg, &patch, 3, 11);
        let (b, _) = init_params(&cfg, &patch, 3, 11);
        let (c, _) = init_params(&cfg, &patch, 3, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_bounds_and_biases() {
        let (cfg, patch) = small();
        let (store, params) = init_params(&cfg, &patch, 3, 5);
        let bound = 1.0 / libm::sqrt(16.0);
        let wq = store.get(params.layers[0].w_q);
        assert!(wq.data().iter().all(|v| v.abs() <= bound));
        assert!(store.get(params.layers[1].b_o).data().iter().all(|&v| v == 0.0));
        assert!(store.get(params.layers[0].ln1_gain).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn param_count_matches_hand_count() {
        let (cfg, patch) = small();
        let (store, _) = init_params(&cfg, &patch, 3, 0);
        // projection 4*16+16, positions 3*16,
        // per layer: q/k/v/o 4*(256+16), two norms 4*16, ff 16*32+32+32*16+16
        let hand = (64 + 16) + 48 + 2 * (4 * 272 + 64 + (512 + 32 + 512 + 16));
        assert_eq!(hand, 4576);
        assert_eq!(store.numel(), hand);
        assert_eq!(cfg.param_count(&patch, 3), hand);
    }

    #[test]
    fn output_shape_for_defaults() {
        let cfg = EncoderConfig::default();
        let patch = PatchConfig::default();
        let (store, params) = init_params(&cfg, &patch, 3, 1);
        let x: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
        let out = encode(&store, &params, &cfg, patchify(&x, &patch).unwrap());
        assert_eq!(out.shape(), &[3, 64]);
        assert!(out.is_finite());
    }

    #[test]
    fn zero_layers_is_projection_plus_positions() {
        let cfg = EncoderConfig {
            n_layers: 0,
            ..small().0
        };
        let patch = PatchConfig::default();
        let (store, params) = init_params(&cfg, &patch, 3, 2);
        let patches = patchify(&[0.5, -1.0, 2.0, 0.0, 1.5, 3.0, -0.5], &patch).unwrap();
        let out = encode(&store, &params, &cfg, patches.clone());

        let w = store.get(params.patch_w);
        let pos = store.get(params.pos);
        for i in 0..3 {
            for j in 0..16 {
                let mut v = pos.data()[i * 16 + j];
                for k in 0..4 {
                    v += patches.data()[i * 4 + k] * w.data()[k * 16 + j];
                }
                assert!((out.data()[i * 16 + j] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn positional_table_breaks_permutation_equivariance() {
        let (cfg, patch) = small();
        let (store, params) = init_params(&cfg, &patch, 3, 3);
        let rows = [[0.1, 0.2, 0.3, 0.4], [1.0, 0.0, -1.0, 0.5], [0.0, 0.0, 2.0, 1.0]];
        let swapped = [rows[1], rows[0], rows[2]];
        let a = encode(&store, &params, &cfg, Tensor::from_rows(&rows).unwrap());
        let b = encode(&store, &params, &cfg, Tensor::from_rows(&swapped).unwrap());
        assert_ne!(a.row(0), b.row(1));
    }

    #[test]
    fn equivariant_without_positions_and_layers() {
        let cfg = EncoderConfig {
            n_layers: 0,
            ..small().0
        };
        let patch = PatchConfig::default();
        let (mut store, params) = init_params(&cfg, &patch, 3, 3);
        store.get_mut(params.pos).data_mut().fill(0.0);
        let rows = [[0.1, 0.2, 0.3, 0.4], [1.0, 0.0, -1.0, 0.5], [0.0, 0.0, 2.0, 1.0]];
        let perm = [2, 0, 1];
        let permuted: Vec<_> = perm.iter().map(|&i| rows[i]).collect();
        let a = encode(&store, &params, &cfg, Tensor::from_rows(&rows).unwrap());
        let b = encode(&store, &params, &cfg, Tensor::from_rows(&permuted).unwrap());
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(b.row(dst), a.row(src));
        }
    }

    #[test]
    fn too_many_patches_is_an_error() {
        let (cfg, patch) = small();
        let (store, params) = init_params(&cfg, &patch, 2, 0);
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(&store);
        let x = tape.constant(Tensor::zeros(&[3, 4]));
        assert!(encode_series(&mut tape, &mut binder, &params, &cfg, x).is_err());
    }
}
