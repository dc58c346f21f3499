//! Central finite-difference checks of the autodiff tape.
//!
//! Each check evaluates the loss only through forward passes and compares
//! `(f(x+h) − f(x−h)) / 2h` against the tape's gradient. The error metric is
//! norm-wise per tensor: `‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖, NORM_FLOOR)`.
//! The floor matters for exactly-zero gradients such as the attention key
//! bias, whose shift cancels inside the softmax.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{PatchConfig, WindowSample};
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::fusion::FusionConfig;
use crate::math;
use crate::model::{Model, ModelConfig, TextQueries, Variant};
use crate::params::Binder;
use crate::tape::{Activation, Tape, Var};
use crate::tensor::Tensor;
use crate::text::PoolingStrategy;
use crate::train::{chunk_gradients, LossKind};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Scalar entries compared.
    pub n_checked: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Norm-wise relative error with an absolute floor on the denominator.
pub fn relative_error(autodiff: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| math::sqrt(v.iter().map(|x| x * x).sum());
    let diff: Vec<f64> = autodiff.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(autodiff).max(norm(numeric)).max(NORM_FLOOR)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..=1.0));
    t
}

/// Checks `f` w.r.t. every input. Non-scalar outputs are contracted with a
/// fixed random weight tensor so every output element contributes.
pub fn check_op<F>(name: &str, inputs: &[Tensor], seed: u64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut weights: Option<Tensor> = None;
    let mut eval = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let out = f(tape, vars)?;
        if tape.value(out).rank() == 0 {
            return Ok(out);
        }
        let shape = tape.value(out).shape().to_vec();
        let w = weights.get_or_insert_with(|| random_tensor(&shape, &mut rng)).clone();
        let w = tape.constant(w);
        let prod = tape.mul(out, w)?;
        Ok(tape.sum(prod))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = eval(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut value_at = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let l = eval(&mut t, &vs)?;
        Ok(t.value(l).data()[0])
    };
    let mut worst: f64 = 0.0;
    let mut n = 0;
    let mut work = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (j, nj) in numeric.iter_mut().enumerate() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let plus = value_at(&work)?;
            work[i].data_mut()[j] = orig - FD_STEP;
            let minus = value_at(&work)?;
            work[i].data_mut()[j] = orig;
            *nj = (plus - minus) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(grad, &numeric));
        n += grad.len();
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_error: worst,
        n_checked: n,
    })
}

/// Every tape op on random inputs in `[-1, 1]`.
pub fn op_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| random_tensor(shape, &mut rng);
    let (a34, b45, a34b, v4, s3) = (r(&[3, 4]), r(&[4, 5]), r(&[3, 4]), r(&[4]), r(&[2, 3, 4]));
    let (g4, bias4) = (r(&[4]), r(&[4]));
    let mut out = Vec::new();
    out.push(check_op("matmul", &[a34.clone(), b45], seed, |t, v| Ok(t.matmul(v[0], v[1])?))?);
    out.push(check_op("add", &[a34.clone(), a34b.clone()], seed, |t, v| Ok(t.add(v[0], v[1])?))?);
    out.push(check_op("sub", &[a34.clone(), a34b.clone()], seed, |t, v| Ok(t.sub(v[0], v[1])?))?);
    out.push(check_op("mul", &[a34.clone(), a34b.clone()], seed, |t, v| Ok(t.mul(v[0], v[1])?))?);
    out.push(check_op("add_broadcast", &[a34.clone(), v4.clone()], seed, |t, v| {
        Ok(t.add(v[0], v[1])?)
    })?);
    out.push(check_op("mul_broadcast", &[a34.clone(), v4.clone()], seed, |t, v| {
        Ok(t.mul(v[0], v[1])?)
    })?);
    out.push(check_op("scale", core::slice::from_ref(&a34), seed, |t, v| Ok(t.scale(v[0], -1.7)))?);
    out.push(check_op("softmax_lastdim", core::slice::from_ref(&s3), seed, |t, v| Ok(t.softmax_lastdim(v[0])))?);
    out.push(check_op("layer_norm", &[a34.clone(), g4, bias4], seed, |t, v| {
        Ok(t.layer_norm(v[0], v[1], v[2], 1e-5)?)
    })?);
    for axis in 0..3 {
        out.push(check_op(&format!("mean_axis{axis}"), core::slice::from_ref(&s3), seed, move |t, v| {
            Ok(t.mean_axis(v[0], axis)?)
        })?);
    }
    out.push(check_op("relu", core::slice::from_ref(&a34), seed, |t, v| Ok(t.activation(v[0], Activation::Relu)))?);
    out.push(check_op("gelu", core::slice::from_ref(&a34), seed, |t, v| Ok(t.activation(v[0], Activation::Gelu)))?);
    out.push(check_op("abs", core::slice::from_ref(&a34), seed, |t, v| Ok(t.abs(v[0])))?);
    out.push(check_op("transpose", core::slice::from_ref(&a34), seed, |t, v| Ok(t.transpose(v[0])?))?);
    out.push(check_op("slice_cols", core::slice::from_ref(&a34), seed, |t, v| Ok(t.slice_cols(v[0], 1, 2)?))?);
    out.push(check_op("slice_rows", core::slice::from_ref(&a34), seed, |t, v| Ok(t.slice_rows(v[0], 1, 2)?))?);
    out.push(check_op("concat_cols", &[a34.clone(), a34b.clone()], seed, |t, v| {
        Ok(t.concat_cols(&[v[0], v[1]])?)
    })?);
    out.push(check_op("concat_rows", &[a34.clone(), a34b.clone()], seed, |t, v| {
        Ok(t.concat_rows(&[v[0], v[1]])?)
    })?);
    out.push(check_op("reshape", core::slice::from_ref(&a34), seed, |t, v| Ok(t.reshape(v[0], &[2, 6])?))?);
    out.push(check_op("sum", core::slice::from_ref(&a34), seed, |t, v| Ok(t.sum(v[0])))?);
    out.push(check_op("mean", core::slice::from_ref(&a34), seed, |t, v| Ok(t.mean(v[0])))?);
    for kind in [LossKind::Mse, LossKind::Mae] {
        let name = match kind {
            LossKind::Mse => "loss_mse",
            LossKind::Mae => "loss_mae",
        };
        out.push(check_op(name, &[a34.clone(), a34b.clone()], seed, move |t, v| {
            crate::train::compute_loss(t, v[0], v[1], kind)
        })?);
    }
    Ok(out)
}

/// The tiny end-to-end configuration: `d_ts = 8`, one layer, `l = 7`, `h = 3`.
pub fn tiny_model_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        input_len: 7,
        horizon: 3,
        patch: PatchConfig::default(),
        encoder: EncoderConfig {
            d_ts: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            activation: Activation::Gelu,
        },
        fusion: FusionConfig::default(),
        variant,
        d_tx: 8,
        normalize: true,
    }
}

/// Finite differences over every parameter of `cfg`'s model, one result per
/// parameter tensor. Parameters are jittered away from their structured
/// initial values (zero biases, unit gains) first.
pub fn model_check(cfg: ModelConfig, seed: u64, n_samples: usize) -> Result<Vec<GradCheck>> {
    let mut model = Model::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for t in model.store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..=0.1));
    }
    let samples: Vec<WindowSample> = (0..n_samples)
        .map(|c| {
            let x = (0..cfg.input_len).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let y = (0..cfg.horizon).map(|_| rng.random_range(-1.0..=1.0)).collect();
            WindowSample::new(c, 0, x, y)
        })
        .collect();
    let queries = TextQueries::from_vectors(
        (0..n_samples)
            .map(|_| (0..cfg.d_tx).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect(),
    );
    let refs: Vec<&WindowSample> = samples.iter().collect();
    let kind = LossKind::Mse;
    let analytic = chunk_gradients(&model, &refs, Some(&queries), kind)?.grads;

    let loss_at = |m: &Model| -> Result<f64> {
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(&m.store);
        let mut total = 0.0;
        for s in &samples {
            let out = m.forward(&mut tape, &mut binder, s, queries.get(s.channel_index))?;
            let target = m.model_target(s);
            total += tape
                .value(out)
                .data()
                .iter()
                .zip(&target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>();
        }
        Ok(total)
    };

    let mut out = Vec::new();
    let ids: Vec<_> = model.store.ids().collect();
    for (id, grad) in ids.into_iter().zip(&analytic) {
        let mut numeric = vec![0.0; grad.len()];
        for (j, nj) in numeric.iter_mut().enumerate() {
            let orig = model.store.get(id).data()[j];
            model.store.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let plus = loss_at(&model)?;
            model.store.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let minus = loss_at(&model)?;
            model.store.get_mut(id).data_mut()[j] = orig;
            *nj = (plus - minus) / (2.0 * FD_STEP);
        }
        out.push(GradCheck {
            name: format!("{}:{}", cfg.variant.label(), model.store.name(id)),
            max_rel_error: relative_error(grad.data(), &numeric),
            n_checked: grad.len(),
        });
    }
    Ok(out)
}

/// Ops plus both model variants on the tiny configuration.
pub fn full_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut all = op_suite(seed)?;
    for variant in [
        Variant::WithoutText,
        Variant::WithText {
            pooling: PoolingStrategy::Mean,
        },
    ] {
        all.extend(model_check(tiny_model_config(variant), seed, 3)?);
    }
    Ok(all)
}
