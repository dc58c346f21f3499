//! Text-conditioned synthetic benchmark with a Bayes-optimal oracle.
//!
//! Every period of a channel is the same ramp followed by a continuation
//! whose slope depends on the channel's hidden regime. Input windows aligned
//! to period starts therefore carry no regime information; only the channel
//! text (`"regime <k> channel <c>"`) does.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{instance_normalize, RawDataset};
use crate::error::{Error, Result};
use crate::eval::MetricScale;
use crate::text::{hash_embed_text, TokenEmbeddingSet};

/// Draws used by [`oracle_mae`].
pub const ORACLE_DRAWS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SyntheticSpec {
    pub n_channels: usize,
    pub n_regimes: usize,
    pub input_len: usize,
    pub horizon: usize,
    /// One continuation slope per regime.
    pub slopes: Vec<f64>,
    pub noise_sigma: f64,
    /// Periods of length `input_len + horizon` per channel.
    pub periods: usize,
    pub seed: u64,
    /// Width of the hash text embeddings.
    pub d_tx: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_channels: 40,
            n_regimes: 4,
            input_len: 7,
            horizon: 7,
            slopes: alloc::vec![-1.0, -0.33, 0.33, 1.0],
            noise_sigma: 0.02,
            periods: 40,
            seed: 7,
            d_tx: 32,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, r: String| Err(Error::config(format!("synthetic.{k}"), r));
        if self.n_regimes == 0 || self.n_regimes > self.n_channels {
            return bad("n_regimes", format!("must be in 1..={}", self.n_channels));
        }
        if self.slopes.len() != self.n_regimes {
            return bad(
                "slopes",
                format!("expected {} slopes, got {}", self.n_regimes, self.slopes.len()),
            );
        }
        for (i, a) in self.slopes.iter().enumerate() {
            if !a.is_finite() || self.slopes[..i].contains(a) {
                return bad("slopes", "slopes must be finite and pairwise distinct".into());
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", "must be finite and non-negative".into());
        }
        if self.input_len == 0 || self.horizon == 0 || self.periods == 0 || self.d_tx == 0 {
            return bad("input_len", "window lengths, periods and d_tx must be positive".into());
        }
        Ok(())
    }

    pub fn period_len(&self) -> usize {
        self.input_len + self.horizon
    }

    pub fn regime_of(&self, channel: usize) -> usize {
        channel % self.n_regimes
    }

    pub fn channel_id(channel: usize) -> String {
        format!("ch{channel:03}")
    }

    pub fn text(&self, channel: usize) -> String {
        format!("regime {} channel {channel}", self.regime_of(channel))
    }

    /// Noise-free ramp: `0, 1/l, …, (l−1)/l`.
    pub fn ramp(&self) -> Vec<f64> {
        let l = self.input_len as f64;
        (0..self.input_len).map(|j| j as f64 / l).collect()
    }

    /// Noise-free continuation of regime `k`: `(l−1)/l + j·β_k/h`, `j = 1..=h`.
    pub fn continuation(&self, k: usize) -> Vec<f64> {
        let l = self.input_len as f64;
        let h = self.horizon as f64;
        let last = (l - 1.0) / l;
        (1..=self.horizon)
            .map(|j| last + j as f64 * self.slopes[k] / h)
            .collect()
    }

    /// Per-step forecast that minimizes expected absolute error when the
    /// regime is unknown: the weighted median over regimes.
    pub fn regime_marginal_forecast(&self) -> Vec<f64> {
        let mut weights = alloc::vec![0.0; self.n_regimes];
        for c in 0..self.n_channels {
            weights[self.regime_of(c)] += 1.0 / self.n_channels as f64;
        }
        let conts: Vec<Vec<f64>> = (0..self.n_regimes).map(|k| self.continuation(k)).collect();
        (0..self.horizon)
            .map(|j| {
                let pts: Vec<(f64, f64)> = conts.iter().zip(&weights).map(|(c, &w)| (c[j], w)).collect();
                weighted_median(pts)
            })
            .collect()
    }
}

/// Median of a discrete distribution; at an exact half-mass split the
/// midpoint of the two middle support points.
fn weighted_median(mut pts: Vec<(f64, f64)>) -> f64 {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cum = 0.0;
    for i in 0..pts.len() {
        cum += pts[i].1;
        if (cum - 0.5).abs() < 1e-12 && i + 1 < pts.len() {
            return 0.5 * (pts[i].0 + pts[i + 1].0);
        }
        if cum > 0.5 {
            return pts[i].0;
        }
    }
    pts.last().map_or(0.0, |p| p.0)
}

/// Synthetic dataset and its hash text embeddings.
///
/// Each embedding set flags its last token as the cls position, so all
/// three pooling strategies are available on this benchmark.
pub fn generate(spec: &SyntheticSpec) -> Result<(RawDataset, Vec<TokenEmbeddingSet>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Data(format!("{e}")))?;
    let n_rows = spec.periods * spec.period_len();
    let ramp = spec.ramp();
    let mut series = Vec::with_capacity(spec.n_channels);
    let mut texts = BTreeMap::new();
    let mut embeddings = Vec::with_capacity(spec.n_channels);
    let mut ids = Vec::with_capacity(spec.n_channels);
    for c in 0..spec.n_channels {
        let cont = spec.continuation(spec.regime_of(c));
        let mut col = Vec::with_capacity(n_rows);
        for _ in 0..spec.periods {
            for &v in ramp.iter().chain(&cont) {
                let e = if spec.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                col.push(v + e);
            }
        }
        series.push(col);
        let id = SyntheticSpec::channel_id(c);
        let text = spec.text(c);
        let mut set = hash_embed_text(&id, &text, spec.d_tx, spec.seed)?;
        set.cls_index = Some(set.n_tokens() - 1);
        embeddings.push(set);
        texts.insert(id.clone(), text);
        ids.push(id);
    }
    let dataset = RawDataset::new(ids, (0..n_rows as i64).collect(), series, texts)?;
    Ok((dataset, embeddings))
}

/// Bayes-optimal test MAE by Monte Carlo over the generative model.
///
/// With `knows_regime` the forecaster outputs the regime's noise-free
/// continuation; without, the per-step regime-marginal median. Errors are
/// measured on `scale` using the noisy input window's own statistics.
pub fn oracle_mae(spec: &SyntheticSpec, knows_regime: bool, scale: MetricScale) -> Result<f64> {
    oracle_mae_with_draws(spec, knows_regime, scale, ORACLE_DRAWS)
}

pub fn oracle_mae_with_draws(
    spec: &SyntheticSpec,
    knows_regime: bool,
    scale: MetricScale,
    draws: usize,
) -> Result<f64> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Data(format!("{e}")))?;
    let eps = |rng: &mut ChaCha8Rng| {
        if spec.noise_sigma > 0.0 {
            noise.sample(rng)
        } else {
            0.0
        }
    };
    let ramp = spec.ramp();
    let conts: Vec<Vec<f64>> = (0..spec.n_regimes).map(|k| spec.continuation(k)).collect();
    let marginal = spec.regime_marginal_forecast();
    let mut x = alloc::vec![0.0; spec.input_len];
    let mut total = 0.0;
    for _ in 0..draws {
        let k = spec.regime_of(rng.random_range(0..spec.n_channels));
        for (xi, r) in x.iter_mut().zip(&ramp) {
            *xi = r + eps(&mut rng);
        }
        let (_, stats) = instance_normalize(&x);
        let denom = match scale {
            MetricScale::Normalized => stats.denom(),
            MetricScale::Raw => 1.0,
        };
        let pred = if knows_regime { &conts[k] } else { &marginal };
        let mut err = 0.0;
        for (p, c) in pred.iter().zip(&conts[k]) {
            let y = c + eps(&mut rng);
            err += (y - p).abs() / denom;
        }
        total += err / spec.horizon as f64;
    }
    Ok(total / draws as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_regime() -> SyntheticSpec {
        SyntheticSpec {
            n_channels: 4,
            n_regimes: 2,
            slopes: alloc::vec![-1.0, 1.0],
            noise_sigma: 0.0,
            periods: 3,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_inputs_are_regime_blind() {
        let spec = two_regime();
        let (d, _) = generate(&spec).unwrap();
        let l = spec.input_len;
        let p = spec.period_len();
        assert_eq!(d.series(0)[p..p + l], d.series(1)[p..p + l]);
        assert_ne!(d.series(0)[l..p], d.series(1)[l..p]);
        assert!(spec
            .regime_marginal_forecast()
            .iter()
            .all(|v| (v - 6.0 / 7.0).abs() < 1e-12));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            periods: 4,
            ..Default::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SyntheticSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().0, generate(&other).unwrap().0);
    }

    #[test]
    fn texts_and_embeddings() {
        let spec = SyntheticSpec {
            periods: 2,
            ..Default::default()
        };
        let (d, e) = generate(&spec).unwrap();
        assert_eq!(d.text(5), Some("regime 1 channel 5"));
        assert_eq!(e[5].channel_id, "ch005");
        assert_eq!((e[5].bos_index, e[5].cls_index), (Some(0), Some(3)));
        assert_eq!(e[5].d_tx(), 32);
    }

    #[test]
    fn validation() {
        let mut s = two_regime();
        s.slopes = alloc::vec![1.0, 1.0];
        assert!(s.validate().is_err());
        let mut s = two_regime();
        s.n_regimes = 5;
        assert!(s.validate().is_err());
        let mut s = two_regime();
        s.noise_sigma = -0.1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn weighted_median_cases() {
        assert_eq!(weighted_median(alloc::vec![(1.0, 0.5), (-1.0, 0.5)]), 0.0);
        assert_eq!(weighted_median(alloc::vec![(1.0, 0.6), (-1.0, 0.4)]), 1.0);
        assert_eq!(weighted_median(alloc::vec![(3.0, 0.2), (1.0, 0.3), (2.0, 0.5)]), 2.0);
    }

    #[test]
    fn knowing_the_regime_is_perfect_without_noise() {
        let spec = two_regime();
        assert_eq!(oracle_mae_with_draws(&spec, true, MetricScale::Raw, 1000).unwrap(), 0.0);
    }
}
