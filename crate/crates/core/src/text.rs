//! Frozen text tower: per-channel token embeddings and pooling to a
//! single query vector.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::hash::Hasher;
use core::fmt;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Token embeddings of one channel's text: `n × d_tx`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSet {
    pub channel_id: String,
    tokens: Tensor,
    pub bos_index: Option<usize>,
    pub cls_index: Option<usize>,
}

impl TokenEmbeddingSet {
    pub fn new(
        channel_id: impl Into<String>,
        tokens: Tensor,
        bos_index: Option<usize>,
        cls_index: Option<usize>,
    ) -> Result<Self> {
        let channel_id = channel_id.into();
        let (n, _) = tokens
            .dims2("token embeddings")
            .map_err(|e| Error::Text(format!("channel `{channel_id}`: {e}")))?;
        for (name, idx) in [("bos", bos_index), ("cls", cls_index)] {
            if let Some(i) = idx {
                if i >= n {
                    return Err(Error::Text(format!(
                        "channel `{channel_id}`: {name} index {i} out of range for {n} tokens"
                    )));
                }
            }
        }
        Ok(TokenEmbeddingSet {
            channel_id,
            tokens,
            bos_index,
            cls_index,
        })
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn d_tx(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// Rule reducing a token set to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PoolingStrategy {
    #[default]
    Mean,
    Bos,
    Cls,
}

impl PoolingStrategy {
    pub const ALL: [PoolingStrategy; 3] = [PoolingStrategy::Mean, PoolingStrategy::Bos, PoolingStrategy::Cls];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolingStrategy::Mean => "mean",
            PoolingStrategy::Bos => "bos",
            PoolingStrategy::Cls => "cls",
        }
    }
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for PoolingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PoolingStrategy::Mean),
            "bos" => Ok(PoolingStrategy::Bos),
            "cls" => Ok(PoolingStrategy::Cls),
            other => Err(Error::config(
                "pooling",
                format!("unknown strategy `{other}` (expected mean, bos or cls)"),
            )),
        }
    }
}

/// Reduces `set` to a `d_tx` vector.
///
/// `Cls` and `Bos` fail when the set carries no such index rather than
/// substituting another token.
pub fn pool(set: &TokenEmbeddingSet, strategy: PoolingStrategy) -> Result<Vec<f64>> {
    let pick = |idx: Option<usize>| {
        idx.map(|i| set.tokens.row(i).to_vec())
            .ok_or_else(|| Error::StrategyUnavailable {
                strategy: strategy.as_str(),
                channel: set.channel_id.clone(),
            })
    };
    match strategy {
        PoolingStrategy::Mean => {
            let d = set.d_tx();
            let n = set.n_tokens();
            let mut acc = alloc::vec![0.0; d];
            for i in 0..n {
                for (a, v) in acc.iter_mut().zip(set.tokens.row(i)) {
                    *a += v;
                }
            }
            let inv = 1.0 / n as f64;
            acc.iter_mut().for_each(|a| *a *= inv);
            Ok(acc)
        }
        PoolingStrategy::Bos => pick(set.bos_index),
        PoolingStrategy::Cls => pick(set.cls_index),
    }
}

/// Stable 64-bit FNV-1a hash of `(token bytes, seed)`.
pub fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.write(&seed.to_le_bytes());
    h.finish()
}

/// Deterministic stand-in for a language model: whitespace tokens, each
/// embedded by a generator seeded from its hash. Values lie in `[-1, 1]`
/// and are exactly representable as `f32`.
pub fn hash_embed_text(
    channel_id: &str,
    text: &str,
    d_tx: usize,
    seed: u64,
) -> Result<TokenEmbeddingSet> {
    if d_tx == 0 {
        return Err(Error::Text("d_tx must be at least 1".into()));
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::Text(format!("channel `{channel_id}`: empty text")));
    }
    let mut data = Vec::with_capacity(words.len() * d_tx);
    for w in &words {
        let mut rng = ChaCha8Rng::seed_from_u64(token_hash(w, seed));
        data.extend((0..d_tx).map(|_| f64::from(rng.random_range(-1.0f32..=1.0f32))));
    }
    let tokens = Tensor::matrix(words.len(), d_tx, data)?;
    TokenEmbeddingSet::new(channel_id, tokens, Some(0), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn set(rows: &[&[f64]], bos: Option<usize>, cls: Option<usize>) -> TokenEmbeddingSet {
        TokenEmbeddingSet::new("c", Tensor::from_rows(rows).unwrap(), bos, cls).unwrap()
    }

    #[test]
    fn pooling_examples() {
        let s = set(&[&[1.0, 3.0], &[3.0, 5.0]], None, None);
        assert_eq!(pool(&s, PoolingStrategy::Mean).unwrap(), vec![2.0, 4.0]);

        let one = set(&[&[0.25, -7.0]], Some(0), Some(0));
        for strat in PoolingStrategy::ALL {
            assert_eq!(pool(&one, strat).unwrap(), vec![0.25, -7.0]);
        }

        let s = set(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 2.0]], Some(0), None);
        assert_eq!(pool(&s, PoolingStrategy::Bos).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn cls_without_index_is_explicit_error() {
        let s = set(&[&[1.0, 0.0], &[0.0, 1.0]], Some(0), None);
        assert_eq!(
            pool(&s, PoolingStrategy::Cls),
            Err(Error::StrategyUnavailable {
                strategy: "cls",
                channel: "c".into()
            })
        );
    }

    #[test]
    fn index_bounds_validated() {
        let t = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(TokenEmbeddingSet::new("c", t.clone(), Some(1), None).is_err());
        assert!(TokenEmbeddingSet::new("c", t, None, Some(0)).is_ok());
    }

    #[test]
    fn hash_embedding_properties() {
        let a = hash_embed_text("c", "regime 1 channel 3", 32, 9).unwrap();
        let b = hash_embed_text("c", "regime 1 channel 3", 32, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_tokens(), 4);
        assert_eq!(a.bos_index, Some(0));
        assert_eq!(a.cls_index, None);
        assert!(a.tokens().data().iter().all(|v| v.abs() <= 1.0));

        let c = hash_embed_text("c", "regime 2 channel 3", 32, 9).unwrap();
        for i in 0..4 {
            assert_eq!(a.tokens().row(i) == c.tokens().row(i), i != 1);
        }

        let ra = hash_embed_text("c", "regime A", 32, 0).unwrap();
        let rb = hash_embed_text("c", "regime B", 32, 0).unwrap();
        assert_ne!(token_hash("A", 0), token_hash("B", 0));
        assert_ne!(
            pool(&ra, PoolingStrategy::Mean).unwrap(),
            pool(&rb, PoolingStrategy::Mean).unwrap()
        );

        assert!(hash_embed_text("c", "   ", 8, 0).is_err());
        assert!(hash_embed_text("c", "x", 0, 0).is_err());
    }

    #[test]
    fn hash_values_survive_f32() {
        let a = hash_embed_text("c", "some words here", 16, 1).unwrap();
        assert!(a.tokens().data().iter().all(|&v| f64::from(v as f32) == v));
    }
}
