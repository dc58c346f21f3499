//! Binary token-embedding file.
//!
//! ```text
//! "TFHE"  u16 version=1  u32 d_tx  u32 n_channels
//! per channel:
//!   u16 id_len  id (UTF-8)  u32 n_tokens  i32 bos (-1 = absent)  i32 cls (-1 = absent)
//!   n_tokens × d_tx f32, row-major
//! ```
//!
//! All integers and floats are little-endian. Token values are held as
//! `f64` in memory and narrowed to `f32` on write.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use thiserror::Error;
use tfhts_core::text::TokenEmbeddingSet;
use tfhts_core::Tensor;

use crate::bytes::{Reader, Truncated};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"TFHE";
pub const VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingFileError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported embedding file version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last channel")]
    TrailingBytes(usize),
    #[error("d_tx must be positive")]
    ZeroWidth,
    #[error("no channels")]
    Empty,
    #[error("channel `{channel}` has d_tx {found}, expected {expected}")]
    WidthMismatch {
        channel: String,
        expected: usize,
        found: usize,
    },
    #[error("channel `{0}` has zero tokens")]
    ZeroTokens(String),
    #[error("duplicate channel `{0}`")]
    DuplicateChannel(String),
    #[error("channel id is not valid UTF-8")]
    BadChannelId,
    #[error("channel `{channel}`: {field} index {index} is invalid for {n_tokens} tokens")]
    BadIndex {
        channel: String,
        field: &'static str,
        index: i64,
        n_tokens: usize,
    },
    #[error("channel `{0}` contains a non-finite value")]
    NonFinite(String),
    #[error("{0} does not fit the file's integer fields")]
    TooLarge(&'static str),
}

impl From<Truncated> for EmbeddingFileError {
    fn from(t: Truncated) -> Self {
        EmbeddingFileError::Truncated(t.0)
    }
}

fn index_field(idx: Option<usize>) -> Result<i32, EmbeddingFileError> {
    match idx {
        None => Ok(-1),
        Some(i) => i32::try_from(i).map_err(|_| EmbeddingFileError::TooLarge("token index")),
    }
}

/// Serializes `sets` in the given order.
pub fn encode(sets: &[TokenEmbeddingSet]) -> Result<Vec<u8>, EmbeddingFileError> {
    let first = sets.first().ok_or(EmbeddingFileError::Empty)?;
    let d_tx = first.d_tx();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(d_tx).map_err(|_| EmbeddingFileError::TooLarge("d_tx"))?.to_le_bytes());
    let n = u32::try_from(sets.len()).map_err(|_| EmbeddingFileError::TooLarge("channel count"))?;
    out.extend_from_slice(&n.to_le_bytes());
    for set in sets {
        if set.d_tx() != d_tx {
            return Err(EmbeddingFileError::WidthMismatch {
                channel: set.channel_id.clone(),
                expected: d_tx,
                found: set.d_tx(),
            });
        }
        if !seen.insert(set.channel_id.as_str()) {
            return Err(EmbeddingFileError::DuplicateChannel(set.channel_id.clone()));
        }
        let id = set.channel_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| EmbeddingFileError::TooLarge("channel id"))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        let n_tokens = u32::try_from(set.n_tokens()).map_err(|_| EmbeddingFileError::TooLarge("token count"))?;
        out.extend_from_slice(&n_tokens.to_le_bytes());
        out.extend_from_slice(&index_field(set.bos_index)?.to_le_bytes());
        out.extend_from_slice(&index_field(set.cls_index)?.to_le_bytes());
        for &v in set.tokens().data() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(EmbeddingFileError::NonFinite(set.channel_id.clone()));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

fn read_index(
    raw: i32,
    field: &'static str,
    channel: &str,
    n_tokens: usize,
) -> Result<Option<usize>, EmbeddingFileError> {
    match raw {
        -1 => Ok(None),
        i if i >= 0 && (i as usize) < n_tokens => Ok(Some(i as usize)),
        i => Err(EmbeddingFileError::BadIndex {
            channel: channel.to_string(),
            field,
            index: i64::from(i),
            n_tokens,
        }),
    }
}

/// Parses a whole file. Channel order is preserved.
pub fn decode(bytes: &[u8]) -> Result<Vec<TokenEmbeddingSet>, EmbeddingFileError> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.array("magic")?;
    if magic != MAGIC {
        return Err(EmbeddingFileError::BadMagic(magic));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(EmbeddingFileError::UnsupportedVersion(version));
    }
    let d_tx = r.u32("d_tx")? as usize;
    if d_tx == 0 {
        return Err(EmbeddingFileError::ZeroWidth);
    }
    let n_channels = r.u32("channel count")? as usize;
    if n_channels == 0 {
        return Err(EmbeddingFileError::Empty);
    }
    let mut sets = Vec::new();
    let mut seen = HashSet::new();
    for _ in 0..n_channels {
        let id_len = r.u16("channel id length")? as usize;
        let id = std::str::from_utf8(r.take(id_len, "channel id")?)
            .map_err(|_| EmbeddingFileError::BadChannelId)?
            .to_string();
        let n_tokens = r.u32("token count")? as usize;
        if n_tokens == 0 {
            return Err(EmbeddingFileError::ZeroTokens(id));
        }
        let bos = read_index(r.i32("bos index")?, "bos", &id, n_tokens)?;
        let cls = read_index(r.i32("cls index")?, "cls", &id, n_tokens)?;
        let n_bytes = n_tokens
            .checked_mul(d_tx)
            .and_then(|n| n.checked_mul(4))
            .ok_or(EmbeddingFileError::Truncated("token matrix"))?;
        let raw = r.take(n_bytes, "token matrix")?;
        let mut values = Vec::with_capacity(n_tokens * d_tx);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
            if !v.is_finite() {
                return Err(EmbeddingFileError::NonFinite(id));
            }
            values.push(f64::from(v));
        }
        if !seen.insert(id.clone()) {
            return Err(EmbeddingFileError::DuplicateChannel(id));
        }
        let tokens = Tensor::matrix(n_tokens, d_tx, values).expect("sizes checked");
        sets.push(TokenEmbeddingSet::new(id, tokens, bos, cls).expect("indices checked"));
    }
    if r.remaining() != 0 {
        return Err(EmbeddingFileError::TrailingBytes(r.remaining()));
    }
    Ok(sets)
}

pub fn write_embedding_file(sets: &[TokenEmbeddingSet], path: &Path) -> Result<()> {
    let bytes = encode(sets).map_err(|source| Error::Embedding {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embedding_file(path: &Path) -> Result<Vec<TokenEmbeddingSet>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|source| Error::Embedding {
        path: path.to_path_buf(),
        source,
    })
}

/// Keyed view of a decoded file.
pub fn by_channel(sets: Vec<TokenEmbeddingSet>) -> BTreeMap<String, TokenEmbeddingSet> {
    sets.into_iter().map(|s| (s.channel_id.clone(), s)).collect()
}
