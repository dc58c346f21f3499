use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfhts::checkpoint;
use tfhts::embedding::{self, decode, encode, read_embedding_file, write_embedding_file, EmbeddingFileError};
use tfhts_core::data::WindowSample;
use tfhts_core::exec::Serial;
use tfhts_core::gradcheck::tiny_model_config;
use tfhts_core::model::{Model, TextQueries, Variant};
use tfhts_core::text::{hash_embed_text, PoolingStrategy, TokenEmbeddingSet};
use tfhts_core::train::{train, Checkpoint, NoHook, TrainConfig};
use tfhts_core::Tensor;

fn embedding_sets() -> impl Strategy<Value = Vec<TokenEmbeddingSet>> {
    (1usize..6, 1usize..9).prop_flat_map(|(n_channels, d_tx)| {
        prop::collection::vec(
            (1usize..6).prop_flat_map(move |n| {
                (
                    prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), n * d_tx),
                    prop::option::of(0..n),
                    prop::option::of(0..n),
                    Just(n),
                )
            }),
            n_channels,
        )
        .prop_map(move |chs| {
            chs.into_iter()
                .enumerate()
                .map(|(i, (vals, bos, cls, n))| {
                    let t = Tensor::matrix(n, d_tx, vals.into_iter().map(f64::from).collect()).unwrap();
                    TokenEmbeddingSet::new(format!("ch-{i}-é"), t, bos, cls).unwrap()
                })
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn embedding_write_read_write_is_byte_identical(sets in embedding_sets()) {
        let bytes = encode(&sets).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &sets);
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }
}

fn sample_file() -> Vec<u8> {
    let sets: Vec<_> = (0..3)
        .map(|c| {
            let mut s = hash_embed_text(&format!("c{c}"), &format!("regime {c} channel {c}"), 4, 1).unwrap();
            s.cls_index = Some(s.n_tokens() - 1);
            s
        })
        .collect();
    encode(&sets).unwrap()
}

#[test]
fn mutated_embedding_files_parse_or_error() {
    let base = sample_file();
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let (mut ok, mut err) = (0, 0);
    for _ in 0..10_000 {
        let mut b = base.clone();
        for _ in 0..rng.random_range(1..4) {
            match rng.random_range(0..5) {
                0 => {
                    let i = rng.random_range(0..b.len());
                    b[i] = rng.random();
                }
                1 => {
                    let n = rng.random_range(0..b.len());
                    b.truncate(n);
                }
                2 => {
                    let i = rng.random_range(0..=b.len());
                    b.insert(i, rng.random());
                }
                3 if b.len() >= 4 => {
                    // plant a large length field
                    let i = rng.random_range(0..b.len() - 3);
                    b[i..i + 4].copy_from_slice(&rng.random_range(u32::MAX / 2..=u32::MAX).to_le_bytes());
                }
                _ => {
                    let i = rng.random_range(0..b.len());
                    b[i] ^= 1 << rng.random_range(0..8);
                }
            }
            if b.is_empty() {
                break;
            }
        }
        match decode(&b) {
            Ok(sets) => {
                ok += 1;
                assert!(sets.iter().all(|s| s.n_tokens() >= 1));
            }
            Err(_) => err += 1,
        }
    }
    assert_eq!(ok + err, 10_000);
    assert!(err > 0);
}

#[test]
fn embedding_file_errors() {
    let base = sample_file();
    let mut bad = base.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(EmbeddingFileError::BadMagic(_))));
    assert!(matches!(decode(&base[..base.len() - 1]), Err(EmbeddingFileError::Truncated(_))));
    let mut long = base.clone();
    long.push(0);
    assert_eq!(decode(&long), Err(EmbeddingFileError::TrailingBytes(1)));
    assert!(matches!(decode(&[]), Err(EmbeddingFileError::Truncated("magic"))));
}

#[test]
fn embedding_file_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.tfhe");
    let sets = decode(&sample_file()).unwrap();
    write_embedding_file(&sets, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), sample_file());
    let map = embedding::by_channel(read_embedding_file(&path).unwrap());
    assert_eq!(map["c1"].cls_index, Some(3));
    assert!(read_embedding_file(&dir.path().join("missing")).is_err());
}

fn windows(n: usize) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    (0..n)
        .map(|i| {
            let x = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            WindowSample::new(i % 2, i, x, y)
        })
        .collect()
}

fn trained(variant: Variant) -> (Checkpoint, Option<TextQueries>) {
    let queries = variant.pooling().map(|_| TextQueries::from_vectors(vec![vec![0.3; 8], vec![-0.5; 8]]));
    let cfg = TrainConfig {
        max_epochs: 3,
        lr: 1e-2,
        batch_size: 4,
        seed: 42,
        ..Default::default()
    };
    let model = Model::new(tiny_model_config(variant), 1).unwrap();
    let out = train(model, &windows(12), &windows(5), queries.as_ref(), &cfg, &Serial, &mut NoHook).unwrap();
    (out.checkpoint, queries)
}

#[test]
fn checkpoint_round_trips_bytes_and_forecasts() {
    for variant in [
        Variant::WithoutText,
        Variant::WithText {
            pooling: PoolingStrategy::Bos,
        },
    ] {
        let (ck, queries) = trained(variant);
        let bytes = checkpoint::encode(&ck).unwrap();
        let back = checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(checkpoint::encode(&back).unwrap(), bytes);
        for s in windows(6) {
            let q = queries.as_ref().and_then(|q| q.get(s.channel_index));
            let a = ck.model.predict(&s, q).unwrap();
            let b = back.model.predict(&s, q).unwrap();
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let (ck, _) = trained(Variant::WithoutText);
    let bytes = checkpoint::encode(&ck).unwrap();
    for cut in [0, 3, 6, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(checkpoint::decode(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut v2 = bytes.clone();
    v2[4] = 2;
    assert!(matches!(
        checkpoint::decode(&v2),
        Err(checkpoint::CheckpointError::UnsupportedVersion(2))
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let mut b = bytes.clone();
        let i = rng.random_range(0..b.len());
        b[i] = rng.random();
        let _ = checkpoint::decode(&b);
    }
}

#[test]
fn checkpoint_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tfhc");
    let (ck, _) = trained(Variant::WithoutText);
    checkpoint::save_checkpoint(&ck, &path).unwrap();
    assert_eq!(checkpoint::load_checkpoint(&path).unwrap(), ck);
}
