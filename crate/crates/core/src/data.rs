//! Channel-major series data, chronological splits, windowing,
//! per-window normalization and patching.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Epsilon added to the window standard deviation before dividing.
pub const NORM_EPS: f64 = 1e-5;

/// Validated multichannel series with optional per-channel text.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    channel_ids: Vec<String>,
    timestamps: Vec<i64>,
    /// `series[c][t]`
    series: Vec<Vec<f64>>,
    texts: BTreeMap<String, String>,
}

impl RawDataset {
    /// `series` is channel-major: one vector of length `T` per channel.
    pub fn new(
        channel_ids: Vec<String>,
        timestamps: Vec<i64>,
        series: Vec<Vec<f64>>,
        texts: BTreeMap<String, String>,
    ) -> Result<Self> {
        if channel_ids.is_empty() {
            return Err(Error::Data("dataset has no channels".into()));
        }
        if channel_ids.len() != series.len() {
            return Err(Error::Data(format!(
                "{} channel ids but {} value columns",
                channel_ids.len(),
                series.len()
            )));
        }
        for (i, id) in channel_ids.iter().enumerate() {
            if channel_ids[..i].contains(id) {
                return Err(Error::Data(format!("duplicate channel id `{id}`")));
            }
        }
        let t_len = timestamps.len();
        if t_len == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        if t_len >= 2 {
            let step = timestamps[1] - timestamps[0];
            for (i, w) in timestamps.windows(2).enumerate() {
                if w[1] <= w[0] {
                    return Err(Error::Data(format!(
                        "timestamps not strictly increasing at row {}",
                        i + 1
                    )));
                }
                if w[1] - w[0] != step {
                    return Err(Error::Data(format!(
                        "non-uniform timestamp spacing at row {}: {} vs {}",
                        i + 1,
                        w[1] - w[0],
                        step
                    )));
                }
            }
        }
        for (id, col) in channel_ids.iter().zip(&series) {
            if col.len() != t_len {
                return Err(Error::Data(format!(
                    "channel `{id}` has {} values, expected {t_len}",
                    col.len()
                )));
            }
            if let Some(t) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "channel `{id}` has a missing or non-finite value at row {t}"
                )));
            }
        }
        if let Some(unknown) = texts.keys().find(|k| !channel_ids.contains(k)) {
            return Err(Error::Data(format!(
                "text record references unknown channel `{unknown}`"
            )));
        }
        Ok(RawDataset {
            channel_ids,
            timestamps,
            series,
            texts,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.channel_ids.len()
    }

    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn channel_ids(&self) -> &[String] {
        &self.channel_ids
    }

    pub fn channel_index(&self, id: &str) -> Option<usize> {
        self.channel_ids.iter().position(|c| c == id)
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn series(&self, channel: usize) -> &[f64] {
        &self.series[channel]
    }

    pub fn value(&self, row: usize, channel: usize) -> f64 {
        self.series[channel][row]
    }

    pub fn texts(&self) -> &BTreeMap<String, String> {
        &self.texts
    }

    pub fn text(&self, channel: usize) -> Option<&str> {
        self.texts.get(&self.channel_ids[channel]).map(String::as_str)
    }

    /// Errors unless every channel has a text record.
    pub fn require_texts(&self) -> Result<()> {
        match self.channel_ids.iter().find(|c| !self.texts.contains_key(*c)) {
            Some(c) => Err(Error::Data(format!("channel `{c}` has no text"))),
            None => Ok(()),
        }
    }
}

/// Train/validation/test split fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::config(
                    format!("data.split.{name}"),
                    format!("must be positive, got {r}"),
                ));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "data.split",
                format!("ratios must sum to 1, got {sum}"),
            ));
        }
        Ok(())
    }
}

/// Three contiguous row ranges covering the whole series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Chronological split: train and validation lengths are floored, the
/// remainder goes to test. Every split must hold at least `min_len` rows.
pub fn split_chronological(n_rows: usize, ratios: SplitRatios, min_len: usize) -> Result<Splits> {
    ratios.validate()?;
    // the 1e-9 guards products like 0.29 * 100 = 28.999999999999996
    let floor = |r: f64| crate::math::floor(r * n_rows as f64 + 1e-9) as usize;
    let n_train = floor(ratios.train);
    let n_val = floor(ratios.val);
    if n_train + n_val > n_rows {
        return Err(Error::Data("split ratios exceed dataset length".into()));
    }
    let splits = Splits {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..n_rows,
    };
    for (name, r) in [
        ("train", &splits.train),
        ("validation", &splits.val),
        ("test", &splits.test),
    ] {
        if r.len() < min_len {
            return Err(Error::Data(format!(
                "{name} split has {} rows, fewer than input + horizon = {min_len}",
                r.len()
            )));
        }
    }
    Ok(splits)
}

/// Mean and population standard deviation of an input window.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn denom(&self) -> f64 {
        self.std + NORM_EPS
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.denom()
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.denom() + self.mean
    }
}

/// `(x - mean) / (std + 1e-5)` with the statistics used.
pub fn instance_normalize(x: &[f64]) -> (Vec<f64>, NormStats) {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let stats = NormStats {
        mean,
        std: math::sqrt(var),
    };
    (x.iter().map(|&v| stats.normalize(v)).collect(), stats)
}

pub fn denormalize(x: &[f64], stats: NormStats) -> Vec<f64> {
    x.iter().map(|&v| stats.denormalize(v)).collect()
}

/// One training/evaluation instance cut from a single channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub channel_index: usize,
    /// Row of `x[0]` in the source dataset.
    pub start: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub norm_stats: NormStats,
}

impl WindowSample {
    pub fn new(channel_index: usize, start: usize, x: Vec<f64>, y: Vec<f64>) -> Self {
        let (_, norm_stats) = instance_normalize(&x);
        WindowSample {
            channel_index,
            start,
            x,
            y,
            norm_stats,
        }
    }
}

/// Sliding windows over `range` for every channel, channel-major order.
///
/// Per channel there are `(range.len() - l - h) / window_stride + 1` windows.
pub fn make_windows(
    d: &RawDataset,
    range: Range<usize>,
    l: usize,
    h: usize,
    window_stride: usize,
) -> Result<Vec<WindowSample>> {
    if l == 0 || h == 0 || window_stride == 0 {
        return Err(Error::Data("window lengths and stride must be positive".into()));
    }
    if range.end > d.n_rows() || range.start > range.end {
        return Err(Error::Data(format!(
            "range {}..{} outside dataset of {} rows",
            range.start,
            range.end,
            d.n_rows()
        )));
    }
    if l + h > range.len() {
        return Err(Error::Data(format!(
            "input + horizon = {} exceeds range length {}",
            l + h,
            range.len()
        )));
    }
    let per_channel = (range.len() - l - h) / window_stride + 1;
    let mut out = Vec::with_capacity(per_channel * d.n_channels());
    for c in 0..d.n_channels() {
        let s = d.series(c);
        for k in 0..per_channel {
            let start = range.start + k * window_stride;
            out.push(WindowSample::new(
                c,
                start,
                s[start..start + l].to_vec(),
                s[start + l..start + l + h].to_vec(),
            ));
        }
    }
    Ok(out)
}

/// Patch geometry over an input window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PatchConfig {
    pub patch_len: usize,
    pub stride: usize,
    pub pad_end: bool,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            patch_len: 4,
            stride: 2,
            pad_end: true,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self, l: usize) -> Result<()> {
        if self.patch_len == 0 || self.patch_len > l {
            return Err(Error::config(
                "patch.patch_len",
                format!("must be in 1..={l}, got {}", self.patch_len),
            ));
        }
        if self.stride == 0 || self.stride > self.patch_len {
            return Err(Error::config(
                "patch.stride",
                format!("must be in 1..={}, got {}", self.patch_len, self.stride),
            ));
        }
        Ok(())
    }

    /// Patch count `p` for an input of length `l`.
    pub fn num_patches(&self, l: usize) -> usize {
        let base = (l - self.patch_len) / self.stride + 1;
        if self.pad_end {
            base + 1
        } else {
            base
        }
    }
}

/// Splits a window into `p × patch_len` patches. With `pad_end` the final
/// value is repeated `stride` times before cutting.
pub fn patchify(x: &[f64], cfg: &PatchConfig) -> Result<Tensor> {
    cfg.validate(x.len())?;
    let p = cfg.num_patches(x.len());
    let last = *x.last().expect("validated non-empty");
    let at = |i: usize| if i < x.len() { x[i] } else { last };
    let mut data = Vec::with_capacity(p * cfg.patch_len);
    for i in 0..p {
        let s = i * cfg.stride;
        data.extend((s..s + cfg.patch_len).map(at));
    }
    Ok(Tensor::matrix(p, cfg.patch_len, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn dataset(t: usize, c: usize) -> RawDataset {
        let ids = (0..c).map(|i| format!("c{i}")).collect();
        let series = (0..c)
            .map(|ch| (0..t).map(|r| (r * 10 + ch) as f64).collect())
            .collect();
        RawDataset::new(ids, (0..t as i64).collect(), series, BTreeMap::new()).unwrap()
    }

    #[test]
    fn dataset_validation() {
        let ok = dataset(20, 3);
        assert_eq!((ok.n_channels(), ok.n_rows()), (3, 20));

        let mut texts = BTreeMap::new();
        texts.insert("zz".to_string(), "x".to_string());
        let err = RawDataset::new(
            vec!["a".into()],
            vec![0, 1],
            vec![vec![1.0, 2.0]],
            texts,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("zz"));

        let dup = RawDataset::new(
            vec!["a".into(), "a".into()],
            vec![0],
            vec![vec![1.0], vec![1.0]],
            BTreeMap::new(),
        );
        assert!(dup.is_err());

        let non_mono = RawDataset::new(
            vec!["a".into()],
            vec![0, 2, 1],
            vec![vec![1.0; 3]],
            BTreeMap::new(),
        );
        assert!(non_mono.is_err());
        let uneven = RawDataset::new(
            vec!["a".into()],
            vec![0, 1, 3],
            vec![vec![1.0; 3]],
            BTreeMap::new(),
        );
        assert!(uneven.is_err());
        let missing = RawDataset::new(
            vec!["a".into()],
            vec![0, 1],
            vec![vec![1.0, f64::NAN]],
            BTreeMap::new(),
        );
        assert!(missing.is_err());
    }

    #[test]
    fn split_examples() {
        let s = split_chronological(100, SplitRatios::default(), 10).unwrap();
        assert_eq!(s.train, 0..70);
        assert_eq!(s.val, 70..80);
        assert_eq!(s.test, 80..100);

        let r = SplitRatios {
            train: 0.5,
            val: 0.25,
            test: 0.25,
        };
        assert!(split_chronological(52, r, 14).is_err());
        assert!(split_chronological(56, r, 14).is_ok());

        let degenerate = SplitRatios {
            train: 1.0,
            val: 0.0,
            test: 0.0,
        };
        assert!(split_chronological(100, degenerate, 1).is_err());
    }

    #[test]
    fn window_counts() {
        let d = dataset(40, 2);
        assert_eq!(make_windows(&d, 0..14, 7, 7, 1).unwrap().len(), 2);
        assert_eq!(make_windows(&d, 3..15, 9, 3, 1).unwrap().len(), 2);
        assert_eq!(make_windows(&d, 0..16, 7, 7, 2).unwrap().len(), 4);
        assert!(make_windows(&d, 0..13, 7, 7, 1).is_err());

        let w = &make_windows(&d, 5..19, 7, 7, 1).unwrap()[1];
        assert_eq!(w.channel_index, 1);
        assert_eq!(w.x[0], 51.0);
        assert_eq!(w.y[0], 121.0);
    }

    #[test]
    fn normalize_examples() {
        let (x, s) = instance_normalize(&[2.0, 2.0, 2.0]);
        assert_eq!(x, vec![0.0; 3]);
        assert_eq!((s.mean, s.std), (2.0, 0.0));

        let (x, s) = instance_normalize(&[0.0, 2.0]);
        let e = 1.0 / (1.0 + 1e-5);
        assert!((x[0] + e).abs() < 1e-15 && (x[1] - e).abs() < 1e-15);
        assert_eq!((s.mean, s.std), (1.0, 1.0));

        let raw = [3.5, -1.25, 8.0, 0.0];
        let (n, s) = instance_normalize(&raw);
        for (a, b) in denormalize(&n, s).iter().zip(raw) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn patch_examples() {
        let x: Vec<f64> = (1..=7).map(f64::from).collect();
        let p = patchify(&x, &PatchConfig::default()).unwrap();
        assert_eq!(p.shape(), &[3, 4]);
        assert_eq!(
            p.data(),
            &[1., 2., 3., 4., 3., 4., 5., 6., 5., 6., 7., 7.]
        );

        let cfg = PatchConfig {
            patch_len: 7,
            stride: 7,
            pad_end: false,
        };
        let p = patchify(&x, &cfg).unwrap();
        assert_eq!(p.shape(), &[1, 7]);
        assert_eq!(p.data(), x.as_slice());

        assert_eq!(PatchConfig::default().num_patches(9), 4);
        let too_long = PatchConfig {
            patch_len: 8,
            stride: 2,
            pad_end: true,
        };
        assert!(patchify(&x, &too_long).is_err());
    }
}
