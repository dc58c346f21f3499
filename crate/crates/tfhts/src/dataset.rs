//! Series CSV and text sidecar.
//!
//! The CSV header is `timestamp,<id1>,<id2>,...` with one row per timestamp.
//! Timestamps are integers, `YYYY-MM-DD` dates (stored as days since the
//! epoch) or RFC 3339 datetimes (stored as seconds). The sidecar holds one
//! `{"channel": "<id>", "text": "<string>"}` object per line.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};
use tfhts_core::data::RawDataset;

use crate::error::{Error, Result};

/// Channel ids, timestamps and channel-major values.
pub struct SeriesTable {
    pub channel_ids: Vec<String>,
    pub timestamps: Vec<i64>,
    pub series: Vec<Vec<f64>>,
}

fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
        return Some((d - epoch).num_days());
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.timestamp())
}

pub fn read_series_csv(path: &Path) -> Result<SeriesTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = rdr.headers().map_err(|e| Error::input(path, e.to_string()))?.clone();
    if header.get(0) != Some("timestamp") {
        return Err(Error::input(path, "first header column must be `timestamp`"));
    }
    let channel_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if channel_ids.is_empty() {
        return Err(Error::input(path, "no channel columns"));
    }
    let mut timestamps = Vec::new();
    let mut series = vec![Vec::new(); channel_ids.len()];
    for (i, rec) in rdr.records().enumerate() {
        // row 1 is the header
        let row = i + 2;
        let rec = rec.map_err(|e| Error::input(path, format!("row {row}: {e}")))?;
        if rec.len() != channel_ids.len() + 1 {
            return Err(Error::input(
                path,
                format!("row {row}: expected {} fields, found {}", channel_ids.len() + 1, rec.len()),
            ));
        }
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| Error::input(path, format!("row {row}, column 1: bad timestamp `{}`", &rec[0])))?;
        timestamps.push(ts);
        for (c, cell) in rec.iter().skip(1).enumerate() {
            let col = c + 2;
            let id = &channel_ids[c];
            if cell.is_empty() {
                return Err(Error::input(path, format!("row {row}, column {col} (`{id}`): blank cell")));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::input(path, format!("row {row}, column {col} (`{id}`): `{cell}` is not a number"))
            })?;
            series[c].push(v);
        }
    }
    Ok(SeriesTable {
        channel_ids,
        timestamps,
        series,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextRecord {
    channel: String,
    text: String,
}

pub fn read_text_sidecar(path: &Path) -> Result<BTreeMap<String, String>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut texts = BTreeMap::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TextRecord =
            serde_json::from_str(line).map_err(|e| Error::input(path, format!("line {}: {e}", i + 1)))?;
        if texts.insert(rec.channel.clone(), rec.text).is_some() {
            return Err(Error::input(path, format!("line {}: second text for channel `{}`", i + 1, rec.channel)));
        }
    }
    Ok(texts)
}

/// Series plus optional texts, validated into a dataset.
pub fn load_dataset(series_path: &Path, text_path: Option<&Path>) -> Result<RawDataset> {
    let table = read_series_csv(series_path)?;
    let texts = match text_path {
        Some(p) => read_text_sidecar(p)?,
        None => BTreeMap::new(),
    };
    Ok(RawDataset::new(table.channel_ids, table.timestamps, table.series, texts)?)
}

pub fn write_series_csv(d: &RawDataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["timestamp".to_string()];
    header.extend(d.channel_ids().iter().cloned());
    w.write_record(&header).map_err(|e| Error::input(path, e.to_string()))?;
    for (row, ts) in d.timestamps().iter().enumerate() {
        let mut rec = vec![ts.to_string()];
        rec.extend((0..d.n_channels()).map(|c| d.value(row, c).to_string()));
        w.write_record(&rec).map_err(|e| Error::input(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_text_sidecar(d: &RawDataset, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for (c, id) in d.channel_ids().iter().enumerate() {
        if let Some(text) = d.text(c) {
            let rec = TextRecord {
                channel: id.clone(),
                text: text.to_string(),
            };
            serde_json::to_writer(&mut out, &rec).expect("string fields serialize");
            out.write_all(b"\n").expect("vec write");
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_forms() {
        assert_eq!(parse_timestamp("42"), Some(42));
        assert_eq!(parse_timestamp("1970-01-03"), Some(2));
        assert_eq!(parse_timestamp("1970-01-01T00:01:00Z"), Some(60));
        assert_eq!(parse_timestamp("yesterday"), None);
    }
}
