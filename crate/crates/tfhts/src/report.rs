//! Report files: one JSON document plus one CSV per metric.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tfhts_core::ablation::{AblationReport, Metric, TableRow};
use tfhts_core::eval::MetricsReport;

use crate::error::{Error, Result};

pub const REPORT_JSON: &str = "report.json";

const METRICS: [Metric; 2] = [Metric::Mae, Metric::Wape];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTables {
    pub metric: Metric,
    /// Without text vs with text (first strategy).
    pub text: Vec<TableRow>,
    /// With-text arms across pooling strategies.
    pub strategies: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub ablation: AblationReport,
    pub tables: Vec<MetricTables>,
}

impl ReportDocument {
    pub fn new(ablation: AblationReport) -> Result<Self> {
        let tables = METRICS
            .iter()
            .map(|&metric| {
                Ok(MetricTables {
                    metric,
                    text: ablation.text_table(metric)?,
                    strategies: ablation.strategy_table(metric)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ReportDocument { ablation, tables })
    }
}

/// `arm,h=<h1>,h=<h2>,...` with one row per arm.
pub fn metric_csv(report: &AblationReport, metric: Metric) -> Result<String> {
    let mut out = String::from("arm");
    for h in &report.horizons {
        out.push_str(&format!(",h={h}"));
    }
    out.push('\n');
    for row in report.full_table(metric)? {
        out.push_str(&row.arm.label());
        for v in &row.values {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}

fn markdown(rows: &[TableRow], horizons: &[usize]) -> String {
    let mut out = String::from("| arm |");
    for h in horizons {
        out.push_str(&format!(" h={h} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(horizons.len()));
    out.push('\n');
    for row in rows {
        out.push_str(&format!("| {} |", row.arm.label()));
        for (v, best) in row.values.iter().zip(&row.best) {
            if *best {
                out.push_str(&format!(" **{v:.4}** |"));
            } else {
                out.push_str(&format!(" {v:.4} |"));
            }
        }
        out.push('\n');
    }
    out
}

/// Comparison tables with the best value per column in bold.
pub fn markdown_tables(doc: &ReportDocument) -> String {
    let mut out = String::new();
    for t in &doc.tables {
        let name = t.metric.as_str().to_uppercase();
        out.push_str(&format!("## {name}: without vs with text\n\n"));
        out.push_str(&markdown(&t.text, &doc.ablation.horizons));
        if !t.strategies.is_empty() {
            out.push_str(&format!("\n## {name}: pooling strategies\n\n"));
            out.push_str(&markdown(&t.strategies, &doc.ablation.horizons));
        }
        out.push('\n');
    }
    out
}

fn write(path: PathBuf, body: &[u8]) -> Result<PathBuf> {
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `report.json`, `mae.csv` and `wape.csv` under `dir`.
pub fn write_ablation_report(report: &AblationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let doc = ReportDocument::new(report.clone())?;
    let json = serde_json::to_vec_pretty(&doc).expect("report serializes");
    let mut written = vec![write(dir.join(REPORT_JSON), &json)?];
    for m in METRICS {
        let csv = metric_csv(report, m)?;
        written.push(write(dir.join(format!("{}.csv", m.as_str())), csv.as_bytes())?);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<ReportDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::input(path, e.to_string()))
}

/// Re-renders a saved report: CSVs plus `tables.md`.
pub fn export_report(doc: &ReportDocument, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for m in METRICS {
        let csv = metric_csv(&doc.ablation, m)?;
        written.push(write(dir.join(format!("{}.csv", m.as_str())), csv.as_bytes())?);
    }
    written.push(write(dir.join("tables.md"), markdown_tables(doc).as_bytes())?);
    Ok(written)
}

pub fn write_metrics(report: &MetricsReport, path: &Path) -> Result<()> {
    let json = serde_json::to_vec_pretty(report).expect("metrics serialize");
    write(path.to_path_buf(), &json).map(|_| ())
}
