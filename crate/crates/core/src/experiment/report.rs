//! Seed-aggregated summaries and charts from a results CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

use super::svg::{bar_chart_svg, BarChart, BarSeries};
use super::ResultRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    /// Metric against β, one bar per model.
    QualitySweep,
    /// Metric against annotation count, one bar per model.
    QuantitySweep,
    /// Metric per model, one bar per pairing strategy.
    PairingCompare,
}

impl ReportKind {
    pub const ALL: [ReportKind; 3] = [
        ReportKind::QualitySweep,
        ReportKind::QuantitySweep,
        ReportKind::PairingCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::QualitySweep => "quality-sweep",
            ReportKind::QuantitySweep => "quantity-sweep",
            ReportKind::PairingCompare => "pairing-compare",
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReportKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown report kind {s:?}")))
    }
}

/// Metrics that can be summarized.
pub const METRICS: [&str; 5] = [
    "annotation_accuracy",
    "oc_golden",
    "oc_annotated",
    "bon_mean",
    "bon_oracle",
];

fn metric_value(row: &ResultRow, metric: &str) -> Option<f64> {
    match metric {
        "annotation_accuracy" => row.annotation_accuracy,
        "oc_golden" => row.oc_golden,
        "oc_annotated" => row.oc_annotated,
        "bon_mean" => row.bon_mean,
        "bon_oracle" => row.bon_oracle,
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub beta: f64,
    pub quantity: usize,
    pub pairing: String,
    pub model: String,
    pub metric: String,
    pub n_seeds: usize,
    pub mean: f64,
    /// Standard error over seeds; absent for a single seed.
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub summary_csv: PathBuf,
    pub svg: PathBuf,
    pub rows: Vec<SummaryRow>,
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::parse(path.display().to_string(), e.to_string()),
        _ => Error::from(e),
    })?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize().enumerate() {
        let row: ResultRow =
            rec.map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 2), e.to_string()))?;
        out.push(row);
    }
    Ok(out)
}

/// Sample mean and `sd / √n` (sample sd); no SE for one value.
pub(crate) fn mean_se(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Group ok rows by every identifier but the seed and summarize `metric`.
pub fn summarize(rows: &[ResultRow], metric: &str) -> Result<Vec<SummaryRow>> {
    if !METRICS.contains(&metric) {
        return Err(Error::Config(format!(
            "unknown metric {metric:?}; expected one of {METRICS:?}"
        )));
    }
    // Grid order of first appearance is kept.
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, (&ResultRow, Vec<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let Some(v) = metric_value(r, metric) else {
            continue;
        };
        let key = format!(
            "{}|{}|{}|{}",
            r.beta,
            r.quantity,
            r.pairing.name(),
            r.model.name()
        );
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                (r, Vec::new())
            })
            .1
            .push(v);
    }
    if order.is_empty() {
        return Err(Error::Empty("result rows after filtering"));
    }
    Ok(order
        .iter()
        .map(|k| {
            let (r, vals) = &groups[k];
            let (mean, se) = mean_se(vals);
            SummaryRow {
                beta: r.beta,
                quantity: r.quantity,
                pairing: r.pairing.name().into(),
                model: r.model.name().into(),
                metric: metric.into(),
                n_seeds: vals.len(),
                mean,
                se,
            }
        })
        .collect())
}

fn distinct<T: PartialEq + Clone>(xs: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for x in xs {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn chart_for(kind: ReportKind, rows: &[SummaryRow], metric: &str) -> BarChart {
    let category = |r: &SummaryRow| match kind {
        ReportKind::QualitySweep => r.beta.to_string(),
        ReportKind::QuantitySweep => r.quantity.to_string(),
        ReportKind::PairingCompare => r.model.clone(),
    };
    // Series carry every identifier other than the category that varies.
    let vary_beta = distinct(rows.iter().map(|r| r.beta.to_bits())).len() > 1;
    let vary_n = distinct(rows.iter().map(|r| r.quantity)).len() > 1;
    let vary_pairing = distinct(rows.iter().map(|r| r.pairing.clone())).len() > 1;
    let series_name = |r: &SummaryRow| {
        let mut parts = Vec::new();
        match kind {
            ReportKind::PairingCompare => parts.push(r.pairing.clone()),
            _ => parts.push(r.model.clone()),
        }
        if kind != ReportKind::QualitySweep && vary_beta {
            parts.push(format!("beta={}", r.beta));
        }
        if kind != ReportKind::QuantitySweep && vary_n {
            parts.push(format!("n={}", r.quantity));
        }
        if kind != ReportKind::PairingCompare && vary_pairing {
            parts.push(r.pairing.clone());
        }
        parts.join(" ")
    };
    let categories = distinct(rows.iter().map(category));
    let names = distinct(rows.iter().map(series_name));
    let series = names
        .iter()
        .map(|name| BarSeries {
            name: name.clone(),
            values: categories
                .iter()
                .map(|c| {
                    rows.iter()
                        .find(|r| &series_name(r) == name && &category(r) == c)
                        .map(|r| (r.mean, r.se))
                })
                .collect(),
        })
        .collect();
    let x_label = match kind {
        ReportKind::QualitySweep => "annotation quality (beta)",
        ReportKind::QuantitySweep => "annotations",
        ReportKind::PairingCompare => "model",
    };
    BarChart {
        title: format!("{kind}: {metric} (mean ± SE over seeds)"),
        x_label: x_label.into(),
        y_label: metric.into(),
        categories,
        series,
    }
}

/// Summarize `results` and write `<kind>.csv` and `<kind>.svg` to `out_dir`.
pub fn emit_report(
    results: &Path,
    kind: ReportKind,
    metric: &str,
    out_dir: &Path,
) -> Result<ReportOutput> {
    let rows = read_results(results)?;
    let summary = summarize(&rows, metric)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let summary_csv = out_dir.join(format!("{kind}.csv"));
    let mut w = csv::Writer::from_path(&summary_csv)?;
    for r in &summary {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&summary_csv, e))?;
    let svg = out_dir.join(format!("{kind}.svg"));
    fs::write(&svg, bar_chart_svg(&chart_for(kind, &summary, metric)))
        .map_err(|e| Error::io(&svg, e))?;
    Ok(ReportOutput {
        summary_csv,
        svg,
        rows: summary,
    })
}
