//! Unoriented angular error metrics and benchmark reports.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Dot products beyond this are treated as broken unit vectors, not rounding.
const UNIT_SLACK: f64 = 1e-6;

pub const DEFAULT_TAUS: [f64; 2] = [5.0, 10.0];

/// Per-point angle in degrees between unoriented directions.
pub fn angular_errors(preds: &[Vec3], gts: &[Vec3]) -> Result<Vec<f64>> {
    Error::check_len(preds.len(), gts.len())?;
    preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            let d = p.dot(*g).abs();
            if d > 1.0 + UNIT_SLACK || !d.is_finite() {
                return Err(Error::NotUnit(d));
            }
            // same angle as acos(d) for unit inputs, without its loss of precision near 0
            Ok(p.cross(*g).norm().atan2(d).to_degrees())
        })
        .collect()
}

pub fn rmse_of_errors(errors_deg: &[f64]) -> f64 {
    if errors_deg.is_empty() {
        return 0.0;
    }
    (errors_deg.iter().map(|e| e * e).sum::<f64>() / errors_deg.len() as f64).sqrt()
}

/// Percentage of errors strictly below `tau_deg`.
pub fn pgp_of_errors(errors_deg: &[f64], tau_deg: f64) -> f64 {
    if errors_deg.is_empty() {
        return 0.0;
    }
    100.0 * errors_deg.iter().filter(|&&e| e < tau_deg).count() as f64 / errors_deg.len() as f64
}

/// Root mean square angular error in degrees.
pub fn rmse(preds: &[Vec3], gts: &[Vec3]) -> Result<f64> {
    Ok(rmse_of_errors(&angular_errors(preds, gts)?))
}

pub fn pgp(preds: &[Vec3], gts: &[Vec3], tau_deg: f64) -> Result<f64> {
    if !(tau_deg > 0.0) {
        return Err(Error::Range(format!("tau must be positive, got {tau_deg}")));
    }
    Ok(pgp_of_errors(&angular_errors(preds, gts)?, tau_deg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgpEntry {
    pub tau_deg: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub name: String,
    pub rmse_deg: f64,
    pub pgp: Vec<PgpEntry>,
    pub runtime_ms: f64,
}

impl ShapeRow {
    pub fn evaluate(name: &str, preds: &[Vec3], gts: &[Vec3], taus: &[f64], runtime_ms: f64) -> Result<Self> {
        let errors = angular_errors(preds, gts)?;
        Ok(Self {
            name: name.to_string(),
            rmse_deg: rmse_of_errors(&errors),
            pgp: taus
                .iter()
                .map(|&t| PgpEntry { tau_deg: t, percent: pgp_of_errors(&errors, t) })
                .collect(),
            runtime_ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub shapes: usize,
    pub rmse_deg: f64,
    pub pgp: Vec<PgpEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub taus: Vec<f64>,
    pub rows: Vec<ShapeRow>,
    /// Mean over shapes within each category, then the mean of the category
    /// means as `average`.
    pub categories: Vec<CategoryRow>,
    pub mean_rmse_deg: f64,
    pub config: serde_json::Value,
}

/// Benchmark category of a shape name, from PCPNet or synthetic suffixes.
pub fn category(name: &str) -> String {
    if name.ends_with("_ddist_minmax_layers") || name.ends_with("_stripes") {
        return "stripes".into();
    }
    if name.ends_with("_ddist_minmax") || name.ends_with("_gradient") {
        return "gradient".into();
    }
    if let Some((_, level)) = name.rsplit_once("_noise_white_") {
        return format!("noise {level}");
    }
    if let Some((_, level)) = name.rsplit_once("_noise_") {
        if let Ok(v) = level.parse::<f64>() {
            return format!("noise {:.2}%", v * 100.0);
        }
    }
    "none".into()
}

fn mean_pgp(rows: &[&ShapeRow], taus: &[f64]) -> Vec<PgpEntry> {
    taus.iter()
        .enumerate()
        .map(|(k, &t)| PgpEntry {
            tau_deg: t,
            percent: rows.iter().map(|r| r.pgp[k].percent).sum::<f64>() / rows.len() as f64,
        })
        .collect()
}

impl MetricReport {
    /// Aggregates are computed over rows sorted by name, so the input order
    /// does not change them.
    pub fn new(rows: Vec<ShapeRow>, taus: &[f64], config: serde_json::Value) -> Result<Self> {
        if rows.iter().any(|r| r.pgp.len() != taus.len()) {
            return Err(Error::InvalidConfig("rows evaluated on a different tau grid".into()));
        }
        let mut sorted: Vec<&ShapeRow> = rows.iter().collect();
        sorted.sort_by(|a, b| a.name.cmp(&b.name));

        let mut groups: BTreeMap<String, Vec<&ShapeRow>> = BTreeMap::new();
        for r in &sorted {
            groups.entry(category(&r.name)).or_default().push(r);
        }
        let mut categories: Vec<CategoryRow> = groups
            .iter()
            .map(|(c, rs)| CategoryRow {
                category: c.clone(),
                shapes: rs.len(),
                rmse_deg: rs.iter().map(|r| r.rmse_deg).sum::<f64>() / rs.len() as f64,
                pgp: mean_pgp(rs, taus),
            })
            .collect();
        if !categories.is_empty() {
            let k = categories.len() as f64;
            let avg = CategoryRow {
                category: "average".into(),
                shapes: sorted.len(),
                rmse_deg: categories.iter().map(|c| c.rmse_deg).sum::<f64>() / k,
                pgp: taus
                    .iter()
                    .enumerate()
                    .map(|(j, &t)| PgpEntry {
                        tau_deg: t,
                        percent: categories.iter().map(|c| c.pgp[j].percent).sum::<f64>() / k,
                    })
                    .collect(),
            };
            categories.push(avg);
        }
        let mean_rmse_deg = if sorted.is_empty() {
            0.0
        } else {
            sorted.iter().map(|r| r.rmse_deg).sum::<f64>() / sorted.len() as f64
        };
        Ok(Self { taus: taus.to_vec(), rows, categories, mean_rmse_deg, config })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::InvalidConfig(format!("unknown report format '{s}'"))),
        }
    }
}

fn tau_label(t: f64) -> String {
    format!("pgp{t}")
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// CSV: one row per shape, `shape,rmse_deg,pgp5,pgp10,runtime_ms` on the
/// default tau grid. JSON: the whole report.
pub fn emit_report(report: &MetricReport, format: ReportFormat, path: &Path) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let text = serde_json::to_string_pretty(report)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            write_atomic(path, |w| w.write_all(text.as_bytes()))
        }
        ReportFormat::Csv => write_atomic(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            let mut header = vec!["shape".to_string(), "rmse_deg".to_string()];
            header.extend(report.taus.iter().map(|&t| tau_label(t)));
            header.push("runtime_ms".into());
            out.write_record(&header).map_err(csv_err)?;
            for r in &report.rows {
                let mut rec = vec![r.name.clone(), r.rmse_deg.to_string()];
                rec.extend(r.pgp.iter().map(|p| p.percent.to_string()));
                rec.push(r.runtime_ms.to_string());
                out.write_record(&rec).map_err(csv_err)?;
            }
            out.flush()
        }),
    }
}

/// Category aggregates as CSV: `category,shapes,rmse_deg,pgp5,pgp10`.
pub fn emit_categories_csv(report: &MetricReport, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["category".to_string(), "shapes".into(), "rmse_deg".into()];
        header.extend(report.taus.iter().map(|&t| tau_label(t)));
        out.write_record(&header).map_err(csv_err)?;
        for c in &report.categories {
            let mut rec = vec![c.category.clone(), c.shapes.to_string(), c.rmse_deg.to_string()];
            rec.extend(c.pgp.iter().map(|p| p.percent.to_string()));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()
    })
}
