//! Distance errors, distance-range histograms, region accuracy and report
//! files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Location;
use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const DEFAULT_EDGES_KM: [f64; 6] = [1.0, 10.0, 30.0, 60.0, 100.0, 150.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    HaversineKm,
    EuclideanDegrees,
}

pub fn distance(l1: Location, l2: Location, metric: Metric) -> Result<f64> {
    l1.validate()?;
    l2.validate()?;
    Ok(match metric {
        Metric::EuclideanDegrees => (l1.lat - l2.lat).hypot(l1.lon - l2.lon),
        Metric::HaversineKm => {
            let (p1, p2) = (l1.lat.to_radians(), l2.lat.to_radians());
            let dp = p2 - p1;
            let dl = (l2.lon - l1.lon).to_radians();
            let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
            2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
        }
    })
}

/// Pairs predictions with truths by id. Every prediction needs a truth and
/// vice versa; the first offending id is reported.
pub fn align<'a>(
    predictions: &'a [(String, Location)],
    truths: &'a [(String, Location)],
) -> Result<Vec<(Location, Location)>> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    let truth: HashMap<&str, Location> = truths.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let mut out = Vec::with_capacity(predictions.len());
    for (id, p) in predictions {
        let t = truth.get(id.as_str()).ok_or_else(|| Error::IdMismatch(id.clone()))?;
        out.push((*p, *t));
    }
    if truths.len() != predictions.len() {
        let seen: HashMap<&str, ()> = predictions.iter().map(|(id, _)| (id.as_str(), ())).collect();
        if let Some((id, _)) = truths.iter().find(|(id, _)| !seen.contains_key(id.as_str())) {
            return Err(Error::IdMismatch(id.clone()));
        }
    }
    Ok(out)
}

pub fn errors(pairs: &[(Location, Location)], metric: Metric) -> Result<Vec<f64>> {
    pairs.iter().map(|&(p, t)| distance(p, t, metric)).collect()
}

/// Average distance error over aligned pairs.
pub fn ade(pairs: &[(Location, Location)], metric: Metric) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    let e = errors(pairs, metric)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lower: f64,
    /// `None` for the overflow bucket.
    pub upper: Option<f64>,
    pub count: usize,
    pub fraction: f64,
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.is_empty() || edges.iter().any(|e| !e.is_finite() || *e <= 0.0) {
        return Err(Error::InvalidArgument("edges must be positive and finite".into()));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("edges must be strictly increasing".into()));
    }
    Ok(())
}

/// Buckets `[0, e0), [e0, e1), ..., [e_last, inf)` over the given errors.
pub fn histogram_of(errors: &[f64], edges: &[f64]) -> Result<Vec<Bucket>> {
    check_edges(edges)?;
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no errors to bin".into()));
    }
    let mut counts = vec![0usize; edges.len() + 1];
    for &e in errors {
        counts[edges.partition_point(|&x| x <= e)] += 1;
    }
    let n = errors.len() as f64;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &count)| Bucket {
            lower: if i == 0 { 0.0 } else { edges[i - 1] },
            upper: edges.get(i).copied(),
            count,
            fraction: count as f64 / n,
        })
        .collect())
}

pub fn error_histogram(pairs: &[(Location, Location)], edges: &[f64], metric: Metric) -> Result<Vec<Bucket>> {
    histogram_of(&errors(pairs, metric)?, edges)
}

/// Fraction of queries whose selected region equals the generating one.
/// `to_truth` maps a learned region index to a true region index.
pub fn region_accuracy(
    predicted: &[(String, usize)],
    truth: &HashMap<String, usize>,
    to_truth: &[usize],
) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    let mut hits = 0usize;
    for (id, r) in predicted {
        let t = truth.get(id).ok_or_else(|| Error::IdMismatch(id.clone()))?;
        let mapped = to_truth
            .get(*r)
            .ok_or_else(|| Error::InvalidArgument(format!("region {r} outside alignment")))?;
        hits += usize::from(mapped == t);
    }
    Ok(hits as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub ade: f64,
    pub n_queries: usize,
    pub histogram: Vec<Bucket>,
    /// Where the bucket edges came from, e.g. "default" or "user".
    pub edges_source: String,
    pub region_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn build(pairs: &[(Location, Location)], edges: &[f64], edges_source: &str, metric: Metric) -> Result<Self> {
        let errs = errors(pairs, metric)?;
        if errs.is_empty() {
            return Err(Error::InvalidArgument("no predictions".into()));
        }
        Ok(EvalReport {
            metric,
            ade: errs.iter().sum::<f64>() / errs.len() as f64,
            n_queries: errs.len(),
            histogram: histogram_of(&errs, edges)?,
            edges_source: edges_source.to_owned(),
            region_accuracy: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// CSV column order: `kind,lower,upper,count,fraction,ade,n_queries,region_accuracy`.
/// One `bucket` row per bucket, then a `summary` row.
pub const CSV_HEADER: &str = "kind,lower,upper,count,fraction,ade,n_queries,region_accuracy";

pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut s = String::new();
            writeln!(s, "{CSV_HEADER}").unwrap();
            for b in &report.histogram {
                let upper = b.upper.map(|u| u.to_string()).unwrap_or_else(|| "inf".into());
                writeln!(s, "bucket,{},{},{},{},,,", b.lower, upper, b.count, b.fraction).unwrap();
            }
            let acc = report.region_accuracy.map(|a| a.to_string()).unwrap_or_default();
            writeln!(s, "summary,,,,,{},{},{}", report.ade, report.n_queries, acc).unwrap();
            Ok(s)
        }
    }
}

pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_report(report, format)?).map_err(|e| Error::io(path, e))
}
