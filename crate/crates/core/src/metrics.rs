//! Per-run scores and per-cell aggregates.
//!
//! Percentages are on the 0-100 scale. Variances are sample variances
//! (n - 1 denominator, 0 for a single run): completeness and unclear
//! variances are taken over the per-run percentages, correctness and
//! completion variances over the 0/1 indicators.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::participants::ProfileKind;
use crate::schema::{
    compare_leaf, AgentMode, CanonicalValue, DataModelInstance, DataSchema, FieldValue,
    GroundTruthProfile, LeafKind, LeafPath,
};
use crate::transcript::{RunRecord, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub mode: AgentMode,
    pub profile: ProfileKind,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no runs to aggregate")]
    Empty,
    #[error("runs are scored against different leaf sets")]
    MixedLeaves,
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

fn tally<'a>(instance: &DataModelInstance, leaves: impl Iterator<Item = &'a LeafPath>) -> (usize, usize, usize) {
    let (mut filled, mut unclear, mut total) = (0, 0, 0);
    for path in leaves {
        total += 1;
        match instance.get(path) {
            Some(FieldValue::Filled(_)) => filled += 1,
            Some(FieldValue::Unclear) => unclear += 1,
            _ => {}
        }
    }
    (filled, unclear, total)
}

fn leaf_correct(value: Option<&FieldValue>, expected: &CanonicalValue) -> bool {
    compare_leaf(&LeafKind::Text, value.unwrap_or(&FieldValue::Null), expected)
}

/// Share of leaves that are filled or marked unclear.
pub fn completeness(instance: &DataModelInstance, schema: &DataSchema) -> f64 {
    let (filled, unclear, total) = tally(instance, schema.leaf_specs().iter().map(|l| &l.path));
    percent(filled + unclear, total)
}

pub fn unclear_score(instance: &DataModelInstance, schema: &DataSchema) -> f64 {
    let (_, unclear, total) = tally(instance, schema.leaf_specs().iter().map(|l| &l.path));
    percent(unclear, total)
}

/// Every leaf filled with its ground-truth value.
pub fn correctness_run(instance: &DataModelInstance, ground_truth: &GroundTruthProfile, schema: &DataSchema) -> bool {
    schema.leaf_specs().iter().all(|l| {
        ground_truth
            .expected(&l.path)
            .is_some_and(|e| compare_leaf(&l.kind, instance.get(&l.path).unwrap_or(&FieldValue::Null), e))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub completeness: f64,
    pub unclear: f64,
    pub correct: bool,
    /// Whether the run ended with `Complete`.
    pub complete: bool,
}

impl RunMetrics {
    /// Scores a record's final instance against the values it embeds.
    pub fn from_record(record: &RunRecord) -> Self {
        let (filled, unclear, total) = tally(&record.final_instance, record.expected.keys());
        let correct = !record.expected.is_empty()
            && record
                .expected
                .iter()
                .all(|(path, e)| leaf_correct(record.final_instance.get(path), e));
        Self {
            completeness: percent(filled + unclear, total),
            unclear: percent(unclear, total),
            correct,
            complete: record.termination == Termination::Complete,
        }
    }
}

/// Per leaf, the percentage of runs whose final value matches the expected one.
pub fn field_level_correctness(records: &[RunRecord]) -> Result<IndexMap<LeafPath, f64>, MetricsError> {
    let first = records.first().ok_or(MetricsError::Empty)?;
    if records
        .iter()
        .any(|r| r.expected.len() != first.expected.len() || !r.expected.keys().eq(first.expected.keys()))
    {
        return Err(MetricsError::MixedLeaves);
    }
    Ok(first
        .expected
        .keys()
        .map(|path| {
            let hits = records
                .iter()
                .filter(|r| leaf_correct(r.final_instance.get(path), &r.expected[path]))
                .count();
            (path.clone(), percent(hits, records.len()))
        })
        .collect())
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample variance, `(n * sum(x^2) - sum(x)^2) / (n * (n - 1))`; 0 when n < 2.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let s: f64 = xs.iter().sum();
    let s2: f64 = xs.iter().map(|x| x * x).sum();
    ((nf * s2 - s * s) / (nf * (nf - 1.0))).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub mean: f64,
    pub var: f64,
}

/// A rate in percent with the variance of its 0/1 indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateVar {
    pub rate: f64,
    pub var: f64,
}

fn rate_of(indicators: impl Iterator<Item = bool>) -> RateVar {
    let xs: Vec<f64> = indicators.map(|b| if b { 1.0 } else { 0.0 }).collect();
    let hits = xs.iter().filter(|&&x| x == 1.0).count();
    RateVar {
        rate: percent(hits, xs.len()),
        var: sample_variance(&xs),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub completeness: MeanVar,
    pub correctness: RateVar,
    pub unclear: MeanVar,
    pub completion: RateVar,
}

pub fn aggregate(runs: &[RunMetrics]) -> Result<Aggregate, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let stat = |f: fn(&RunMetrics) -> f64| {
        let xs: Vec<f64> = runs.iter().map(f).collect();
        MeanVar {
            mean: mean(&xs),
            var: sample_variance(&xs),
        }
    };
    Ok(Aggregate {
        n: runs.len(),
        completeness: stat(|r| r.completeness),
        correctness: rate_of(runs.iter().map(|r| r.correct)),
        unclear: stat(|r| r.unclear),
        completion: rate_of(runs.iter().map(|r| r.complete)),
    })
}

/// Everything reported for one (mode, profile) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub cell: Cell,
    pub n: usize,
    pub completeness: MeanVar,
    pub correctness: RateVar,
    pub unclear: MeanVar,
    pub completion: RateVar,
    pub field_level: IndexMap<LeafPath, f64>,
    pub terminations: IndexMap<String, usize>,
}

pub fn cell_aggregate(cell: Cell, records: &[RunRecord]) -> Result<CellAggregate, MetricsError> {
    let metrics: Vec<RunMetrics> = records.iter().map(RunMetrics::from_record).collect();
    let agg = aggregate(&metrics)?;
    let terminations = Termination::ALL
        .iter()
        .map(|t| {
            let count = records.iter().filter(|r| r.termination == *t).count();
            (t.as_str().to_string(), count)
        })
        .collect();
    Ok(CellAggregate {
        cell,
        n: agg.n,
        completeness: agg.completeness,
        correctness: agg.correctness,
        unclear: agg.unclear,
        completion: agg.completion,
        field_level: field_level_correctness(records)?,
        terminations,
    })
}
