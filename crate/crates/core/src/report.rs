//! Comparison matrix recomputed from run files, rendered as markdown, CSV or
//! JSON.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::metrics::{cell_aggregate, Cell, CellAggregate, MeanVar, MetricsError, RateVar};
use crate::participants::ProfileKind;
use crate::schema::AgentMode;
use crate::transcript::{load_dir, PersistError, RunRecord};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no run files found in {0}")]
    NoRuns(String),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown format {other:?} (expected md, csv or json)")),
        }
    }
}

/// One row per cell, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonMatrix {
    pub rows: Vec<CellAggregate>,
}

const VARIANCE_NOTE: &str = "Cells show mean (sample variance, n - 1). Completeness and unclear \
variances are over per-run percentages (0-100); correctness and completion variances are over \
0/1 indicators.";

type CellText = fn(&CellAggregate) -> String;

fn mean_cell(m: &MeanVar) -> String {
    format!("{:.1} ({:.3})", m.mean, m.var)
}

fn rate_cell(r: &RateVar) -> String {
    format!("{:.1} ({:.3})", r.rate, r.var)
}

impl ComparisonMatrix {
    pub fn from_records(records: &[RunRecord]) -> Result<Self, ReportError> {
        let mut cells: Vec<(Cell, Vec<RunRecord>)> = Vec::new();
        for r in records {
            let cell = Cell {
                mode: r.config.mode,
                profile: r.config.profile,
            };
            match cells.iter_mut().find(|(c, _)| *c == cell) {
                Some((_, rs)) => rs.push(r.clone()),
                None => cells.push((cell, vec![r.clone()])),
            }
        }
        let rows = cells
            .into_iter()
            .map(|(cell, rs)| cell_aggregate(cell, &rs))
            .collect::<Result<_, _>>()?;
        Ok(Self { rows })
    }

    /// Recomputes every score from the `*.jsonl` files in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, ReportError> {
        let records = load_dir(dir)?;
        if records.is_empty() {
            return Err(ReportError::NoRuns(dir.display().to_string()));
        }
        Self::from_records(&records)
    }

    pub fn row(&self, mode: AgentMode, profile: ProfileKind) -> Option<&CellAggregate> {
        self.rows.iter().find(|r| r.cell.mode == mode && r.cell.profile == profile)
    }

    pub fn render(&self, format: ReportFormat) -> Result<String, ReportError> {
        Ok(match format {
            ReportFormat::Markdown => self.to_markdown(),
            ReportFormat::Csv => self.to_csv()?,
            ReportFormat::Json => self.to_json(),
        })
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Evaluation summary\n\n");
        out.push_str("| mode | profile | n | completeness | correctness | unclear | completion |\n");
        out.push_str("|---|---|---:|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.cell.mode,
                r.cell.profile,
                r.n,
                mean_cell(&r.completeness),
                rate_cell(&r.correctness),
                mean_cell(&r.unclear),
                rate_cell(&r.completion),
            );
        }
        let _ = writeln!(out, "\n{VARIANCE_NOTE}\n");

        let metrics: [(&str, CellText); 3] = [
            ("Completeness", |r| mean_cell(&r.completeness)),
            ("Correctness", |r| rate_cell(&r.correctness)),
            ("Unclear", |r| mean_cell(&r.unclear)),
        ];
        for (title, cell) in metrics {
            let _ = writeln!(out, "## {title}\n");
            out.push_str("| profile | one_shot | adaptive |\n|---|---:|---:|\n");
            for profile in [ProfileKind::Standard, ProfileKind::Ambiguous] {
                let value = |mode| self.row(mode, profile).map(cell).unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    out,
                    "| {profile} | {} | {} |",
                    value(AgentMode::OneShot),
                    value(AgentMode::Adaptive)
                );
            }
            out.push('\n');
        }

        out.push_str("## Field-level correctness (%)\n\n| leaf |");
        for r in &self.rows {
            let _ = write!(out, " {} / {} |", r.cell.mode, r.cell.profile);
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(self.rows.len()));
        out.push('\n');
        if let Some(first) = self.rows.first() {
            for path in first.field_level.keys() {
                let _ = write!(out, "| `{path}` |");
                for r in &self.rows {
                    match r.field_level.get(path) {
                        Some(v) => {
                            let _ = write!(out, " {v:.1} |");
                        }
                        None => out.push_str(" - |"),
                    }
                }
                out.push('\n');
            }
        }

        out.push_str("\n## Terminations\n\n| mode | profile |");
        let reasons: Vec<&String> = self.rows.first().map(|r| r.terminations.keys().collect()).unwrap_or_default();
        for reason in &reasons {
            let _ = write!(out, " {reason} |");
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---:|".repeat(reasons.len()));
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "| {} | {} |", r.cell.mode, r.cell.profile);
            for reason in &reasons {
                let _ = write!(out, " {} |", r.terminations.get(*reason).copied().unwrap_or(0));
            }
            out.push('\n');
        }
        out
    }

    /// Rows of `mode,profile,metric,mean,var,n`; field-level rows have an
    /// empty `var`.
    pub fn to_csv(&self) -> Result<String, ReportError> {
        let csv_err = |e: csv::Error| ReportError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["mode", "profile", "metric", "mean", "var", "n"]).map_err(csv_err)?;
        for r in &self.rows {
            let mode = r.cell.mode.as_str();
            let profile = r.cell.profile.as_str();
            let n = r.n.to_string();
            let stats = [
                ("completeness", r.completeness.mean, r.completeness.var),
                ("correctness", r.correctness.rate, r.correctness.var),
                ("unclear", r.unclear.mean, r.unclear.var),
                ("completion", r.completion.rate, r.completion.var),
            ];
            for (metric, mean, var) in stats {
                w.write_record([mode, profile, metric, &mean.to_string(), &var.to_string(), &n])
                    .map_err(csv_err)?;
            }
            for (path, pct) in &r.field_level {
                let metric = format!("field_level:{path}");
                w.write_record([mode, profile, &metric, &pct.to_string(), "", &n])
                    .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| ReportError::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| ReportError::Csv(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.rows).expect("aggregates serialize");
        s.push('\n');
        s
    }
}
