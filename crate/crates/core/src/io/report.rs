//! CSV and JSON reports: per-step ID trajectories and perplexity correlations.
//!
//! Trajectory CSV columns: `prompt_id,layer,estimator,step,id_value,n_used`.
//! Correlation CSV columns: `prompt_id,perplexity,id_value`, followed by one
//! `# pearson_r=..,spearman_rho=..` line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::{Estimator, IdEstimate, Layer, Trajectory};
use crate::correlation::{CorrelationPair, CorrelationResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub prompt_id: String,
    pub layer: Layer,
    pub estimator: Estimator,
    pub step: u32,
    pub id_value: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Trajectories { rows: Vec<TrajectoryRow> },
    Correlation(CorrelationResult),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl ReportFormat {
    /// `.json` selects JSON; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

fn row_key(r: &TrajectoryRow) -> (String, String, Estimator, u32) {
    (r.prompt_id.clone(), r.layer.to_string(), r.estimator, r.step)
}

impl Report {
    pub fn trajectories(mut rows: Vec<TrajectoryRow>) -> Self {
        rows.sort_by_cached_key(row_key);
        Report::Trajectories { rows }
    }

    fn is_empty(&self) -> bool {
        match self {
            Report::Trajectories { rows } => rows.is_empty(),
            Report::Correlation(c) => c.pairs.is_empty(),
        }
    }
}

pub fn write_report(report: &Report, format: ReportFormat, mut out: impl Write) -> Result<()> {
    if report.is_empty() {
        return Err(Error::input("refusing to emit an empty report"));
    }
    let io = |e| Error::io("<report>", e);
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, report)?;
            out.write_all(b"\n").map_err(io)?;
        }
        ReportFormat::Csv => match report {
            Report::Trajectories { rows } => {
                let mut sorted: Vec<&TrajectoryRow> = rows.iter().collect();
                sorted.sort_by_cached_key(|r| row_key(r));
                let mut w = csv::Writer::from_writer(&mut out);
                for row in sorted {
                    w.serialize(row)?;
                }
                w.flush().map_err(io)?;
            }
            Report::Correlation(c) => {
                {
                    let mut w = csv::Writer::from_writer(&mut out);
                    for pair in &c.pairs {
                        w.serialize(pair)?;
                    }
                    w.flush().map_err(io)?;
                }
                writeln!(out, "# pearson_r={},spearman_rho={}", c.pearson_r, c.spearman_rho).map_err(io)?;
            }
        },
    }
    out.flush().map_err(io)
}

pub fn emit_report(report: &Report, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_report(report, format, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

pub fn parse_trajectory_csv(r: impl Read) -> Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::new();
    for row in csv_reader(r).deserialize() {
        let row: TrajectoryRow = row?;
        if !(row.id_value.is_finite() && row.id_value > 0.0) {
            return Err(Error::input(format!(
                "{} step {}: id_value {} is not a positive number",
                row.prompt_id, row.step, row.id_value
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_trajectory_csv(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory_csv(file)
}

pub fn parse_correlation_csv(r: impl Read) -> Result<Vec<CorrelationPair>> {
    csv_reader(r).deserialize().map(|p| p.map_err(Error::from)).collect()
}

/// Perplexity scores keyed by prompt id, as written by the perplexity scorer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerplexityTable {
    /// From a `# surrogate_model_id=...` header comment, when present.
    pub surrogate_model_id: Option<String>,
    pub entries: Vec<(String, f64)>,
}

#[derive(Deserialize)]
struct PerplexityRow {
    prompt_id: String,
    perplexity: f64,
}

pub fn parse_perplexity_csv(text: &str) -> Result<PerplexityTable> {
    let surrogate_model_id = text
        .lines()
        .filter_map(|l| l.trim().strip_prefix('#'))
        .find_map(|l| l.trim().strip_prefix("surrogate_model_id="))
        .map(|s| s.trim().to_string());
    let mut entries = Vec::new();
    for row in csv_reader(text.as_bytes()).deserialize() {
        let row: PerplexityRow = row?;
        if !(row.perplexity.is_finite() && row.perplexity >= 1.0) {
            return Err(Error::input(format!(
                "{}: perplexity {} is not a finite value >= 1",
                row.prompt_id, row.perplexity
            )));
        }
        entries.push((row.prompt_id, row.perplexity));
    }
    Ok(PerplexityTable {
        surrogate_model_id,
        entries,
    })
}

pub fn read_perplexity_csv(path: impl AsRef<Path>) -> Result<PerplexityTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_perplexity_csv(&text)
}

/// Groups rows by (prompt_id, layer, estimator) into step-ordered trajectories.
pub fn trajectories_from_rows(rows: &[TrajectoryRow]) -> Result<Vec<Trajectory>> {
    let mut groups: BTreeMap<(String, String, Estimator), (Layer, Vec<&TrajectoryRow>)> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.prompt_id.clone(), row.layer.to_string(), row.estimator))
            .or_insert_with(|| (row.layer.clone(), Vec::new()))
            .1
            .push(row);
    }
    groups
        .into_iter()
        .map(|((prompt_id, _, estimator), (layer, mut group))| {
            group.sort_by_key(|r| r.step);
            let steps = group
                .iter()
                .map(|r| Ok((r.step, IdEstimate::from_report(r.id_value, r.estimator, r.n_used)?)))
                .collect::<Result<Vec<_>>>()?;
            Trajectory::new(layer, prompt_id, estimator, steps)
        })
        .collect()
}
