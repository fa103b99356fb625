use std::io::{Read, Write};
use std::path::Path;

use fedsim_core::harness::{GridAxis, GridResult, GridValue, RoundRecord};
use fedsim_core::model::MetricKind;
use serde::{Deserialize, Serialize};

use crate::error::{file_err, IoResult};

pub const CSV_HEADER: &str = "round,strategy,seed,metric,theta_norm,client_grad_evals,server_grad_evals,beta_used";

/// One line of a run's metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub round: usize,
    pub strategy: String,
    pub seed: u64,
    pub metric: f64,
    pub theta_norm: f64,
    pub client_grad_evals: u64,
    pub server_grad_evals: u64,
    pub beta_used: f64,
}

impl CsvRow {
    pub fn from_record(r: &RoundRecord, seed: u64) -> Self {
        CsvRow {
            round: r.round,
            strategy: r.strategy.name().to_string(),
            seed,
            metric: r.personalized_metric,
            theta_norm: r.theta_norm,
            client_grad_evals: r.client_grad_evals,
            server_grad_evals: r.server_grad_evals,
            beta_used: r.beta_used,
        }
    }
}

pub fn write_csv<W: Write>(out: W, records: &[RoundRecord], seed: u64) -> IoResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow::from_record(r, seed))?;
    }
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_csv_file(path: &Path, records: &[RoundRecord], seed: u64) -> IoResult<()> {
    let file = std::fs::File::create(path).map_err(file_err(path))?;
    write_csv(std::io::BufWriter::new(file), records, seed)
}

pub fn read_csv<R: Read>(input: R) -> IoResult<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<CsvRow>, _>>()?;
    Ok(rows)
}

pub fn read_csv_file(path: &Path) -> IoResult<Vec<CsvRow>> {
    read_csv(std::fs::File::open(path).map_err(file_err(path))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub strategy: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSummary {
    pub value: GridValue,
    pub runs: usize,
    pub mean: f64,
    pub stddev: f64,
    pub per_seed: Vec<SeedScore>,
}

/// Per-value mean and standard deviation of a grid's run scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummaryFile {
    pub axis: GridAxis,
    pub metric_kind: MetricKind,
    pub values: Vec<ValueSummary>,
}

impl GridSummaryFile {
    pub fn from_result(grid: &GridResult) -> Self {
        let values = grid
            .summary
            .iter()
            .map(|s| ValueSummary {
                value: s.value,
                runs: s.runs,
                mean: s.mean,
                stddev: s.stddev,
                per_seed: grid
                    .runs
                    .iter()
                    .filter(|r| r.value == s.value)
                    .map(|r| SeedScore {
                        seed: r.seed,
                        strategy: r.strategy.name().to_string(),
                        score: r.score,
                    })
                    .collect(),
            })
            .collect();
        GridSummaryFile {
            axis: grid.axis,
            metric_kind: grid.metric_kind,
            values,
        }
    }
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(file_err(path))?;
    Ok(())
}
