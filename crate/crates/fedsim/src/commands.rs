//! Implementations of the `fedsim` subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fedsim_core::analysis::{correlate_variance_accuracy, suite_similarity, SimilarityMode, SimilarityReport};
use fedsim_core::exec::Executor;
use fedsim_core::harness::{run_grid, run_simulation, ExperimentConfig, GridAxis, GridValue, SCORE_TAIL_FRACTION};
use fedsim_core::server::StrategyKind;
use serde::Serialize;

use crate::error::{IoError, IoResult};
use crate::metrics::{read_csv_file, write_csv_file, write_json_file, CsvRow, GridSummaryFile};
use crate::suite_file::{export_suite, import_suite};

/// Command-line values that replace config-file fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub strategy: Option<StrategyKind>,
    pub server_fraction: Option<f64>,
    pub epochs: Option<usize>,
    pub rounds: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ExperimentConfig) -> ExperimentConfig {
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(s) = self.strategy {
            cfg.server.strategy = s;
        }
        if let Some(f) = self.server_fraction {
            cfg.suite.server_fraction = f;
        }
        if let Some(e) = self.epochs {
            cfg.local.epochs = e;
        }
        if let Some(r) = self.rounds {
            cfg.total_rounds = r;
        }
        if let Some(o) = &self.out {
            cfg.output_path = o.display().to_string();
        }
        cfg
    }
}

/// `out` itself for single-seed runs, otherwise `stem-seed<N>.ext`.
pub fn csv_path_for(out: &Path, seed: u64, n_seeds: usize) -> PathBuf {
    if n_seeds == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}-seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}-seed{seed}"),
    };
    out.with_file_name(name)
}

/// Runs every seed of `cfg` and writes one CSV per seed.
pub fn run_command<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> IoResult<Vec<PathBuf>> {
    cfg.validate()?;
    let out = PathBuf::from(&cfg.output_path);
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        let records = run_simulation(cfg, seed, exec)?;
        let path = csv_path_for(&out, seed, cfg.seeds.len());
        write_csv_file(&path, &records, seed)?;
        written.push(path);
    }
    Ok(written)
}

pub fn parse_grid_values(axis: GridAxis, text: &str) -> IoResult<Vec<GridValue>> {
    let bad = |item: &str| IoError::Format(format!("invalid {axis:?} grid value {item:?}"));
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| match axis {
            GridAxis::ServerFraction => item.parse().map(GridValue::Fraction).map_err(|_| bad(item)),
            GridAxis::LocalEpochs => item.parse().map(GridValue::Epochs).map_err(|_| bad(item)),
            GridAxis::Strategy => item.parse().map(GridValue::Strategy).map_err(|_| bad(item)),
        })
        .collect()
}

/// Runs the sweep, writes the JSON summary to `out` and, when `csv_dir` is
/// given, one CSV per cell.
pub fn grid_command<E: Executor>(
    cfg: &ExperimentConfig,
    axis: GridAxis,
    values: &[GridValue],
    out: &Path,
    csv_dir: Option<&Path>,
    exec: &E,
) -> IoResult<GridSummaryFile> {
    let grid = run_grid(cfg, axis, values, exec)?;
    if let Some(dir) = csv_dir {
        std::fs::create_dir_all(dir).map_err(crate::error::file_err(dir))?;
        for (k, run) in grid.runs.iter().enumerate() {
            let name = format!("cell{k:03}-{}-seed{}.csv", run.strategy.name(), run.seed);
            write_csv_file(&dir.join(name), &run.records, run.seed)?;
        }
    }
    let summary = GridSummaryFile::from_result(&grid);
    write_json_file(out, &summary)?;
    Ok(summary)
}

/// Mean over seeds of each seed's tail-averaged metric.
pub fn csv_score(rows: &[CsvRow]) -> Option<f64> {
    let mut by_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().push(r.metric);
    }
    if by_seed.is_empty() {
        return None;
    }
    let scores: Vec<f64> = by_seed
        .values()
        .map(|m| {
            let tail = ((m.len() as f64 * SCORE_TAIL_FRACTION) as usize).max(1);
            m[m.len() - tail..].iter().sum::<f64>() / tail as f64
        })
        .collect();
    Some(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisOutput {
    pub reports: Vec<SimilarityReport>,
    /// Present when metrics were joined and the correlation is defined.
    pub variance_accuracy_correlation: Option<f64>,
}

/// Similarity reports for exported suites, joined with the matching run
/// CSVs (by position) when given.
pub fn analyze_command(suites: &[PathBuf], metrics: &[PathBuf], mode: SimilarityMode) -> IoResult<AnalysisOutput> {
    if !metrics.is_empty() && metrics.len() != suites.len() {
        return Err(IoError::Format(format!(
            "{} metrics files for {} suites; pass one per suite or none",
            metrics.len(),
            suites.len()
        )));
    }
    let mut reports = Vec::with_capacity(suites.len());
    for (k, path) in suites.iter().enumerate() {
        let suite = import_suite(path)?;
        let mut report = suite_similarity(&suite, mode)?;
        if let Some(m) = metrics.get(k) {
            report.accuracy_mean = csv_score(&read_csv_file(m)?);
        }
        reports.push(report);
    }
    let variance_accuracy_correlation = if !metrics.is_empty() && reports.len() >= 3 {
        correlate_variance_accuracy(&reports)?
    } else {
        None
    };
    Ok(AnalysisOutput {
        reports,
        variance_accuracy_correlation,
    })
}

pub fn export_tasks_command(cfg: &ExperimentConfig, seed: u64, out: &Path) -> IoResult<()> {
    let suite = cfg.suite.build(seed)?;
    export_suite(out, &suite)
}
