use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fedsim::commands::{
    analyze_command, export_tasks_command, grid_command, parse_grid_values, run_command, Overrides,
};
use fedsim::config::load_config;
use fedsim::metrics::write_json_file;
use fedsim::RayonExecutor;
use fedsim_core::analysis::SimilarityMode;
use fedsim_core::harness::{ExperimentConfig, GridAxis};
use fedsim_core::server::StrategyKind;

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Personalized federated learning simulator")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML experiment config; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    server_fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self, out: Option<PathBuf>) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        let cfg = Overrides {
            seed: self.seed,
            strategy: self.strategy,
            server_fraction: self.server_fraction,
            epochs: self.epochs,
            rounds: self.rounds,
            out,
        }
        .apply(base);
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    ServerFraction,
    LocalEpochs,
    Strategy,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    MeanImage,
    Pairwise,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; writes one metrics CSV per seed.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Metrics CSV (overrides output_path).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one axis over every configured seed; writes a JSON summary.
    Grid {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated values, e.g. `0,0.01,0.025,0.05`.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write every cell's metrics CSV here.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
    /// SSIM analysis of exported suites, optionally joined with run CSVs.
    Analyze {
        #[arg(long = "suite", required = true)]
        suites: Vec<PathBuf>,
        /// One run CSV per suite, in the same order.
        #[arg(long = "metrics")]
        metrics: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "mean-image")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the configured task suite and save it.
    ExportTasks {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let exec = RayonExecutor;
    match cli.command {
        Command::Run { cfg, out } => {
            let cfg = cfg.resolve(out)?;
            for path in run_command(&cfg, &exec)? {
                println!("{}", path.display());
            }
        }
        Command::Grid {
            cfg,
            axis,
            values,
            out,
            csv_dir,
        } => {
            let cfg = cfg.resolve(None)?;
            let axis = match axis {
                AxisArg::ServerFraction => GridAxis::ServerFraction,
                AxisArg::LocalEpochs => GridAxis::LocalEpochs,
                AxisArg::Strategy => GridAxis::Strategy,
            };
            let values = parse_grid_values(axis, &values)?;
            let summary = grid_command(&cfg, axis, &values, &out, csv_dir.as_deref(), &exec)?;
            for v in &summary.values {
                println!("{:?}\tmean={}\tstddev={}\truns={}", v.value, v.mean, v.stddev, v.runs);
            }
        }
        Command::Analyze {
            suites,
            metrics,
            mode,
            out,
        } => {
            let mode = match mode {
                ModeArg::MeanImage => SimilarityMode::MeanImage,
                ModeArg::Pairwise => SimilarityMode::Pairwise,
            };
            let result = analyze_command(&suites, &metrics, mode)?;
            write_json_file(&out, &result)?;
            if let Some(r) = result.variance_accuracy_correlation {
                println!("variance/accuracy correlation: {r}");
            }
        }
        Command::ExportTasks { cfg, out } => {
            let cfg = cfg.resolve(None)?;
            export_tasks_command(&cfg, cfg.seeds[0], &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}
