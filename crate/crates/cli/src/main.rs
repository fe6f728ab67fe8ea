use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tubecast::experiment::{self, ExperimentError, RunConfig};
use tubecast::metrics::{self, IntervalForecast};
use tubecast::series::{parse_csv, write_csv, ColumnConfig, SeriesError};
use tubecast::synth::{SyntheticKind, SyntheticSpec};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "tubecast", version, about = "Prediction intervals for time series with the tube loss")]
struct Cli {
    /// TOML run config; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic series to <out>/series.csv.
    Synth {
        #[arg(long, value_parser = parse_kind)]
        kind: Option<SyntheticKind>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train one model, evaluate it on the test segment and write artifacts.
    Train,
    /// Interval forecasts from a saved model and a context CSV.
    Forecast {
        /// model.json, or the lower model of a quantile pair.
        #[arg(long)]
        model: PathBuf,
        /// Upper model of a quantile pair.
        #[arg(long)]
        upper: Option<PathBuf>,
        #[arg(long)]
        context: PathBuf,
        #[arg(long, default_value = "timestamp")]
        timestamp_column: String,
        #[arg(long, default_value = "value")]
        value_column: String,
    },
    /// PICP, MPIW and region counts of a forecast CSV.
    Evaluate {
        #[arg(long)]
        forecast: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        r: f64,
    },
    /// Train every configured method and architecture and rank them.
    Benchmark,
    /// Print the effective config as TOML.
    PrintConfig,
}

fn parse_kind(s: &str) -> Result<SyntheticKind, String> {
    match s {
        "sine_hetero" => Ok(SyntheticKind::SineHetero),
        "ar1" => Ok(SyntheticKind::Ar1),
        "lognormal_skew" => Ok(SyntheticKind::LognormalSkew),
        _ => Err(format!("unknown kind `{s}` (sine_hetero, ar1, lognormal_skew)")),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, ExperimentError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_series(path: &Path, columns: &ColumnConfig) -> Result<tubecast::series::TimeSeries, ExperimentError> {
    let file = File::open(path).map_err(io(path))?;
    Ok(parse_csv(BufReader::new(file), columns)?)
}

fn run(cli: &Cli) -> Result<(), ExperimentError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::PrintConfig => {
            cfg.validate()?;
            print!("{}", cfg.to_toml());
        }
        Command::Synth { kind, n } => {
            let mut spec = cfg
                .data
                .synthetic
                .unwrap_or_else(|| SyntheticSpec::new(SyntheticKind::SineHetero, 5000, 0));
            if let Some(kind) = kind {
                spec.kind = *kind;
            }
            if let Some(n) = n {
                spec.n = *n;
            }
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            spec.validate().map_err(ExperimentError::Config)?;
            let series = spec.generate()?;
            std::fs::create_dir_all(&cfg.out_dir).map_err(io(&cfg.out_dir))?;
            let path = cfg.out_dir.join("series.csv");
            let file = File::create(&path).map_err(io(&path))?;
            write_csv(&series, std::io::BufWriter::new(file)).map_err(io(&path))?;
            println!("{}", path.display());
        }
        Command::Train => {
            let outcome = experiment::run(&cfg)?;
            experiment::write_outcome(&cfg, &outcome, &cfg.out_dir)?;
            println!("{}", outcome.test.to_json());
        }
        Command::Forecast {
            model,
            upper,
            context,
            timestamp_column,
            value_column,
        } => {
            let predictor = experiment::load_predictor(model, upper.as_deref())?;
            let columns = ColumnConfig {
                timestamp: Some(timestamp_column.clone()),
                value: value_column.clone(),
            };
            let series = read_series(context, &columns)?;
            let forecast = experiment::forecast_context(&predictor, &series)?;
            let path = cfg.out_dir.join("forecast.csv");
            experiment::write_forecast(&forecast, &path)?;
            println!("{}", path.display());
        }
        Command::Evaluate { forecast, r } => {
            let file = File::open(forecast).map_err(io(forecast))?;
            let fc = IntervalForecast::read_csv(BufReader::new(file))?;
            let summary = metrics::evaluate(&fc, *r)?;
            println!("{}", summary.to_json());
        }
        Command::Benchmark => {
            let outcome = experiment::benchmark(&cfg)?;
            experiment::write_benchmark(&outcome, &cfg.out_dir)?;
            for row in &outcome.rows {
                if let Err(e) = &row.result {
                    eprintln!("row {} failed: {e}", row.name);
                }
            }
            print!("{}", metrics::ranking_table(&outcome.ranking));
            println!();
            print!("{}", metrics::improvement_text(&outcome.improvement));
        }
    }
    Ok(())
}

fn exit_code(err: &ExperimentError) -> u8 {
    match err {
        ExperimentError::Config(_) => EXIT_CONFIG,
        ExperimentError::Io { .. } => EXIT_INPUT,
        ExperimentError::Data(SeriesError::InvalidSplit(_) | SeriesError::ZeroLag) => EXIT_CONFIG,
        ExperimentError::Data(_) => EXIT_INPUT,
        e if e.is_divergence() => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
