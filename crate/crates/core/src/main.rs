use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Duration, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use windcast::diurnal;
use windcast::kernel_model::{CgOptions, KernelParams};
use windcast::lagset::{self, Design, DesignSpec};
use windcast::model::{Forecaster, KrrConfig, ModelConfig, ModelKind};
use windcast::rolling::{self, BacktestOptions, PolicyKind, UpdatePolicy};
use windcast::select::{write_cv_csv, CenterPolicy, CvSettings, Grid};
use windcast::series::{self, format_instant, parse_timestamp, CsvSchema, WindSeries};
use windcast::sweep::{self, CompareAxis, ExperimentConfig};

/// Exit status when the run completed but some sweep cells failed.
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "windcast", version, about = "Wind speed forecasting from a single anemometer")]
struct Cli {
    /// Tabular output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Resample a raw anemometer CSV onto the hourly grid.
    Ingest(IngestArgs),
    /// Run the design sweep described by a TOML config.
    Sweep(SweepArgs),
    /// Fit one forecaster and save it as JSON.
    Train(TrainArgs),
    /// Forecast every valid anchor of a series with a saved model.
    Predict(PredictArgs),
    /// Rolling-window backtest of one design.
    Backtest(BacktestArgs),
    /// NRMSE differences between sweep cells along one axis.
    Compare(CompareArgs),
    /// Monthly diurnal-cycle strength of a series.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct IngestArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value = "timestamp")]
    col_time: String,
    #[arg(long, default_value = "speed")]
    col_speed: String,
    /// Direction column; pass an empty string when the export has none.
    #[arg(long, default_value = "direction")]
    col_dir: String,
    /// Longest hole (minutes) bridged by widening the averaging window.
    #[arg(long, default_value_t = 60)]
    max_gap_minutes: i64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Exit 0 even if some cells failed.
    #[arg(long)]
    allow_partial: bool,
}

#[derive(Args)]
struct TaskArgs {
    /// Hourly series CSV written by `ingest`.
    #[arg(long)]
    series: PathBuf,
    #[arg(long, default_value = "zm-s")]
    design: Design,
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    #[arg(long, default_value_t = 24)]
    memory: usize,
    #[arg(long, default_value = "krr")]
    model: ModelKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    krr: KrrArgs,
}

#[derive(Args)]
struct KrrArgs {
    /// Fixed kernel width; with --lambda skips cross-validation.
    #[arg(long, requires = "lambda")]
    sigma: Option<f64>,
    #[arg(long, requires = "sigma")]
    lambda: Option<f64>,
    /// Comma-separated coarse sigma axis.
    #[arg(long, value_delimiter = ',')]
    sigma_grid: Option<Vec<f64>>,
    /// Comma-separated coarse lambda axis.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    refine_factor: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Nyström centers; default 10 sqrt(n).
    #[arg(long)]
    centers: Option<usize>,
    #[arg(long, default_value_t = 1e-7)]
    cg_tolerance: f64,
    #[arg(long, default_value_t = 500)]
    cg_max_iters: usize,
    #[arg(long)]
    no_standardize: bool,
}

impl KrrArgs {
    fn config(&self) -> Result<KrrConfig, String> {
        let defaults = Grid::default();
        let grid = Grid::new(
            self.sigma_grid.clone().unwrap_or(defaults.sigma),
            self.lambda_grid.clone().unwrap_or(defaults.lambda),
        )
        .map_err(|e| e.to_string())?;
        let params = match (self.sigma, self.lambda) {
            (Some(s), Some(l)) => Some(KernelParams::new(s, l).map_err(|e| e.to_string())?),
            _ => None,
        };
        Ok(KrrConfig {
            grid,
            cv: CvSettings { folds: self.folds, refine_factor: self.refine_factor },
            centers: self.centers.map_or(CenterPolicy::Auto, CenterPolicy::Fixed),
            cg: CgOptions { max_iters: self.cg_max_iters, tolerance: self.cg_tolerance, ..CgOptions::default() },
            standardize: !self.no_standardize,
            params,
        })
    }
}

impl TaskArgs {
    fn spec(&self) -> Result<DesignSpec, String> {
        DesignSpec::new(self.design, self.horizon, self.memory).map_err(|e| e.to_string())
    }

    fn model_config(&self) -> Result<ModelConfig, String> {
        Ok(ModelConfig { kind: self.model, linear: Default::default(), krr: self.krr.config()?, seed: self.seed })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    task: TaskArgs,
    /// Train only on rows whose target precedes this instant.
    #[arg(long, value_parser = instant)]
    cutoff: Option<DateTime<Utc>>,
    #[arg(short, long)]
    output: PathBuf,
    /// Where to write the cross-validation table.
    #[arg(long)]
    cv_report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    series: PathBuf,
    /// Only emit forecasts whose target is at or after this instant.
    #[arg(long, value_parser = instant)]
    from: Option<DateTime<Utc>>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long, default_value = "static")]
    policy: PolicyKind,
    /// Rows per training window (online policies).
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long, default_value_t = rolling::DEFAULT_RETRAIN_PERIOD)]
    retrain_period: usize,
    #[arg(long, value_parser = instant)]
    cutoff: DateTime<Utc>,
    /// Re-run cross-validation in every window.
    #[arg(long)]
    reselect: bool,
    #[arg(long, default_value = "series")]
    station: String,
    /// Directory for `backtest.json` and `predictions.csv`.
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// `sweep.csv` written by `sweep`.
    #[arg(long)]
    results: PathBuf,
    #[arg(long, default_value = "memory")]
    axis: CompareAxis,
    /// Reference value on the axis, e.g. `2`, `ss` or `linear`.
    #[arg(long, default_value = "2")]
    reference: String,
    /// Emit the globally-best table instead.
    #[arg(long)]
    global: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    series: PathBuf,
    #[arg(long, default_value = "series")]
    station: String,
    #[arg(long, default_value_t = diurnal::DAY_LAG)]
    lag: usize,
    #[arg(long, default_value_t = diurnal::DEFAULT_WINDOW)]
    window: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn instant(text: &str) -> Result<DateTime<Utc>, String> {
    parse_timestamp(text)
}

type Fallible<T> = Result<T, Box<dyn std::error::Error>>;

fn read_series(path: &Path) -> Fallible<WindSeries> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(WindSeries::read_csv(BufReader::new(file))?)
}

fn sink(path: Option<&Path>) -> Fallible<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit<T: Serialize>(rows: &[T], format: Format, path: Option<&Path>) -> Fallible<()> {
    let mut out = sink(path)?;
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, rows)?;
            writeln!(out)?;
        }
        Format::Csv => sweep::write_rows_csv(rows, out)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    rows_read: usize,
    rows_rejected: usize,
    slots: usize,
    gaps: usize,
    start: String,
    end: String,
}

fn ingest(args: IngestArgs, format: Format) -> Fallible<()> {
    let schema = CsvSchema {
        time: args.col_time,
        speed: args.col_speed,
        direction: Some(args.col_dir).filter(|c| !c.is_empty()),
    };
    let report = series::parse_csv(BufReader::new(File::open(&args.input)?), &schema)?;
    for e in report.errors.iter().take(20) {
        eprintln!("row {}: {:?}", e.index, e.issue);
    }
    let hourly = series::resample_hourly(&report.observations, Duration::minutes(args.max_gap_minutes))?;
    hourly.write_csv(File::create(&args.output)?)?;
    let summary = IngestSummary {
        rows_read: report.observations.len() + report.errors.len(),
        rows_rejected: report.errors.len(),
        slots: hourly.len(),
        gaps: hourly.len() - hourly.valid_count(),
        start: format_instant(hourly.start()),
        end: format_instant(hourly.end()),
    };
    emit(&[summary], format, None)
}

fn run_sweep(args: SweepArgs, format: Format) -> Fallible<ExitCode> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(dir) = args.output_dir {
        config.output_dir = dir;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.parallelism.is_some() {
        config.parallelism = args.parallelism;
    }
    let result = sweep::run_sweep(&config)?;
    let failed = result.failed_cells();
    eprintln!(
        "{} cells, {} failed; reports in {}",
        result.rows.len(),
        failed,
        config.output_dir.display()
    );
    let best: Vec<_> = result.locally_best.iter().map(|&i| &result.rows[i]).collect();
    emit(&best, format, None)?;
    Ok(if failed > 0 && !args.allow_partial { ExitCode::from(EXIT_PARTIAL) } else { ExitCode::SUCCESS })
}

#[derive(Serialize)]
struct TrainSummary {
    design: String,
    horizon: usize,
    memory: usize,
    model: ModelKind,
    n_train: usize,
    sigma: Option<f64>,
    lambda: Option<f64>,
    cv_mean_r2: Option<f64>,
}

fn train(args: TrainArgs, format: Format) -> Fallible<()> {
    let series = read_series(&args.task.series)?;
    let data = lagset::build(&series, args.task.spec()?)?;
    let train = match args.cutoff {
        Some(c) => data.split_by_target(c).0,
        None => data,
    };
    let trained = Forecaster::fit(&train, &args.task.model_config()?)?;
    trained.forecaster.save(&args.output)?;
    if let Some(path) = &args.cv_report {
        write_cv_csv(&trained.cv_table, args.task.krr.folds, File::create(path)?)?;
    }
    let f = &trained.forecaster;
    let params = f.kernel_params();
    emit(
        &[TrainSummary {
            design: f.spec.design.to_string(),
            horizon: f.spec.horizon,
            memory: f.spec.memory,
            model: args.task.model,
            n_train: f.n_train,
            sigma: params.map(|p| p.sigma),
            lambda: params.map(|p| p.lambda),
            cv_mean_r2: f.cv.map(|c| c.mean_r2),
        }],
        format,
        None,
    )
}

#[derive(Serialize)]
struct ForecastRow {
    anchor: String,
    target: String,
    y_pred: f64,
    y_true: f64,
}

fn predict(args: PredictArgs, format: Format) -> Fallible<()> {
    let model = Forecaster::load(&args.model)?;
    let series = read_series(&args.series)?;
    let (data, pred) = model.predict_series(&series)?;
    let first = args.from.map_or(0, |t| data.partition_point_by_target(t));
    let rows: Vec<ForecastRow> = (first..data.n_samples())
        .map(|i| ForecastRow {
            anchor: format_instant(data.anchors[i]),
            target: format_instant(data.target_instant(i)),
            y_pred: pred[i],
            y_true: data.target_speed[i],
        })
        .collect();
    emit(&rows, format, args.output.as_deref())
}

fn backtest(args: BacktestArgs, format: Format) -> Fallible<()> {
    let series = read_series(&args.task.series)?;
    let mut policy = UpdatePolicy::of_kind(args.policy).with_retrain_period(args.retrain_period);
    if args.train_size.is_some() {
        policy.train_size = args.train_size;
    }
    let options = BacktestOptions { station_id: args.station, reselect_each_window: args.reselect };
    let report = rolling::run_backtest_with(&series, args.task.spec()?, &args.task.model_config()?, policy, args.cutoff, &options)?;
    fs::create_dir_all(&args.output_dir)?;
    serde_json::to_writer_pretty(File::create(args.output_dir.join("backtest.json"))?, &report)?;
    report.write_predictions_csv(File::create(args.output_dir.join("predictions.csv"))?)?;
    #[derive(Serialize)]
    struct Summary {
        policy: String,
        nrmse: f64,
        rmse: f64,
        gamma_rmse: Option<f64>,
        retrain_count: usize,
        n_predictions: usize,
    }
    emit(
        &[Summary {
            policy: report.policy.kind.to_string(),
            nrmse: report.metrics.nrmse,
            rmse: report.metrics.rmse,
            gamma_rmse: report.gamma_rmse,
            retrain_count: report.retrain_count,
            n_predictions: report.metrics.n_predictions,
        }],
        format,
        None,
    )
}

fn compare(args: CompareArgs, format: Format) -> Fallible<()> {
    let rows = sweep::read_rows_csv(&args.results)?;
    if args.global {
        let result = sweep::SweepResult::from_rows(rows);
        let mut out = sink(args.output.as_deref())?;
        return match format {
            Format::Json => Ok(serde_json::to_writer_pretty(&mut out, &result.globally_best)?),
            Format::Csv => Ok(sweep::write_global_csv(&result.globally_best, out)?),
        };
    }
    let table = sweep::delta_table(&rows, args.axis, &args.reference)?;
    emit(&table, format, args.output.as_deref())
}

fn analyze(args: AnalyzeArgs, format: Format) -> Fallible<()> {
    let series = read_series(&args.series)?;
    let records = diurnal::monthly_strength(&series, args.lag, args.window)?;
    match format {
        Format::Csv => Ok(diurnal::write_records_csv(&args.station, &records, sink(args.output.as_deref())?)?),
        Format::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                station: &'a str,
                #[serde(flatten)]
                record: &'a diurnal::DiurnalRecord,
            }
            let rows: Vec<Row> = records.iter().map(|record| Row { station: &args.station, record }).collect();
            emit(&rows, format, args.output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let format = cli.format;
    let outcome = match cli.command {
        Command::Ingest(a) => ingest(a, format).map(|_| ExitCode::SUCCESS),
        Command::Sweep(a) => run_sweep(a, format),
        Command::Train(a) => train(a, format).map(|_| ExitCode::SUCCESS),
        Command::Predict(a) => predict(a, format).map(|_| ExitCode::SUCCESS),
        Command::Backtest(a) => backtest(a, format).map(|_| ExitCode::SUCCESS),
        Command::Compare(a) => compare(a, format).map(|_| ExitCode::SUCCESS),
        Command::Analyze(a) => analyze(a, format).map(|_| ExitCode::SUCCESS),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
