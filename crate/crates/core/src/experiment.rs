//! Config-driven runs: ingest, split, scale, window, train, optionally
//! recalibrate, and evaluate on the held-out test segment. Also the
//! multi-model benchmark.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{IntervalPrediction, QdConfig, TubeConfig};
use crate::metrics::{
    self, improvement_table, rank_models, EvalSummary, ImprovementRow, IntervalForecast, RankedEntry,
};
use crate::net::{Activation, Architecture, Head, ModelSpec, NetError, PiModel};
use crate::recalibrate::{recalibrate, tune_r, RCandidate, RecalConfig, RecalReport, DEFAULT_R_GRID};
use crate::series::{parse_csv, ColumnConfig, SeriesError, SplitSpec, TimeSeries};
use crate::synth::{SyntheticKind, SyntheticSpec};
use crate::trainer::{
    self, symmetric_levels, train, train_quantile_pair, IntervalModel, LossKind, PreparedData, QuantilePair,
    TrainConfig, TrainError, TrainReport,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data: {0}")]
    Data(#[from] SeriesError),
    #[error("train: {0}")]
    Train(TrainError),
    #[error("model: {0}")]
    Model(#[from] NetError),
    #[error("metrics: {0}")]
    Metrics(#[from] metrics::MetricsError),
}

impl From<TrainError> for ExperimentError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(m) => ExperimentError::Config(m),
            TrainError::Series(e) => ExperimentError::Data(e),
            other => ExperimentError::Train(other),
        }
    }
}

impl ExperimentError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, ExperimentError::Train(TrainError::Diverged { .. }))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tube,
    Qd,
    Quantile,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Tube, Method::Qd, Method::Quantile];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Tube => "Tube",
            Method::Qd => "QD",
            Method::Quantile => "Quantile",
        })
    }
}

/// Where the series comes from: a CSV file or a generator, never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "default_timestamp_column")]
    pub timestamp_column: Option<String>,
    #[serde(default = "default_value_column")]
    pub value_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

fn default_timestamp_column() -> Option<String> {
    Some("timestamp".into())
}
fn default_value_column() -> String {
    "value".into()
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            timestamp_column: default_timestamp_column(),
            value_column: default_value_column(),
            synthetic: Some(SyntheticSpec::new(SyntheticKind::SineHetero, 5000, 0)),
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<TimeSeries, ExperimentError> {
        match (&self.path, &self.synthetic) {
            (Some(path), None) => {
                let file = File::open(path).map_err(io_err(path))?;
                let columns = ColumnConfig {
                    timestamp: self.timestamp_column.clone(),
                    value: self.value_column.clone(),
                };
                Ok(parse_csv(BufReader::new(file), &columns)?)
            }
            (None, Some(spec)) => Ok(spec.generate()?),
            _ => Err(ExperimentError::Config(
                "data needs exactly one of `path` or `synthetic`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Falls back to the architecture's default sizes when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_sizes: Option<Vec<usize>>,
    pub activation: Activation,
    pub tcn_dilations: Vec<usize>,
    pub kernel_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Mlp,
            hidden_sizes: None,
            activation: Activation::Relu,
            tcn_dilations: vec![1, 2, 4],
            kernel_width: 3,
        }
    }
}

/// Loss hyperparameters for every method; each method reads its own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossParams {
    pub alpha: f64,
    pub r: f64,
    pub delta: f64,
    pub qd_lambda: f64,
    pub qd_softness: f64,
    /// Quantile levels; default to `alpha / 2` and `1 - alpha / 2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_hi: Option<f64>,
}

impl Default for LossParams {
    fn default() -> Self {
        let qd = QdConfig::new(0.05);
        Self {
            alpha: 0.05,
            r: 0.5,
            delta: 0.0,
            qd_lambda: qd.lambda,
            qd_softness: qd.softness,
            q_lo: None,
            q_hi: None,
        }
    }
}

impl LossParams {
    pub fn tube(&self) -> TubeConfig {
        TubeConfig::new(self.alpha).with_r(self.r).with_delta(self.delta)
    }

    pub fn qd(&self) -> QdConfig {
        QdConfig {
            alpha: self.alpha,
            lambda: self.qd_lambda,
            softness: self.qd_softness,
        }
    }

    pub fn quantile_levels(&self) -> (f64, f64) {
        let (lo, hi) = symmetric_levels(self.alpha);
        (self.q_lo.unwrap_or(lo), self.q_hi.unwrap_or(hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecalSection {
    /// Run the width-penalty recalibration for tube models.
    pub enabled: bool,
    /// Also search `r_grid`; implies `enabled`.
    pub tune_r: bool,
    pub r_grid: Vec<f64>,
    /// Defaults to `1 - alpha`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    pub delta_step: f64,
    pub margin: f64,
    pub max_rounds: usize,
}

impl Default for RecalSection {
    fn default() -> Self {
        let d = RecalConfig::default();
        Self {
            enabled: false,
            tune_r: false,
            r_grid: DEFAULT_R_GRID.to_vec(),
            target: None,
            delta_step: d.delta_step,
            margin: d.margin,
            max_rounds: d.max_rounds,
        }
    }
}

impl RecalSection {
    pub fn config(&self, alpha: f64) -> RecalConfig {
        RecalConfig {
            target: self.target.unwrap_or(1.0 - alpha),
            delta_step: self.delta_step,
            margin: self.margin,
            max_rounds: self.max_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    pub architectures: Vec<Architecture>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            architectures: Architecture::ALL.to_vec(),
        }
    }
}

/// A full experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Drives model initialization and batch shuffling.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub lag: usize,
    pub method: Method,
    pub data: DataConfig,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub loss: LossParams,
    pub train: TrainConfig,
    pub recalibrate: RecalSection,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            lag: 24,
            method: Method::Tube,
            data: DataConfig::default(),
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            loss: LossParams::default(),
            train: TrainConfig::default(),
            recalibrate: RecalSection::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_spec(&self, architecture: Architecture, head: Head, seed: u64) -> ModelSpec {
        let m = &self.model;
        let mut spec = ModelSpec::new(architecture, self.lag, head)
            .with_hidden(
                m.hidden_sizes
                    .clone()
                    .unwrap_or_else(|| architecture.default_hidden()),
            )
            .with_tcn(m.kernel_width, m.tcn_dilations.clone())
            .with_seed(seed);
        spec.activation = m.activation;
        spec
    }

    fn train_config(&self, loss: LossKind, seed: u64) -> TrainConfig {
        TrainConfig {
            shuffle_seed: seed,
            ..self.train.clone().with_loss(loss)
        }
    }

    pub fn recal_config(&self) -> RecalConfig {
        self.recalibrate.config(self.loss.alpha)
    }

    /// Checks every precondition without touching data.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |m: String| ExperimentError::Config(m);
        if self.lag == 0 {
            return Err(cfg("lag must be at least 1".into()));
        }
        self.split.validate().map_err(|e| cfg(e.to_string()))?;
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), None) => {}
            (None, Some(spec)) => spec.validate().map_err(cfg)?,
            _ => return Err(cfg("data needs exactly one of `path` or `synthetic`".into())),
        }
        let l = &self.loss;
        l.tube().validate().map_err(|e| cfg(e.to_string()))?;
        l.qd().validate().map_err(|e| cfg(e.to_string()))?;
        let (q_lo, q_hi) = l.quantile_levels();
        if !(0.0 < q_lo && q_lo < q_hi && q_hi < 1.0) {
            return Err(cfg(format!("quantile levels ({q_lo}, {q_hi}) must satisfy 0 < q_lo < q_hi < 1")));
        }
        self.train
            .clone()
            .with_loss(LossKind::Tube(l.tube()))
            .validate()
            .map_err(|e| cfg(e.to_string()))?;
        self.recal_config().validate().map_err(|e| cfg(e.to_string()))?;
        if self.recalibrate.tune_r {
            if self.recalibrate.r_grid.is_empty() {
                return Err(cfg("recalibrate.r_grid is empty".into()));
            }
            for &r in &self.recalibrate.r_grid {
                l.tube().with_r(r).validate().map_err(|e| cfg(e.to_string()))?;
            }
        }
        for arch in self.architectures_in_use() {
            for head in [Head::Interval, Head::Scalar] {
                self.model_spec(arch, head, self.seed)
                    .validate()
                    .map_err(|e| cfg(e.to_string()))?;
            }
        }
        Ok(())
    }

    fn architectures_in_use(&self) -> Vec<Architecture> {
        let mut archs = self.benchmark.architectures.clone();
        archs.push(self.model.architecture);
        archs
    }
}

/// A trained interval predictor of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Interval(PiModel),
    Quantile(QuantilePair),
}

impl IntervalModel for Predictor {
    fn lag(&self) -> usize {
        match self {
            Predictor::Interval(m) => m.lag(),
            Predictor::Quantile(p) => IntervalModel::lag(p),
        }
    }

    fn raw_interval(&self, window: &[f64]) -> Result<IntervalPrediction, NetError> {
        match self {
            Predictor::Interval(m) => m.raw_interval(window),
            Predictor::Quantile(p) => p.raw_interval(window),
        }
    }
}

impl Predictor {
    /// Writes `model.json`, or `model_lower.json` and `model_upper.json`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
        let models: Vec<(&str, &PiModel)> = match self {
            Predictor::Interval(m) => vec![("model.json", m)],
            Predictor::Quantile(p) => vec![("model_lower.json", &p.lower), ("model_upper.json", &p.upper)],
        };
        let mut paths = Vec::new();
        for (name, model) in models {
            let path = dir.join(name);
            let file = File::create(&path).map_err(io_err(&path))?;
            model.save(BufWriter::new(file))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Loads one model file as an interval model, or two scalar models as a pair.
pub fn load_predictor(model: &Path, upper: Option<&Path>) -> Result<Predictor, ExperimentError> {
    let read = |path: &Path| -> Result<PiModel, ExperimentError> {
        let file = File::open(path).map_err(io_err(path))?;
        Ok(PiModel::load(BufReader::new(file))?)
    };
    let first = read(model)?;
    match upper {
        None => {
            if first.spec().head != Head::Interval {
                return Err(ExperimentError::Config(format!(
                    "{} holds a single-quantile model; pass its partner with --upper",
                    model.display()
                )));
            }
            Ok(Predictor::Interval(first))
        }
        Some(path) => {
            let second = read(path)?;
            if first.spec().head != Head::Scalar || second.spec().head != Head::Scalar || first.lag() != second.lag() {
                return Err(ExperimentError::Config(
                    "a quantile pair needs two scalar models with the same lag".into(),
                ));
            }
            Ok(Predictor::Quantile(QuantilePair {
                lower: first,
                upper: second,
                q_lo: f64::NAN,
                q_hi: f64::NAN,
            }))
        }
    }
}

/// The trained predictor of one method/architecture plus its bookkeeping.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub method: Method,
    pub architecture: Architecture,
    pub seed: u64,
    pub predictor: Predictor,
    /// One report per trained network that was kept.
    pub train_reports: Vec<(String, TrainReport)>,
    pub recal: Option<RecalReport>,
    pub r_candidates: Option<Vec<RCandidate>>,
    /// `r` used for region counts.
    pub r: f64,
    pub validation: EvalSummary,
}

/// Trains one method on prepared data.
pub fn train_method(
    cfg: &RunConfig,
    prepared: &PreparedData,
    method: Method,
    architecture: Architecture,
    seed: u64,
) -> Result<TrainedRun, ExperimentError> {
    let data = &prepared.data;
    let tube = cfg.loss.tube();
    let mut recal = None;
    let mut r_candidates = None;
    let mut r = tube.r;
    let (predictor, train_reports) = match method {
        Method::Tube => {
            let spec = cfg.model_spec(architecture, Head::Interval, seed);
            let train_cfg = cfg.train_config(LossKind::Tube(tube), seed);
            let rc = &cfg.recalibrate;
            let (model, report) = if rc.tune_r {
                let out = tune_r(&spec, data, &tube, &rc.r_grid, &train_cfg, &cfg.recal_config())?;
                r = out.r;
                recal = out.candidates.iter().find(|c| c.r == out.r).map(|c| c.recal.clone());
                r_candidates = Some(out.candidates);
                (out.model, out.train_report)
            } else if rc.enabled {
                let (model, report, rr) = recalibrate(&spec, data, &tube, &train_cfg, &cfg.recal_config())?;
                recal = Some(rr);
                (model, report)
            } else {
                train(&spec, data, &train_cfg)?
            };
            (Predictor::Interval(model), vec![("tube".to_string(), report)])
        }
        Method::Qd => {
            let spec = cfg.model_spec(architecture, Head::Interval, seed);
            let (model, report) = train(&spec, data, &cfg.train_config(LossKind::Qd(cfg.loss.qd()), seed))?;
            (Predictor::Interval(model), vec![("qd".to_string(), report)])
        }
        Method::Quantile => {
            let spec = cfg.model_spec(architecture, Head::Scalar, seed);
            let (q_lo, q_hi) = cfg.loss.quantile_levels();
            let train_cfg = cfg.train_config(LossKind::Pinball { tau: q_lo }, seed);
            let (pair, [lo, hi]) = train_quantile_pair(&spec, data, q_lo, q_hi, &train_cfg)?;
            (
                Predictor::Quantile(pair),
                vec![("lower".to_string(), lo), ("upper".to_string(), hi)],
            )
        }
    };
    let validation = trainer::evaluate_windows(&predictor, &data.validation, r)?;
    Ok(TrainedRun {
        method,
        architecture,
        seed,
        predictor,
        train_reports,
        recal,
        r_candidates,
        r,
        validation,
    })
}

/// Result of one configured run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: TrainedRun,
    /// Teacher-forced intervals for every test point.
    pub forecast: IntervalForecast,
    pub test: EvalSummary,
    pub wall_time_secs: f64,
}

pub fn prepare(cfg: &RunConfig) -> Result<PreparedData, ExperimentError> {
    let series = cfg.data.load()?;
    Ok(PreparedData::new(&series, &cfg.split, cfg.lag)?)
}

fn test_forecast(
    prepared: &PreparedData,
    predictor: &Predictor,
) -> Result<IntervalForecast, ExperimentError> {
    let full = prepared.history.concat(&prepared.splits.test)?;
    Ok(trainer::forecast(predictor, &full, prepared.history.len(), false)?)
}

/// Runs `cfg.method` on `cfg.model.architecture` end to end.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let started = Instant::now();
    let prepared = prepare(cfg)?;
    let run = train_method(cfg, &prepared, cfg.method, cfg.model.architecture, cfg.seed)?;
    let forecast = test_forecast(&prepared, &run.predictor)?;
    let test = metrics::evaluate(&forecast, run.r)?;
    Ok(RunOutcome {
        run,
        forecast,
        test,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Writes the forecast CSV, model file(s), reports and summary into `dir`.
///
/// Everything except `timing.json` is reproducible byte for byte.
pub fn write_outcome(cfg: &RunConfig, outcome: &RunOutcome, dir: &Path) -> Result<(), ExperimentError> {
    create_dir(dir)?;
    let run = &outcome.run;
    let path = dir.join("forecast.csv");
    let file = File::create(&path).map_err(io_err(&path))?;
    outcome.forecast.write_csv(BufWriter::new(file)).map_err(io_err(&path))?;
    run.predictor.save(dir)?;
    for (name, report) in &run.train_reports {
        write_file(&dir.join(format!("train_report_{name}.jsonl")), &report.to_jsonl())?;
    }
    if let Some(recal) = &run.recal {
        write_file(&dir.join("recal_report.json"), &recal.to_json())?;
    }
    if let Some(candidates) = &run.r_candidates {
        let json = serde_json::to_string_pretty(candidates).expect("candidates serialize");
        write_file(&dir.join("r_candidates.json"), &json)?;
    }
    let summary = serde_json::json!({
        "method": run.method,
        "architecture": run.architecture,
        "seed": run.seed,
        "r": run.r,
        "validation": run.validation,
        "test": outcome.test,
    });
    write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary).expect("json"))?;
    write_file(&dir.join("config.toml"), &cfg.to_toml())?;
    let mut timing = serde_json::json!({ "total_secs": outcome.wall_time_secs });
    for (name, report) in &run.train_reports {
        timing[format!("train_{name}_secs")] = report.wall_time_secs.into();
    }
    write_file(&dir.join("timing.json"), &timing.to_string())?;
    Ok(())
}

/// One benchmark row; `result` holds the failure message when training failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub method: Method,
    pub architecture: Architecture,
    pub seed: u64,
    pub result: Result<EvalSummary, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutcome {
    pub rows: Vec<BenchRow>,
    pub ranking: Vec<RankedEntry>,
    pub improvement: Vec<ImprovementRow>,
}

/// Row label, e.g. `GRU+Tube`.
pub fn row_name(architecture: Architecture, method: Method) -> String {
    format!("{}+{}", architecture.name().to_uppercase(), method)
}

/// Trains every method × architecture on one shared split and scaler.
///
/// Row `i` uses seed `cfg.seed ^ i`. A row that fails is recorded and left
/// out of the rankings.
pub fn benchmark(cfg: &RunConfig) -> Result<BenchmarkOutcome, ExperimentError> {
    cfg.validate()?;
    let b = &cfg.benchmark;
    if b.methods.len() * b.architectures.len() < 2 {
        return Err(ExperimentError::Config(
            "benchmark needs at least two method/architecture combinations".into(),
        ));
    }
    let prepared = prepare(cfg)?;
    let mut rows = Vec::new();
    for &method in &b.methods {
        for &architecture in &b.architectures {
            let seed = cfg.seed ^ rows.len() as u64;
            let name = row_name(architecture, method);
            log::info!("benchmark row {name} (seed {seed})");
            let result = train_method(cfg, &prepared, method, architecture, seed)
                .and_then(|run| {
                    let fc = test_forecast(&prepared, &run.predictor)?;
                    Ok(metrics::evaluate(&fc, run.r)?)
                })
                .map_err(|e| {
                    log::warn!("benchmark row {name} failed: {e}");
                    e.to_string()
                });
            rows.push(BenchRow {
                name,
                method,
                architecture,
                seed,
                result,
            });
        }
    }
    let ok: Vec<(String, EvalSummary)> = rows
        .iter()
        .filter_map(|r| r.result.as_ref().ok().map(|s| (r.name.clone(), *s)))
        .collect();
    let ranking = if ok.len() >= 2 {
        rank_models(&ok, cfg.recal_config().target)?
    } else {
        Vec::new()
    };
    let per_method: Vec<(String, Vec<f64>)> = b
        .methods
        .iter()
        .map(|m| {
            let widths = rows
                .iter()
                .filter(|r| r.method == *m)
                .filter_map(|r| r.result.as_ref().ok().map(|s| s.mpiw))
                .collect();
            (m.to_string(), widths)
        })
        .collect();
    let improvement = improvement_table(&per_method, &Method::Tube.to_string()).unwrap_or_default();
    Ok(BenchmarkOutcome {
        rows,
        ranking,
        improvement,
    })
}

pub fn write_benchmark(outcome: &BenchmarkOutcome, dir: &Path) -> Result<(), ExperimentError> {
    create_dir(dir)?;
    let rows = serde_json::to_string_pretty(&outcome.rows).expect("rows serialize");
    write_file(&dir.join("rows.json"), &rows)?;
    write_file(&dir.join("ranking.txt"), &metrics::ranking_table(&outcome.ranking))?;
    write_file(&dir.join("ranking.csv"), &metrics::ranking_csv(&outcome.ranking))?;
    write_file(&dir.join("improvement.txt"), &metrics::improvement_text(&outcome.improvement))?;
    Ok(())
}

/// Forecasts from a context series: teacher-forced intervals for every
/// point after the first `lag`, plus one interval past the end.
pub fn forecast_context(predictor: &Predictor, context: &TimeSeries) -> Result<IntervalForecast, ExperimentError> {
    Ok(trainer::forecast(predictor, context, predictor.lag(), true)?)
}

/// Writes a forecast CSV, creating parent directories.
pub fn write_forecast(forecast: &IntervalForecast, path: &Path) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    forecast.write_csv(&mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.out_dir = dir.to_path_buf();
        cfg.lag = 8;
        cfg.data.synthetic = Some(SyntheticSpec::new(SyntheticKind::SineHetero, 600, 2));
        cfg.model.hidden_sizes = Some(vec![8]);
        cfg.train.epochs = 5;
        cfg.train.batch_size = 32;
        cfg.train.early_stop_patience = 0;
        cfg
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_fields_and_bad_alpha_are_rejected() {
        assert!(matches!(
            RunConfig::from_toml("sed = 3"),
            Err(ExperimentError::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[train]\nepoch = 3"),
            Err(ExperimentError::Config(_))
        ));
        let cfg = RunConfig::from_toml("[loss]\nalpha = 1.2").unwrap();
        assert!(matches!(cfg.validate(), Err(ExperimentError::Config(_))));
        let cfg = RunConfig::from_toml("[data]\npath = \"x.csv\"\n[data.synthetic]\nkind = \"ar1\"\nn = 600").unwrap();
        assert!(matches!(cfg.validate(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn run_writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let outcome = run(&cfg).unwrap();
        assert_eq!(outcome.forecast.len(), 180);
        write_outcome(&cfg, &outcome, dir.path()).unwrap();
        for name in ["forecast.csv", "model.json", "train_report_tube.jsonl", "summary.json", "config.toml", "timing.json"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        let loaded = load_predictor(&dir.path().join("model.json"), None).unwrap();
        assert_eq!(loaded, outcome.run.predictor);
    }

    #[test]
    fn benchmark_tolerates_failed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.benchmark.architectures = vec![Architecture::Mlp];
        let outcome = benchmark(&cfg).unwrap();
        assert_eq!(outcome.rows.len(), 3);
        assert_eq!(outcome.ranking.len(), 3);
        let names: Vec<_> = outcome.improvement.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names, ["Tube", "QD", "Quantile"]);
        assert!(outcome.improvement[0].improvement_pct.is_none());
        assert_eq!(outcome.rows[1].seed, cfg.seed ^ 1);
    }

    #[test]
    fn failed_rows_do_not_abort_the_suite() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.benchmark.architectures = vec![Architecture::Mlp, Architecture::Tcn];
        cfg.benchmark.methods = vec![Method::Tube];
        cfg.train.batch_size = 100_000;
        let outcome = benchmark(&cfg).unwrap();
        assert_eq!(outcome.rows.len(), 2);
        assert!(outcome.rows.iter().all(|r| r.result.is_err()));
        assert!(outcome.ranking.is_empty());
    }

}
