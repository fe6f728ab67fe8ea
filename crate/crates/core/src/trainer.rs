//! Mini-batch training, the quantile-pair baseline, interval repair and
//! teacher-forced forecasting.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{self, BatchLoss, IntervalPrediction, LossError, QdConfig, TubeConfig};
use crate::metrics::{self, EvalSummary, ForecastStep, IntervalForecast, MetricsError};
use crate::net::{Head, ModelSpec, NetError, PiModel};
use crate::optim::OptimizerConfig;
use crate::series::{
    chrono_split, make_windows, windows_with_history, Scaler, SeriesError, SplitSpec, Splits, Stamp, TimeSeries,
    WindowedDataset,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss `{loss}` needs a {needed:?} head, model has {got:?}")]
    IncompatibleHead { loss: &'static str, needed: Head, got: Head },
    #[error("objective diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("{train} training windows is fewer than batch size {batch}")]
    TooFewWindows { train: usize, batch: usize },
    #[error("validation set is empty")]
    EmptyValidation,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Which objective a model is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Tube(TubeConfig),
    Qd(QdConfig),
    Pinball { tau: f64 },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Tube(_) => "tube",
            LossKind::Qd(_) => "qd",
            LossKind::Pinball { .. } => "pinball",
        }
    }

    pub fn head(&self) -> Head {
        match self {
            LossKind::Pinball { .. } => Head::Scalar,
            _ => Head::Interval,
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        match self {
            LossKind::Tube(cfg) => cfg.validate(),
            LossKind::Qd(cfg) => cfg.validate(),
            LossKind::Pinball { tau } => {
                if *tau > 0.0 && *tau < 1.0 {
                    Ok(())
                } else {
                    Err(LossError::InvalidParameter(format!("tau = {tau} not in (0, 1)")))
                }
            }
        }
    }

    /// Per-sample-normalized objective and output gradients for one batch.
    ///
    /// Tube and pinball are divided by the batch size; QD already averages
    /// its width term and scales its penalty with the batch size.
    pub fn batch(&self, outputs: &[Vec<f64>], targets: &[f64]) -> Result<BatchLoss, LossError> {
        let n = outputs.len() as f64;
        let mut loss = match self {
            LossKind::Tube(cfg) => tube_batch(outputs, targets, cfg)?,
            LossKind::Qd(cfg) => {
                let preds: Vec<_> = outputs.iter().map(|o| IntervalPrediction::new(o[0], o[1])).collect();
                return losses::qd_loss(&preds, targets, cfg);
            }
            LossKind::Pinball { tau } => {
                let preds: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
                losses::pinball_objective(&preds, targets, *tau)?
            }
        };
        loss.value /= n;
        for g in &mut loss.grads {
            g[0] /= n;
            g[1] /= n;
        }
        Ok(loss)
    }
}

fn tube_batch(outputs: &[Vec<f64>], targets: &[f64], cfg: &TubeConfig) -> Result<BatchLoss, LossError> {
    let preds: Vec<_> = outputs.iter().map(|o| IntervalPrediction::new(o[0], o[1])).collect();
    losses::tube_objective(&preds, targets, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Set by the caller, not read from config files.
    #[serde(skip)]
    pub shuffle_seed: u64,
    /// Set by the caller, not read from config files.
    #[serde(skip)]
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            early_stop_patience: 20,
            shuffle_seed: 0,
            loss: LossKind::Tube(TubeConfig::new(0.05)),
        }
    }
}

impl TrainConfig {
    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.early_stop_patience > self.epochs {
            return bad(format!(
                "early_stop_patience {} exceeds epochs {}",
                self.early_stop_patience, self.epochs
            ));
        }
        self.optimizer.validate().map_err(TrainError::InvalidConfig)?;
        self.loss.validate()?;
        Ok(())
    }
}

/// Windowed train and validation data in original units, plus the scaler
/// fitted on the training segment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub train: WindowedDataset,
    pub validation: WindowedDataset,
    pub scaler: Scaler,
}

/// Everything one experiment needs from a raw series.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub splits: Splits,
    pub data: TrainData,
    /// Test windows; inputs may reach back into validation/train.
    pub test: WindowedDataset,
    /// Train and validation joined, the history the test segment is forecast from.
    pub history: TimeSeries,
}

impl PreparedData {
    /// Split, fit the scaler on train only, and window each segment.
    ///
    /// Train windows stay inside the train segment. Validation and test
    /// windows draw their inputs from the observations just before them, so
    /// every validation and test point gets exactly one interval.
    pub fn new(series: &TimeSeries, split: &SplitSpec, lag: usize) -> Result<Self, SeriesError> {
        let splits = chrono_split(series, split)?;
        let scaler = Scaler::fit(splits.train.values())?;
        let train = make_windows(&splits.train, lag)?;
        let validation = windows_with_history(&splits.train, &splits.validation, lag)?;
        let history = splits.train.concat(&splits.validation)?;
        let test = windows_with_history(&history, &splits.test, lag)?;
        Ok(Self {
            data: TrainData {
                train,
                validation,
                scaler,
            },
            test,
            history,
            splits,
        })
    }
}

/// Per-epoch curves and the final validation quality of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss: String,
    pub train_objective: Vec<f64>,
    pub validation_objective: Vec<f64>,
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub final_validation_picp: Option<f64>,
    pub final_validation_mpiw: Option<f64>,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    /// Excluded from the serialized report so reports stay reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// One JSON record per epoch, then one summary record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, (t, v)) in self.train_objective.iter().zip(&self.validation_objective).enumerate() {
            let rec = serde_json::json!({ "epoch": i + 1, "train_objective": t, "validation_objective": v });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": {
                "loss": self.loss,
                "epochs_run": self.epochs_run,
                "best_epoch": self.best_epoch,
                "final_validation_picp": self.final_validation_picp,
                "final_validation_mpiw": self.final_validation_mpiw,
                "init_seed": self.init_seed,
                "shuffle_seed": self.shuffle_seed,
            }
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

/// Scaled copies of a windowed dataset, flattened for the training loop.
struct Scaled {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl Scaled {
    fn new(ds: &WindowedDataset, scaler: &Scaler) -> Self {
        let s = ds.map_values(|v| scaler.apply(v));
        Self {
            inputs: s.inputs().to_vec(),
            targets: s.targets().to_vec(),
        }
    }
}

fn check_head(loss: &LossKind, spec: &ModelSpec) -> Result<(), TrainError> {
    if loss.head() != spec.head {
        return Err(TrainError::IncompatibleHead {
            loss: loss.name(),
            needed: loss.head(),
            got: spec.head,
        });
    }
    Ok(())
}

fn diverged(epoch: usize) -> impl Fn(NetError) -> TrainError {
    move |e| match e {
        NetError::NonFiniteActivation { .. } => TrainError::Diverged { epoch },
        other => TrainError::Net(other),
    }
}

/// Objective of the whole dataset under the current parameters.
fn full_objective(model: &PiModel, data: &Scaled, loss: &LossKind, epoch: usize) -> Result<f64, TrainError> {
    let outputs = data
        .inputs
        .iter()
        .map(|w| model.forward(w).map(|p| p.outputs))
        .collect::<Result<Vec<_>, _>>()
        .map_err(diverged(epoch))?;
    let value = loss.batch(&outputs, &data.targets).map_err(|_| TrainError::Diverged { epoch })?.value;
    if !value.is_finite() {
        return Err(TrainError::Diverged { epoch });
    }
    Ok(value)
}

/// Trains a fresh model initialised from `spec.seed`.
///
/// Returns the parameters of the epoch with the lowest validation objective.
pub fn train(spec: &ModelSpec, data: &TrainData, cfg: &TrainConfig) -> Result<(PiModel, TrainReport), TrainError> {
    cfg.validate()?;
    check_head(&cfg.loss, spec)?;
    if data.train.len() < cfg.batch_size {
        return Err(TrainError::TooFewWindows {
            train: data.train.len(),
            batch: cfg.batch_size,
        });
    }
    if data.validation.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let started = Instant::now();

    let mut model = PiModel::init(spec.clone(), data.scaler)?;
    let train_set = Scaled::new(&data.train, &data.scaler);
    let val_set = Scaled::new(&data.validation, &data.scaler);
    let n_params = model.params().len();

    let mut params = model.params().values.clone();
    let mut optimizer = cfg.optimizer.build(n_params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train_set.targets.len()).collect();
    let mut grad = vec![0.0; n_params];

    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut outputs = Vec::with_capacity(batch.len());
            let mut caches = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let pass = model.forward(&train_set.inputs[i]).map_err(diverged(epoch))?;
                outputs.push(pass.outputs);
                caches.push(pass.cache);
                targets.push(train_set.targets[i]);
            }
            let loss = cfg.loss.batch(&outputs, &targets).map_err(|_| TrainError::Diverged { epoch })?;
            if !loss.value.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            epoch_total += loss.value * batch.len() as f64;

            grad.fill(0.0);
            let outputs_per = spec.head.outputs();
            for (cache, g) in caches.iter().zip(&loss.grads) {
                model
                    .network()
                    .backward_into(&params, cache, &g[..outputs_per], &mut grad)?;
            }
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(TrainError::Diverged { epoch });
            }
            optimizer.step(&mut params, &grad);
            model.set_values(&params);
        }
        train_curve.push(epoch_total / train_set.targets.len() as f64);

        let val = full_objective(&model, &val_set, &cfg.loss, epoch)?;
        val_curve.push(val);
        if val < best.0 {
            best = (val, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                break;
            }
        }
    }

    model.set_values(&best.2);
    let (picp, mpiw) = match spec.head {
        Head::Interval => {
            let summary = evaluate_windows(&model, &data.validation, 0.5)?;
            (Some(summary.picp), Some(summary.mpiw))
        }
        Head::Scalar => (None, None),
    };
    let report = TrainReport {
        loss: cfg.loss.name().to_string(),
        epochs_run: train_curve.len(),
        train_objective: train_curve,
        validation_objective: val_curve,
        best_epoch: best.1,
        final_validation_picp: picp,
        final_validation_mpiw: mpiw,
        init_seed: spec.seed,
        shuffle_seed: cfg.shuffle_seed,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Two scalar-head models trained on the lower and upper quantile levels.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePair {
    pub lower: PiModel,
    pub upper: PiModel,
    pub q_lo: f64,
    pub q_hi: f64,
}

/// `(alpha / 2, 1 - alpha / 2)`.
pub fn symmetric_levels(alpha: f64) -> (f64, f64) {
    (alpha / 2.0, 1.0 - alpha / 2.0)
}

/// Trains the quantile baseline. `cfg.loss` is overridden per model.
pub fn train_quantile_pair(
    spec: &ModelSpec,
    data: &TrainData,
    q_lo: f64,
    q_hi: f64,
    cfg: &TrainConfig,
) -> Result<(QuantilePair, [TrainReport; 2]), TrainError> {
    if !(0.0 < q_lo && q_lo < q_hi && q_hi < 1.0) {
        return Err(TrainError::InvalidConfig(format!(
            "quantile levels must satisfy 0 < q_lo < q_hi < 1, got ({q_lo}, {q_hi})"
        )));
    }
    let spec = spec.clone().with_head(Head::Scalar);
    let (lower, lo_report) = train(&spec, data, &cfg.clone().with_loss(LossKind::Pinball { tau: q_lo }))?;
    let (upper, hi_report) = train(&spec, data, &cfg.clone().with_loss(LossKind::Pinball { tau: q_hi }))?;
    Ok((QuantilePair { lower, upper, q_lo, q_hi }, [lo_report, hi_report]))
}

/// Orders `(a, b)` into an interval; the flag is set when they were crossed.
pub fn repair_interval(a: f64, b: f64) -> (IntervalPrediction, bool) {
    losses::order_bounds(IntervalPrediction::new(a, b))
}

/// Anything that maps a lag window (original units) to a possibly crossed interval.
pub trait IntervalModel {
    fn lag(&self) -> usize;
    fn raw_interval(&self, window: &[f64]) -> Result<IntervalPrediction, NetError>;
}

impl IntervalModel for PiModel {
    fn lag(&self) -> usize {
        self.spec().lag
    }

    fn raw_interval(&self, window: &[f64]) -> Result<IntervalPrediction, NetError> {
        self.predict_interval_raw(window)
    }
}

impl IntervalModel for QuantilePair {
    fn lag(&self) -> usize {
        self.lower.lag()
    }

    fn raw_interval(&self, window: &[f64]) -> Result<IntervalPrediction, NetError> {
        let lo = self.lower.predict_raw(window)?[0];
        let hi = self.upper.predict_raw(window)?[0];
        Ok(IntervalPrediction::new(lo, hi))
    }
}

fn repaired_step<M: IntervalModel + ?Sized>(
    model: &M,
    window: &[f64],
    stamp: Option<Stamp>,
    actual: Option<f64>,
    crossings: &mut usize,
) -> Result<ForecastStep, NetError> {
    let raw = model.raw_interval(window)?;
    let (p, crossed) = repair_interval(raw.lower, raw.upper);
    *crossings += crossed as usize;
    Ok(ForecastStep {
        stamp,
        lower: p.lower,
        upper: p.upper,
        actual,
    })
}

/// Teacher-forced one-step intervals for every windowed target.
pub fn forecast_windows<M: IntervalModel + ?Sized>(
    model: &M,
    windows: &WindowedDataset,
) -> Result<IntervalForecast, NetError> {
    let mut crossings = 0;
    let steps = windows
        .inputs()
        .iter()
        .zip(windows.targets())
        .map(|(w, &y)| repaired_step(model, w, None, Some(y), &mut crossings))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(IntervalForecast { steps, crossings })
}

/// Teacher-forced intervals for `series[from..]`, each from the `lag`
/// observations before it, and optionally one more interval past the end.
pub fn forecast<M: IntervalModel + ?Sized>(
    model: &M,
    series: &TimeSeries,
    from: usize,
    include_next: bool,
) -> Result<IntervalForecast, TrainError> {
    let lag = model.lag();
    if series.len() < lag || from < lag {
        return Err(SeriesError::TooShort { len: series.len(), lag }.into());
    }
    let values = series.values();
    let stamps = series.stamps();
    let mut crossings = 0;
    let mut steps = Vec::with_capacity(series.len().saturating_sub(from) + 1);
    for i in from..series.len() {
        steps.push(repaired_step(
            model,
            &values[i - lag..i],
            Some(stamps[i]),
            Some(values[i]),
            &mut crossings,
        )?);
    }
    if include_next {
        let n = series.len();
        let prev = (n >= 2).then(|| stamps[n - 2]);
        let stamp = Stamp::next_after(prev, stamps[n - 1]);
        steps.push(repaired_step(model, &values[n - lag..], stamp, None, &mut crossings)?);
    }
    Ok(IntervalForecast { steps, crossings })
}

/// Forecasts `windows` and summarizes coverage and width.
pub fn evaluate_windows<M: IntervalModel + ?Sized>(
    model: &M,
    windows: &WindowedDataset,
    r: f64,
) -> Result<EvalSummary, TrainError> {
    let fc = forecast_windows(model, windows)?;
    Ok(metrics::evaluate(&fc, r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Architecture;
    use rand::Rng;

    fn constant_task(n: usize, seed: u64, draw: impl Fn(&mut ChaCha8Rng) -> f64) -> TrainData {
        // constant inputs: the network can only learn a constant
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |n: usize| {
            let targets: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
            WindowedDataset::from_pairs(2, vec![vec![0.0, 0.0]; n], targets).unwrap()
        };
        let train = make(n);
        let scaler = Scaler::fit(train.targets()).unwrap();
        TrainData {
            validation: make(n / 4),
            train,
            scaler,
        }
    }

    fn small_mlp(head: Head) -> ModelSpec {
        ModelSpec::new(Architecture::Mlp, 2, head).with_hidden(vec![4]).with_seed(1)
    }

    fn constant_cfg(loss: LossKind) -> TrainConfig {
        TrainConfig {
            epochs: 60,
            batch_size: 256,
            optimizer: OptimizerConfig::Adam {
                lr: 0.01,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            early_stop_patience: 0,
            shuffle_seed: 3,
            loss,
        }
    }

    #[test]
    fn constant_tube_model_learns_quantile_bounds() {
        let data = constant_task(8000, 7, |r| r.gen_range(0.0..1.0));
        let cfg = constant_cfg(LossKind::Tube(TubeConfig::new(0.1)));
        let (model, report) = train(&small_mlp(Head::Interval), &data, &cfg).unwrap();
        let p = model.predict_interval_raw(&[0.0, 0.0]).unwrap();
        let (lo, hi) = (p.lower.min(p.upper), p.lower.max(p.upper));
        assert!((lo - 0.05).abs() <= 0.03, "lower {lo}");
        assert!((hi - 0.95).abs() <= 0.03, "upper {hi}");

        let (again_model, again) = train(&small_mlp(Head::Interval), &data, &cfg).unwrap();
        assert_eq!(report.to_jsonl(), again.to_jsonl());
        assert_eq!(model.params(), again_model.params());
    }

    #[test]
    fn pinball_median_on_symmetric_noise() {
        let data = constant_task(6000, 2, |r| r.gen_range(-1.0..1.0));
        let cfg = constant_cfg(LossKind::Pinball { tau: 0.5 });
        let (model, report) = train(&small_mlp(Head::Scalar), &data, &cfg).unwrap();
        let q = model.predict_raw(&[0.0, 0.0]).unwrap()[0];
        let mut sorted = data.train.targets().to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!((q - median).abs() <= 0.05, "{q} vs {median}");
        assert!(q.abs() <= 0.05);
        assert!(report.final_validation_picp.is_none());
    }

    #[test]
    fn quantile_pair_levels_and_fit() {
        assert_eq!(symmetric_levels(0.05), (0.025, 0.975));
        let data = constant_task(8000, 5, |r| r.gen_range(0.0..1.0));
        let cfg = constant_cfg(LossKind::Pinball { tau: 0.5 });
        let (pair, _) = train_quantile_pair(&small_mlp(Head::Interval), &data, 0.025, 0.975, &cfg).unwrap();
        let p = pair.raw_interval(&[0.0, 0.0]).unwrap();
        assert!((p.lower - 0.025).abs() <= 0.03, "{p:?}");
        assert!((p.upper - 0.975).abs() <= 0.03, "{p:?}");
        assert!(matches!(
            train_quantile_pair(&small_mlp(Head::Interval), &data, 0.9, 0.1, &cfg),
            Err(TrainError::InvalidConfig(_))
        ));
    }

    #[test]
    fn head_and_batch_preconditions() {
        let data = constant_task(100, 1, |r| r.gen_range(0.0..1.0));
        let cfg = constant_cfg(LossKind::Pinball { tau: 0.5 });
        assert!(matches!(
            train(&small_mlp(Head::Interval), &data, &cfg),
            Err(TrainError::IncompatibleHead { .. })
        ));
        let cfg = constant_cfg(LossKind::Tube(TubeConfig::new(0.1)));
        assert!(matches!(
            train(&small_mlp(Head::Interval), &data, &cfg),
            Err(TrainError::TooFewWindows { .. })
        ));
    }

    #[test]
    fn exploding_learning_rate_reports_epoch() {
        // linear net, every Adam step moves each weight by lr
        let mut data = constant_task(300, 1, |r| r.gen_range(0.0..1.0));
        data.train = data.train.map_values(|v| v + 1e3);
        let mut spec = small_mlp(Head::Interval);
        spec.activation = crate::net::Activation::Identity;
        let cfg = TrainConfig {
            batch_size: 32,
            optimizer: OptimizerConfig::Adam {
                lr: 1e200,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            ..constant_cfg(LossKind::Tube(TubeConfig::new(0.1)))
        };
        match train(&spec, &data, &cfg) {
            Err(TrainError::Diverged { epoch }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn repair_swaps_and_flags() {
        assert_eq!(repair_interval(5.0, 3.0), (IntervalPrediction::new(3.0, 5.0), true));
        assert_eq!(repair_interval(3.0, 5.0), (IntervalPrediction::new(3.0, 5.0), false));
        assert_eq!(repair_interval(4.0, 4.0), (IntervalPrediction::new(4.0, 4.0), false));
    }

    #[test]
    fn zero_model_forecasts_scaler_center() {
        let spec = ModelSpec::new(Architecture::Mlp, 3, Head::Interval).with_hidden(vec![2]);
        let scaler = Scaler {
            center: 4.2,
            spread: 2.0,
        };
        let model = PiModel::new(spec.clone(), crate::net::ParamSet::zeros(&spec).unwrap(), scaler).unwrap();
        let series = TimeSeries::from_values("x", (0..10).map(|i| i as f64).collect()).unwrap();
        let fc = forecast(&model, &series, 3, true).unwrap();
        assert_eq!(fc.len(), 8);
        assert!(fc.steps.iter().all(|s| s.lower == 4.2 && s.upper == 4.2));
        assert_eq!(fc.steps[7].actual, None);
        assert_eq!(fc.steps[7].stamp, Some(Stamp::Index(10)));
    }

    #[test]
    fn forecast_has_no_future_leakage() {
        let spec = ModelSpec::new(Architecture::Gru, 4, Head::Interval).with_hidden(vec![3]).with_seed(4);
        let model = PiModel::init(spec, Scaler::identity()).unwrap();
        let values: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
        let a = forecast(&model, &TimeSeries::from_values("x", values.clone()).unwrap(), 4, false).unwrap();
        let mut perturbed = values;
        for v in &mut perturbed[12..] {
            *v += 10.0;
        }
        let b = forecast(&model, &TimeSeries::from_values("x", perturbed).unwrap(), 4, false).unwrap();
        // interval for index i only sees values[..i]
        for i in 0..=8 {
            assert_eq!(a.steps[i].lower, b.steps[i].lower);
            assert_eq!(a.steps[i].upper, b.steps[i].upper);
        }
        assert_ne!(a.steps[9].upper, b.steps[9].upper);
    }

    #[test]
    fn scaled_width_maps_through_spread() {
        let spec = ModelSpec::new(Architecture::Mlp, 3, Head::Interval).with_hidden(vec![4]).with_seed(9);
        let scaler = Scaler {
            center: 1.0,
            spread: 3.0,
        };
        let model = PiModel::init(spec, scaler).unwrap();
        let w = [2.0, 5.0, -1.0];
        let scaled: Vec<f64> = w.iter().map(|&v| scaler.apply(v)).collect();
        let out = model.forward(&scaled).unwrap().outputs;
        let raw = model.predict_interval_raw(&w).unwrap();
        assert!(((raw.upper - raw.lower) - (out[1] - out[0]) * 3.0).abs() < 1e-12);
    }
}
