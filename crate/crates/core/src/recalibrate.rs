//! Width-penalty tuning: retrain with a growing δ while validation coverage
//! sits clearly above target, then keep the narrowest model that still
//! meets it.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::losses::TubeConfig;
use crate::metrics::{compare_models, Comparison, EvalSummary};
use crate::net::{ModelSpec, PiModel};
use crate::trainer::{evaluate_windows, train, LossKind, TrainConfig, TrainData, TrainError, TrainReport};

pub const DEFAULT_R_GRID: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecalConfig {
    pub target: f64,
    pub delta_step: f64,
    /// Coverage above `target + margin` counts as clearly over target.
    pub margin: f64,
    /// Total rounds trained, round 0 included.
    pub max_rounds: usize,
}

impl Default for RecalConfig {
    fn default() -> Self {
        Self {
            target: 0.95,
            delta_step: 0.01,
            margin: 0.005,
            max_rounds: 20,
        }
    }
}

impl RecalConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.target > 0.0 && self.target < 1.0)
            || !(self.delta_step > 0.0)
            || !(self.margin >= 0.0)
            || self.max_rounds == 0
        {
            return Err(TrainError::InvalidConfig(format!("bad recalibration settings {self:?}")));
        }
        Ok(())
    }

    /// δ used in round `k`.
    pub fn delta(&self, k: usize) -> f64 {
        k as f64 * self.delta_step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PicpAtTarget,
    PicpBelowTarget,
    MaxRounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalRound {
    pub delta: f64,
    pub validation_picp: f64,
    pub validation_mpiw: f64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalReport {
    pub rounds: Vec<RecalRound>,
    pub chosen: usize,
    pub stop_reason: StopReason,
}

impl RecalReport {
    pub fn chosen_round(&self) -> &RecalRound {
        &self.rounds[self.chosen]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// The round loop, independent of how a round is trained.
///
/// `train_round(k, delta)` returns a model and its validation summary.
pub fn run_rounds<M, F>(cfg: &RecalConfig, mut train_round: F) -> Result<(M, RecalReport), TrainError>
where
    F: FnMut(usize, f64) -> Result<(M, EvalSummary), TrainError>,
{
    cfg.validate()?;
    let mut rounds = Vec::new();
    let mut models = Vec::new();
    let mut chosen = 0;
    let stop_reason = loop {
        let k = rounds.len();
        let delta = cfg.delta(k);
        let started = Instant::now();
        let (model, summary) = train_round(k, delta)?;
        rounds.push(RecalRound {
            delta,
            validation_picp: summary.picp,
            validation_mpiw: summary.mpiw,
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
        models.push(Some(model));

        let picp = summary.picp;
        if picp >= cfg.target && (k == 0 || summary.mpiw <= rounds[chosen].validation_mpiw) {
            chosen = k;
        }
        if picp < cfg.target {
            if k == 0 {
                log::warn!(
                    "round 0 validation PICP {picp:.4} is below target {}; a width penalty cannot raise it",
                    cfg.target
                );
            }
            break StopReason::PicpBelowTarget;
        }
        if picp <= cfg.target + cfg.margin {
            break StopReason::PicpAtTarget;
        }
        if rounds.len() >= cfg.max_rounds {
            break StopReason::MaxRounds;
        }
    };
    let model = models.swap_remove(chosen).expect("chosen round kept");
    Ok((
        model,
        RecalReport {
            rounds,
            chosen,
            stop_reason,
        },
    ))
}

/// Recalibrates a tube-loss model. The δ in `tube` is ignored.
pub fn recalibrate(
    spec: &ModelSpec,
    data: &TrainData,
    tube: &TubeConfig,
    train_cfg: &TrainConfig,
    cfg: &RecalConfig,
) -> Result<(PiModel, TrainReport, RecalReport), TrainError> {
    if data.validation.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let ((model, train_report), report) = run_rounds(cfg, |_, delta| {
        let round_cfg = train_cfg.clone().with_loss(LossKind::Tube(tube.with_delta(delta)));
        let (model, train_report) = train(spec, data, &round_cfg)?;
        let summary = evaluate_windows(&model, &data.validation, tube.r)?;
        Ok(((model, train_report), summary))
    })?;
    Ok((model, train_report, report))
}

/// One grid point of [`tune_r`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RCandidate {
    pub r: f64,
    pub validation: EvalSummary,
    pub recal: RecalReport,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub r: f64,
    pub model: PiModel,
    pub train_report: TrainReport,
    pub candidates: Vec<RCandidate>,
}

/// Recalibrates once per `r` and keeps the validation winner. Ties go to
/// the earlier grid entry.
pub fn tune_r(
    spec: &ModelSpec,
    data: &TrainData,
    tube: &TubeConfig,
    r_grid: &[f64],
    train_cfg: &TrainConfig,
    cfg: &RecalConfig,
) -> Result<TuneOutcome, TrainError> {
    if r_grid.is_empty() {
        return Err(TrainError::InvalidConfig("empty r grid".into()));
    }
    let mut best: Option<(f64, PiModel, TrainReport, EvalSummary)> = None;
    let mut candidates = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let tube_r = tube.with_r(r);
        tube_r.validate()?;
        let (model, train_report, recal) = recalibrate(spec, data, &tube_r, train_cfg, cfg)?;
        let summary = evaluate_windows(&model, &data.validation, r)?;
        candidates.push(RCandidate {
            r,
            validation: summary,
            recal,
        });
        let better = match &best {
            None => true,
            Some((_, _, _, current)) => compare_models(&summary, current, cfg.target) == Comparison::ABetter,
        };
        if better {
            best = Some((r, model, train_report, summary));
        }
    }
    let (r, model, train_report, _) = best.expect("non-empty grid");
    Ok(TuneOutcome {
        r,
        model,
        train_report,
        candidates,
    })
}
