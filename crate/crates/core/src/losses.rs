//! Interval losses and their subgradients.
//!
//! The Tube loss scores a pair of bounds `(lower, upper)` against one
//! observation `y`. With `t = 1 - alpha` and the blend line
//! `b = r * upper + (1 - r) * lower`, it is
//!
//! ```text
//!   t * (y - upper)          if y > upper               (R1)
//!   (1 - t) * (upper - y)    if lower <= y <= upper, y >= b   (R2)
//!   (1 - t) * (y - lower)    if lower <= y <= upper, y <  b   (R3)
//!   t * (lower - y)          if y < lower               (R4)
//! ```
//!
//! Points outside the tube pull the nearer bound outward with weight `t`;
//! points inside pull the nearer bound (relative to the blend line) inward with
//! weight `1 - t`. At the minimizer the outside counts balance the inside
//! counts in the ratio `(1 - t) / t`, which is what drives coverage to `t`.
//!
//! Gradients are the exact branch derivatives. On kinks (`y` on a bound) the
//! inside branch is used.
//!
//! Pinball and QD losses are provided as baselines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch length mismatch: {preds} predictions, {targets} targets")]
    LengthMismatch { preds: usize, targets: usize },
    #[error("invalid loss parameter: {0}")]
    InvalidParameter(String),
}

/// Hyperparameters of the width-penalized Tube objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeConfig {
    /// Miscoverage rate; the target coverage is `1 - alpha`.
    pub alpha: f64,
    /// Position of the blend line inside the tube, in (0, 1).
    #[serde(default = "TubeConfig::default_r")]
    pub r: f64,
    /// Weight of the mean interval width in the objective.
    #[serde(default)]
    pub delta: f64,
}

impl TubeConfig {
    fn default_r() -> f64 {
        0.5
    }

    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            r: 0.5,
            delta: 0.0,
        }
    }

    pub fn with_r(self, r: f64) -> Self {
        Self { r, ..self }
    }

    pub fn with_delta(self, delta: f64) -> Self {
        Self { delta, ..self }
    }

    /// Target coverage `t = 1 - alpha`.
    pub fn coverage(&self) -> f64 {
        1.0 - self.alpha
    }

    pub fn validate(&self) -> Result<(), LossError> {
        check_alpha(self.alpha)?;
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(LossError::InvalidParameter(format!("r = {} not in (0, 1)", self.r)));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(LossError::InvalidParameter(format!("delta = {} must be >= 0", self.delta)));
        }
        Ok(())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<(), LossError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(LossError::InvalidParameter(format!("alpha = {alpha} not in (0, 1)")))
    }
}

/// A predicted interval. Crossed bounds are representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalPrediction {
    pub lower: f64,
    pub upper: f64,
}

impl IntervalPrediction {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// `r * upper + (1 - r) * lower`.
    pub fn blend(&self, r: f64) -> f64 {
        r * self.upper + (1.0 - r) * self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

/// The four regions the tube cuts the target axis into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// Above the upper bound.
    R1,
    /// Inside, on or above the blend line.
    R2,
    /// Inside, below the blend line.
    R3,
    /// Below the lower bound.
    R4,
}

impl Region {
    pub fn index(self) -> usize {
        match self {
            Region::R1 => 0,
            Region::R2 => 1,
            Region::R3 => 2,
            Region::R4 => 3,
        }
    }
}

fn finite(name: &'static str, xs: &[f64]) -> Result<(), LossError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LossError::NonFinite(name))
    }
}

/// Region of `y` relative to `pred`; assumes `lower <= upper`.
pub fn classify_region(y: f64, pred: IntervalPrediction, r: f64) -> Result<Region, LossError> {
    finite("classify_region", &[y, pred.lower, pred.upper, r])?;
    Ok(region_unchecked(y, pred, r))
}

#[inline]
fn region_unchecked(y: f64, pred: IntervalPrediction, r: f64) -> Region {
    if y > pred.upper {
        Region::R1
    } else if y < pred.lower {
        Region::R4
    } else if y >= pred.blend(r) {
        Region::R2
    } else {
        Region::R3
    }
}

/// Tube loss of a single observation. Expects `lower <= upper`.
pub fn tube_loss(y: f64, pred: IntervalPrediction, alpha: f64, r: f64) -> Result<f64, LossError> {
    finite("tube_loss", &[y, pred.lower, pred.upper, alpha, r])?;
    Ok(tube_loss_and_grad(y, pred, alpha, r).0)
}

/// `(d/d lower, d/d upper)` of [`tube_loss`].
pub fn tube_loss_grad(y: f64, pred: IntervalPrediction, alpha: f64, r: f64) -> Result<(f64, f64), LossError> {
    finite("tube_loss_grad", &[y, pred.lower, pred.upper, alpha, r])?;
    let (_, d_lower, d_upper) = tube_loss_and_grad(y, pred, alpha, r);
    Ok((d_lower, d_upper))
}

#[inline]
fn tube_loss_and_grad(y: f64, pred: IntervalPrediction, alpha: f64, r: f64) -> (f64, f64, f64) {
    let t = 1.0 - alpha;
    let IntervalPrediction { lower, upper } = pred;
    match region_unchecked(y, pred, r) {
        Region::R1 => (t * (y - upper), 0.0, -t),
        Region::R2 => ((1.0 - t) * (upper - y), 0.0, 1.0 - t),
        Region::R3 => ((1.0 - t) * (y - lower), -(1.0 - t), 0.0),
        Region::R4 => (t * (lower - y), t, 0.0),
    }
}

/// Swaps crossed bounds. Returns the ordered interval and whether a swap happened.
pub fn order_bounds(pred: IntervalPrediction) -> (IntervalPrediction, bool) {
    if pred.lower > pred.upper {
        (IntervalPrediction::new(pred.upper, pred.lower), true)
    } else {
        (pred, false)
    }
}

/// Value and per-prediction gradients of a batch objective.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    /// One gradient per head output per prediction; for interval heads
    /// `[d_lower, d_upper]`, for scalar heads `[d_q]`.
    pub grads: Vec<[f64; 2]>,
}

/// Sum of Tube losses plus `delta * sum |upper - lower|`.
///
/// Crossed predictions are ordered before the data term is evaluated and the
/// gradient is routed back to the output that produced each bound. The width
/// penalty is symmetric and needs no repair.
pub fn tube_objective(
    preds: &[IntervalPrediction],
    targets: &[f64],
    cfg: &TubeConfig,
) -> Result<BatchLoss, LossError> {
    check_batch(preds.len(), targets.len())?;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (&pred, &y) in preds.iter().zip(targets) {
        finite("tube_objective", &[y, pred.lower, pred.upper])?;
        let (ordered, swapped) = order_bounds(pred);
        let (loss, d_lo, d_hi) = tube_loss_and_grad(y, ordered, cfg.alpha, cfg.r);
        let (mut d_first, mut d_second) = if swapped { (d_hi, d_lo) } else { (d_lo, d_hi) };
        let gap = pred.lower - pred.upper;
        value += loss + cfg.delta * gap.abs();
        let s = sign(gap);
        d_first += cfg.delta * s;
        d_second -= cfg.delta * s;
        grads.push([d_first, d_second]);
    }
    Ok(BatchLoss { value, grads })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_batch(preds: usize, targets: usize) -> Result<(), LossError> {
    if preds == 0 {
        return Err(LossError::EmptyBatch);
    }
    if preds != targets {
        return Err(LossError::LengthMismatch { preds, targets });
    }
    Ok(())
}

/// Quantile (pinball) loss and its subgradient in `q_hat`.
///
/// At `y == q_hat` the subgradient `1 - tau` is returned.
pub fn pinball_loss(y: f64, q_hat: f64, tau: f64) -> Result<(f64, f64), LossError> {
    finite("pinball_loss", &[y, q_hat, tau])?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(LossError::InvalidParameter(format!("tau = {tau} not in (0, 1)")));
    }
    let diff = y - q_hat;
    if diff > 0.0 {
        Ok((tau * diff, -tau))
    } else {
        Ok((-(1.0 - tau) * diff, 1.0 - tau))
    }
}

/// Summed pinball loss over a batch of scalar predictions.
pub fn pinball_objective(preds: &[f64], targets: &[f64], tau: f64) -> Result<BatchLoss, LossError> {
    check_batch(preds.len(), targets.len())?;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (&q, &y) in preds.iter().zip(targets) {
        let (v, d) = pinball_loss(y, q, tau)?;
        value += v;
        grads.push([d, 0.0]);
    }
    Ok(BatchLoss { value, grads })
}

/// Settings of the quality-driven (QD) interval loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QdConfig {
    pub alpha: f64,
    /// Weight of the coverage penalty.
    #[serde(default = "QdConfig::default_lambda")]
    pub lambda: f64,
    /// Sharpness of the sigmoid coverage indicators.
    #[serde(default = "QdConfig::default_softness")]
    pub softness: f64,
}

impl QdConfig {
    fn default_lambda() -> f64 {
        15.0
    }

    fn default_softness() -> f64 {
        160.0
    }

    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            lambda: Self::default_lambda(),
            softness: Self::default_softness(),
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        check_alpha(self.alpha)?;
        if !(self.lambda >= 0.0) {
            return Err(LossError::InvalidParameter(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if !(self.softness > 0.0) {
            return Err(LossError::InvalidParameter(format!("softness = {} must be > 0", self.softness)));
        }
        Ok(())
    }
}

/// Keeps the captured-width denominator away from zero when nothing is captured.
const QD_EPS: f64 = 1e-3;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// QD loss over a batch:
///
/// ```text
///   captured_width + lambda * n / (alpha (1 - alpha)) * max(0, (1 - alpha) - soft_picp)^2
/// ```
///
/// `captured_width` is the mean width over points strictly covered by the
/// interval (hard indicator, no gradient through it); `soft_picp` replaces the
/// indicator with `sigmoid(s (y - lower)) * sigmoid(s (upper - y))`.
pub fn qd_loss(preds: &[IntervalPrediction], targets: &[f64], cfg: &QdConfig) -> Result<BatchLoss, LossError> {
    check_batch(preds.len(), targets.len())?;
    let n = preds.len();
    let s = cfg.softness;

    let mut captured = 0.0;
    let mut captured_width = 0.0;
    let mut soft_sum = 0.0;
    let mut soft_parts = Vec::with_capacity(n);
    for (p, &y) in preds.iter().zip(targets) {
        finite("qd_loss", &[y, p.lower, p.upper])?;
        let lo = sigmoid(s * (y - p.lower));
        let hi = sigmoid(s * (p.upper - y));
        soft_sum += lo * hi;
        soft_parts.push((lo, hi));
        if p.lower < y && y < p.upper {
            captured += 1.0;
            captured_width += p.upper - p.lower;
        }
    }
    let denom = captured + QD_EPS;
    let width_term = captured_width / denom;
    let soft_picp = soft_sum / n as f64;
    let shortfall = ((1.0 - cfg.alpha) - soft_picp).max(0.0);
    let scale = cfg.lambda * n as f64 / (cfg.alpha * (1.0 - cfg.alpha));
    let value = width_term + scale * shortfall * shortfall;

    // d penalty / d soft_k = -2 scale shortfall / n
    let d_soft = -2.0 * scale * shortfall / n as f64;
    let grads = preds
        .iter()
        .zip(targets)
        .zip(&soft_parts)
        .map(|((p, &y), &(lo, hi))| {
            let inside = p.lower < y && y < p.upper;
            let w = if inside { 1.0 / denom } else { 0.0 };
            // d(lo)/d lower = -s lo (1 - lo); d(hi)/d upper = s hi (1 - hi)
            let d_lower = -w + d_soft * hi * (-s * lo * (1.0 - lo));
            let d_upper = w + d_soft * lo * (s * hi * (1.0 - hi));
            [d_lower, d_upper]
        })
        .collect();
    Ok(BatchLoss { value, grads })
}

/// Options for [`fit_constant_interval`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantFitOptions {
    pub iterations: usize,
    /// First step, as a multiple of the sample standard deviation.
    pub initial_step: f64,
    /// Last step, as a multiple of the sample standard deviation.
    pub final_step: f64,
}

impl Default for ConstantFitOptions {
    fn default() -> Self {
        Self {
            iterations: 3000,
            initial_step: 0.05,
            final_step: 1e-5,
        }
    }
}

/// Minimizes the mean Tube objective over a constant interval by
/// subgradient descent with a geometrically decaying step.
///
/// This is the same gradient signal a network head receives, reduced to two
/// free parameters; useful for checking calibration and `r` behaviour on a
/// sample without any model in the way.
pub fn fit_constant_interval(
    samples: &[f64],
    cfg: &TubeConfig,
    opts: ConstantFitOptions,
) -> Result<IntervalPrediction, LossError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    finite("fit_constant_interval", samples)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);

    let mut pred = IntervalPrediction::new(mean - sd, mean + sd);
    let iters = opts.iterations.max(1);
    let decay = (opts.final_step / opts.initial_step).powf(1.0 / iters as f64);
    let mut step = opts.initial_step * sd;
    let targets_buf = samples;
    for _ in 0..iters {
        let mut g = [0.0; 2];
        for &y in targets_buf {
            let (ordered, swapped) = order_bounds(pred);
            let (_, d_lo, d_hi) = tube_loss_and_grad(y, ordered, cfg.alpha, cfg.r);
            let (a, b) = if swapped { (d_hi, d_lo) } else { (d_lo, d_hi) };
            g[0] += a;
            g[1] += b;
        }
        let gap = pred.lower - pred.upper;
        g[0] = g[0] / n + cfg.delta * sign(gap);
        g[1] = g[1] / n - cfg.delta * sign(gap);
        pred.lower -= step * g[0];
        pred.upper -= step * g[1];
        step *= decay;
    }
    Ok(order_bounds(pred).0)
}
