//! Prediction intervals for univariate time series, trained with the tube loss.
//!
//! A network reads a window of past values and emits `(lower, upper)` for the
//! next one. See the guide under `book/` for a walk-through.

pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod recalibrate;
pub mod series;
pub mod synth;
pub mod trainer;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/tube-loss.md")]
    mod tube_loss {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/recalibration.md")]
    mod recalibration {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
