//! Time-series ingestion, chronological splitting, scaling and sliding windows.
//!
//! A [`TimeSeries`] is validated once at construction: timestamps strictly
//! increase and every value is finite. Everything downstream (splits,
//! windows, the scaler) relies on that and does not re-check.

use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: non-increasing timestamps")]
    NonIncreasingTimestamps { line: u64 },
    #[error("line {line}: non-finite value")]
    NonFiniteValue { line: u64 },
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("input has no data rows")]
    Empty,
    #[error("length mismatch: {timestamps} timestamps for {values} values")]
    LengthMismatch { timestamps: usize, values: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("series of length {len} too short for lag {lag}")]
    TooShort { len: usize, lag: usize },
    #[error("lag must be at least 1")]
    ZeroLag,
    #[error("cannot fit scaler: {0}")]
    Scaler(String),
}

/// A position on the time axis.
///
/// Files without a timestamp column fall back to the zero-based row index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stamp {
    Index(usize),
    At(NaiveDateTime),
}

impl Stamp {
    /// The stamp one step after `self`, using `prev -> self` as the spacing.
    pub fn next_after(prev: Option<Stamp>, last: Stamp) -> Option<Stamp> {
        match (prev, last) {
            (_, Stamp::Index(i)) => Some(Stamp::Index(i + 1)),
            (Some(Stamp::At(p)), Stamp::At(l)) => Some(Stamp::At(l + (l - p))),
            _ => None,
        }
    }
}

impl fmt::Display for Stamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stamp::Index(i) => write!(f, "{i}"),
            Stamp::At(t) => write!(f, "{}", t.format("%Y-%m-%dT%H:%M:%S")),
        }
    }
}

/// Parses the ISO-8601 variants that show up in weather exports.
pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let text = text.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Some(t.naive_utc());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%d %H:%M",
    ];
    for fmt in FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Ordered scalar observations, e.g. hourly sensor readings.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    name: String,
    stamps: Vec<Stamp>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(
        name: impl Into<String>,
        stamps: Vec<Stamp>,
        values: Vec<f64>,
    ) -> Result<Self, SeriesError> {
        if stamps.len() != values.len() {
            return Err(SeriesError::LengthMismatch {
                timestamps: stamps.len(),
                values: values.len(),
            });
        }
        // Line numbers assume a header row, matching what parse_csv reports.
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SeriesError::NonFiniteValue { line: i as u64 + 2 });
            }
        }
        for (i, w) in stamps.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(SeriesError::NonIncreasingTimestamps { line: i as u64 + 3 });
            }
        }
        Ok(Self {
            name: name.into(),
            stamps,
            values,
        })
    }

    /// A series indexed by position, stamps `0..n`.
    pub fn from_values(name: impl Into<String>, values: Vec<f64>) -> Result<Self, SeriesError> {
        let stamps = (0..values.len()).map(Stamp::Index).collect();
        Self::new(name, stamps, values)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stamps(&self) -> &[Stamp] {
        &self.stamps
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Contiguous sub-series `[start, end)`; stamps are kept as-is.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeries {
        TimeSeries {
            name: self.name.clone(),
            stamps: self.stamps[start..end].to_vec(),
            values: self.values[start..end].to_vec(),
        }
    }

    /// Concatenates `other` after `self`. Used to rebuild a series from its splits.
    pub fn concat(&self, other: &TimeSeries) -> Result<TimeSeries, SeriesError> {
        let mut stamps = self.stamps.clone();
        stamps.extend_from_slice(&other.stamps);
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        TimeSeries::new(self.name.clone(), stamps, values)
    }
}

/// Which CSV columns hold the time axis and the observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnConfig {
    /// `None` uses the row index as the time axis.
    #[serde(default)]
    pub timestamp: Option<String>,
    pub value: String,
}

impl Default for ColumnConfig {
    fn default() -> Self {
        Self {
            timestamp: Some("timestamp".into()),
            value: "value".into(),
        }
    }
}

/// Reads a headered CSV into a validated [`TimeSeries`].
///
/// Rows are kept in file order. Empty or unparsable fields are rejected rather
/// than imputed. Error line numbers are 1-based and count the header.
pub fn parse_csv<R: Read>(source: R, columns: &ColumnConfig) -> Result<TimeSeries, SeriesError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| SeriesError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SeriesError::MissingColumn(name.to_string()))
    };
    let value_col = find(&columns.value)?;
    let stamp_col = columns.timestamp.as_deref().map(find).transpose()?;

    let mut stamps = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SeriesError::MalformedRow {
            line: e.position().map_or(row as u64 + 2, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let field = |col: usize| {
            record.get(col).ok_or_else(|| SeriesError::MalformedRow {
                line,
                reason: format!("missing field {}", col + 1),
            })
        };

        let raw = field(value_col)?;
        let value: f64 = raw.parse().map_err(|_| SeriesError::MalformedRow {
            line,
            reason: format!("value `{raw}` is not a decimal number"),
        })?;
        if !value.is_finite() {
            return Err(SeriesError::NonFiniteValue { line });
        }

        let stamp = match stamp_col {
            Some(col) => {
                let raw = field(col)?;
                Stamp::At(parse_timestamp(raw).ok_or_else(|| SeriesError::MalformedRow {
                    line,
                    reason: format!("timestamp `{raw}` is not ISO-8601"),
                })?)
            }
            None => Stamp::Index(row),
        };
        if stamps.last().is_some_and(|prev| *prev >= stamp) {
            return Err(SeriesError::NonIncreasingTimestamps { line });
        }
        stamps.push(stamp);
        values.push(value);
    }
    if values.is_empty() {
        return Err(SeriesError::Empty);
    }
    Ok(TimeSeries {
        name: columns.value.clone(),
        stamps,
        values,
    })
}

/// Writes `timestamp,value` rows, or a lone `value` column when the series
/// is index-stamped. Values use the shortest text that parses back exactly.
pub fn write_csv<W: Write>(series: &TimeSeries, sink: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    let dated = series.stamps.iter().any(|s| matches!(s, Stamp::At(_)));
    if dated {
        out.write_record(["timestamp", "value"])?;
    } else {
        out.write_record(["value"])?;
    }
    for (stamp, value) in series.stamps.iter().zip(&series.values) {
        if dated {
            out.write_record([stamp.to_string(), value.to_string()])?;
        } else {
            out.write_record([value.to_string()])?;
        }
    }
    out.flush()
}

/// Chronological split proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    /// Fraction of the full series held out at the end for testing.
    pub test_fraction: f64,
    /// Fraction of the remaining (training) part used for validation.
    pub validation_fraction_of_train: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.30,
            validation_fraction_of_train: 0.10,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SeriesError> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(self.test_fraction) {
            return Err(SeriesError::InvalidSplit(format!(
                "test_fraction {} not in (0, 1)",
                self.test_fraction
            )));
        }
        if !open_unit(self.validation_fraction_of_train) {
            return Err(SeriesError::InvalidSplit(format!(
                "validation_fraction_of_train {} not in (0, 1)",
                self.validation_fraction_of_train
            )));
        }
        Ok(())
    }

    /// Segment lengths `(train, validation, test)` for a series of length `n`.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize), SeriesError> {
        self.validate()?;
        let test = (self.test_fraction * n as f64).round() as usize;
        let validation = (self.validation_fraction_of_train * (n - test.min(n)) as f64).round() as usize;
        let train = n.saturating_sub(test + validation);
        if test == 0 || validation == 0 || train == 0 || test + validation >= n {
            return Err(SeriesError::InvalidSplit(format!(
                "series of length {n} too short: train {train}, validation {validation}, test {test}"
            )));
        }
        Ok((train, validation, test))
    }
}

/// Three contiguous segments of one series, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: TimeSeries,
    pub validation: TimeSeries,
    pub test: TimeSeries,
}

pub fn chrono_split(series: &TimeSeries, spec: &SplitSpec) -> Result<Splits, SeriesError> {
    let (train, validation, _) = spec.sizes(series.len())?;
    let n = series.len();
    Ok(Splits {
        train: series.slice(0, train),
        validation: series.slice(train, train + validation),
        test: series.slice(train + validation, n),
    })
}

/// `(lag-window, next value)` training pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    lag: usize,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl WindowedDataset {
    /// Builds a dataset from explicit pairs; every input must have length `lag`.
    pub fn from_pairs(lag: usize, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, SeriesError> {
        if lag == 0 {
            return Err(SeriesError::ZeroLag);
        }
        if inputs.len() != targets.len() {
            return Err(SeriesError::LengthMismatch {
                timestamps: inputs.len(),
                values: targets.len(),
            });
        }
        if let Some(bad) = inputs.iter().find(|w| w.len() != lag) {
            return Err(SeriesError::TooShort { len: bad.len(), lag });
        }
        Ok(Self { lag, inputs, targets })
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Applies `f` to every input value and target, e.g. a scaler.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> WindowedDataset {
        WindowedDataset {
            lag: self.lag,
            inputs: self
                .inputs
                .iter()
                .map(|w| w.iter().map(|&v| f(v)).collect())
                .collect(),
            targets: self.targets.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Sliding windows over a single series: `len - lag` pairs.
pub fn make_windows(series: &TimeSeries, lag: usize) -> Result<WindowedDataset, SeriesError> {
    windows_from_values(series.values(), lag)
}

pub fn windows_from_values(values: &[f64], lag: usize) -> Result<WindowedDataset, SeriesError> {
    if lag == 0 {
        return Err(SeriesError::ZeroLag);
    }
    if values.len() <= lag {
        return Err(SeriesError::TooShort {
            len: values.len(),
            lag,
        });
    }
    let inputs = values.windows(lag + 1).map(|w| w[..lag].to_vec()).collect();
    let targets = values[lag..].to_vec();
    Ok(WindowedDataset { lag, inputs, targets })
}

/// Windows whose targets are exactly `segment`, with inputs drawing on the
/// last `lag` observations of `history` where the segment itself is too short.
///
/// This is the teacher-forced evaluation layout: every point of a validation
/// or test segment gets one interval.
pub fn windows_with_history(
    history: &TimeSeries,
    segment: &TimeSeries,
    lag: usize,
) -> Result<WindowedDataset, SeriesError> {
    if lag == 0 {
        return Err(SeriesError::ZeroLag);
    }
    if history.len() < lag {
        return Err(SeriesError::TooShort {
            len: history.len(),
            lag,
        });
    }
    let mut joined = history.values()[history.len() - lag..].to_vec();
    joined.extend_from_slice(segment.values());
    windows_from_values(&joined, lag)
}

/// Standardization fitted on the training segment only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub center: f64,
    pub spread: f64,
}

impl Scaler {
    /// Mean and population standard deviation of `values`.
    pub fn fit(values: &[f64]) -> Result<Self, SeriesError> {
        if values.is_empty() {
            return Err(SeriesError::Scaler("empty training series".into()));
        }
        let n = values.len() as f64;
        let center = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n;
        let spread = var.sqrt();
        if !(spread > 0.0) || !spread.is_finite() {
            return Err(SeriesError::Scaler("constant training series".into()));
        }
        Ok(Self { center, spread })
    }

    pub fn identity() -> Self {
        Self {
            center: 0.0,
            spread: 1.0,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.center) / self.spread
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.spread + self.center
    }

    pub fn apply_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn invert_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.invert(v)).collect()
    }
}

pub fn fit_scaler(train: &TimeSeries) -> Result<Scaler, SeriesError> {
    Scaler::fit(train.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: &[f64]) -> TimeSeries {
        TimeSeries::from_values("x", values.to_vec()).unwrap()
    }

    #[test]
    fn parses_three_rows() {
        let text = "t,v\n2020-01-01T00:00,5.0\n2020-01-01T01:00,6.1\n2020-01-01T02:00,4.9";
        let cols = ColumnConfig {
            timestamp: Some("t".into()),
            value: "v".into(),
        };
        let s = parse_csv(text.as_bytes(), &cols).unwrap();
        assert_eq!(s.values(), &[5.0, 6.1, 4.9]);
        assert_eq!(s.stamps()[1].to_string(), "2020-01-01T01:00:00");
    }

    #[test]
    fn rejects_duplicate_timestamp_with_line() {
        let text = "t,v\n2020-01-01T00:00,5.0\n2020-01-01T00:00,6.1\n";
        let cols = ColumnConfig {
            timestamp: Some("t".into()),
            value: "v".into(),
        };
        let err = parse_csv(text.as_bytes(), &cols).unwrap_err();
        assert_eq!(err, SeriesError::NonIncreasingTimestamps { line: 3 });
        assert!(err.to_string().contains("non-increasing timestamps"));
    }

    #[test]
    fn rejects_nan_and_missing_values() {
        let cols = ColumnConfig {
            timestamp: None,
            value: "v".into(),
        };
        let err = parse_csv("v\n1.0\nNaN\n".as_bytes(), &cols).unwrap_err();
        assert_eq!(err, SeriesError::NonFiniteValue { line: 3 });
        assert!(err.to_string().contains("non-finite value"));

        let err = parse_csv("v\n1.0\n\n2.0\nabc\n".as_bytes(), &cols).unwrap_err();
        assert!(matches!(err, SeriesError::MalformedRow { line: 5, .. }), "{err:?}");
    }

    #[test]
    fn missing_timestamp_column_uses_row_index() {
        let cols = ColumnConfig {
            timestamp: None,
            value: "speed".into(),
        };
        let s = parse_csv("speed,dir\n1.5,90\n2.5,80\n".as_bytes(), &cols).unwrap();
        assert_eq!(s.stamps(), &[Stamp::Index(0), Stamp::Index(1)]);
        let err = parse_csv("a\n1\n".as_bytes(), &cols).unwrap_err();
        assert_eq!(err, SeriesError::MissingColumn("speed".into()));
    }

    #[test]
    fn split_sizes_follow_rounding_rule() {
        let spec = SplitSpec::default();
        assert_eq!(spec.sizes(1000).unwrap(), (630, 70, 300));
        assert_eq!(spec.sizes(10).unwrap(), (6, 1, 3));
        let bad = SplitSpec {
            test_fraction: 0.0,
            ..SplitSpec::default()
        };
        assert!(matches!(bad.sizes(100), Err(SeriesError::InvalidSplit(_))));
        assert!(spec.sizes(2).is_err());
    }

    #[test]
    fn windows_enumerate_pairs() {
        let w = make_windows(&series(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(w.inputs(), &[vec![1.0, 2.0], vec![2.0, 3.0]]);
        assert_eq!(w.targets(), &[3.0, 4.0]);

        assert!(make_windows(&series(&[1.0, 2.0]), 2).is_err());

        let w = make_windows(&series(&[5.0, 5.0, 5.0]), 1).unwrap();
        assert_eq!(w.inputs(), &[vec![5.0], vec![5.0]]);
        assert_eq!(w.targets(), &[5.0, 5.0]);
    }

    #[test]
    fn history_windows_cover_every_segment_point() {
        let s = series(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = windows_with_history(&s.slice(0, 4), &s.slice(4, 6), 3).unwrap();
        assert_eq!(w.inputs(), &[vec![2.0, 3.0, 4.0], vec![3.0, 4.0, 5.0]]);
        assert_eq!(w.targets(), &[5.0, 6.0]);
    }

    #[test]
    fn scaler_arithmetic() {
        let sc = fit_scaler(&series(&[0.0, 2.0])).unwrap();
        assert_eq!((sc.center, sc.spread), (1.0, 1.0));
        assert_eq!(sc.apply(3.0), 2.0);
        assert!((sc.invert(sc.apply(7.3)) - 7.3).abs() <= 1e-12);
        assert!(fit_scaler(&series(&[4.0, 4.0, 4.0])).is_err());
    }

    #[test]
    fn scaler_is_fitted_on_train_only() {
        let s = series(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 100.0, 200.0]);
        let splits = chrono_split(&s, &SplitSpec::default()).unwrap();
        let sc = fit_scaler(&splits.train).unwrap();
        // train is [1..6]; the large test values must not leak into the center
        assert_eq!(sc.center, 3.5);
    }

    proptest! {
        #[test]
        fn windows_reassemble_series(values in prop::collection::vec(-50.0f64..50.0, 2..60), lag in 1usize..8) {
            prop_assume!(values.len() > lag);
            let w = windows_from_values(&values, lag).unwrap();
            prop_assert_eq!(w.len(), values.len() - lag);
            let mut rebuilt = w.inputs()[0].clone();
            rebuilt.extend_from_slice(w.targets());
            prop_assert_eq!(&rebuilt, &values);
            for (k, input) in w.inputs().iter().enumerate() {
                prop_assert_eq!(input.as_slice(), &values[k..k + lag]);
            }
        }

        #[test]
        fn splits_partition_series(n in 30usize..2000, tf in 0.05f64..0.6, vf in 0.05f64..0.6) {
            let s = TimeSeries::from_values("x", (0..n).map(|i| i as f64).collect()).unwrap();
            let spec = SplitSpec { test_fraction: tf, validation_fraction_of_train: vf };
            if let Ok(parts) = chrono_split(&s, &spec) {
                let joined = parts.train.concat(&parts.validation).unwrap().concat(&parts.test).unwrap();
                prop_assert_eq!(joined, s);
            }
        }

        #[test]
        fn scaler_round_trip(values in prop::collection::vec(-1e3f64..1e3, 2..50), probe in -1e4f64..1e4) {
            if let Ok(sc) = Scaler::fit(&values) {
                let back = sc.invert(sc.apply(probe));
                prop_assert!((back - probe).abs() <= 1e-12 * probe.abs().max(1.0));
            }
        }
    }
}
