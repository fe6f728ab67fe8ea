//! Coverage and width metrics, the pairwise comparison rule, rankings and
//! the percentage-improvement aggregate.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{classify_region, IntervalPrediction, Region};
use crate::series::{parse_timestamp, SeriesError, Stamp};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("forecast is empty")]
    Empty,
    #[error("step {0} has no actual value")]
    MissingActual(usize),
    #[error("baseline MPIW must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("ranking needs at least two entries")]
    TooFewEntries,
    #[error("non-finite value in forecast step {0}")]
    NonFinite(usize),
}

/// One forecast interval, in original units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastStep {
    pub stamp: Option<Stamp>,
    pub lower: f64,
    pub upper: f64,
    pub actual: Option<f64>,
}

impl ForecastStep {
    pub fn interval(&self) -> IntervalPrediction {
        IntervalPrediction::new(self.lower, self.upper)
    }
}

/// Per-step intervals plus how many raw predictions had crossed bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalForecast {
    pub steps: Vec<ForecastStep>,
    pub crossings: usize,
}

impl IntervalForecast {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Builds a forecast from ordered intervals and actuals, without stamps.
    pub fn from_parts(intervals: &[IntervalPrediction], actuals: &[f64]) -> Self {
        let steps = intervals
            .iter()
            .zip(actuals)
            .map(|(p, &y)| ForecastStep {
                stamp: None,
                lower: p.lower,
                upper: p.upper,
                actual: Some(y),
            })
            .collect();
        Self { steps, crossings: 0 }
    }

    fn actuals(&self) -> Result<impl Iterator<Item = (IntervalPrediction, f64)> + '_, MetricsError> {
        if self.steps.is_empty() {
            return Err(MetricsError::Empty);
        }
        if let Some(i) = self.steps.iter().position(|s| s.actual.is_none()) {
            return Err(MetricsError::MissingActual(i));
        }
        Ok(self.steps.iter().map(|s| (s.interval(), s.actual.unwrap_or_default())))
    }
}

impl IntervalForecast {
    /// Writes `timestamp,lower,upper,actual`. Missing stamps and actuals are
    /// left empty; numbers use the shortest text that parses back exactly.
    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(sink);
        out.write_record(["timestamp", "lower", "upper", "actual"])?;
        for s in &self.steps {
            out.write_record([
                s.stamp.map_or_else(String::new, |t| t.to_string()),
                s.lower.to_string(),
                s.upper.to_string(),
                s.actual.map_or_else(String::new, |y| y.to_string()),
            ])?;
        }
        out.flush()
    }

    /// Reads what [`IntervalForecast::write_csv`] writes. The `actual` column
    /// is optional; crossed rows are counted and kept as written.
    pub fn read_csv<R: std::io::Read>(source: R) -> Result<Self, SeriesError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let header = reader
            .headers()
            .map_err(|e| SeriesError::MalformedRow {
                line: 1,
                reason: e.to_string(),
            })?
            .clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let need = |name: &str| col(name).ok_or_else(|| SeriesError::MissingColumn(name.to_string()));
        let (lo_col, hi_col) = (need("lower")?, need("upper")?);
        let (stamp_col, actual_col) = (col("timestamp"), col("actual"));

        let mut steps = Vec::new();
        let mut crossings = 0;
        for (row, record) in reader.records().enumerate() {
            let line = row as u64 + 2;
            let record = record.map_err(|e| SeriesError::MalformedRow {
                line,
                reason: e.to_string(),
            })?;
            let text = |c: usize| record.get(c).unwrap_or("");
            let number = |c: usize| -> Result<f64, SeriesError> {
                let v: f64 = text(c).parse().map_err(|_| SeriesError::MalformedRow {
                    line,
                    reason: format!("`{}` is not a number", text(c)),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(SeriesError::NonFiniteValue { line })
                }
            };
            let stamp = match stamp_col.map(text) {
                None | Some("") => None,
                Some(raw) => Some(match raw.parse::<usize>() {
                    Ok(i) => Stamp::Index(i),
                    Err(_) => Stamp::At(parse_timestamp(raw).ok_or_else(|| SeriesError::MalformedRow {
                        line,
                        reason: format!("timestamp `{raw}` is not ISO-8601"),
                    })?),
                }),
            };
            let actual = match actual_col {
                Some(c) if !text(c).is_empty() => Some(number(c)?),
                _ => None,
            };
            let (lower, upper) = (number(lo_col)?, number(hi_col)?);
            crossings += (lower > upper) as usize;
            steps.push(ForecastStep {
                stamp,
                lower,
                upper,
                actual,
            });
        }
        if steps.is_empty() {
            return Err(SeriesError::Empty);
        }
        Ok(Self { steps, crossings })
    }
}

/// Fraction of actuals inside their closed interval.
pub fn picp(forecast: &IntervalForecast) -> Result<f64, MetricsError> {
    let n = forecast.len() as f64;
    let covered = forecast.actuals()?.filter(|(p, y)| p.contains(*y)).count();
    Ok(covered as f64 / n)
}

/// Mean of `upper - lower`.
pub fn mpiw(forecast: &IntervalForecast) -> Result<f64, MetricsError> {
    if forecast.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(forecast.steps.iter().map(|s| s.upper - s.lower).sum::<f64>() / forecast.len() as f64)
}

/// Number of actuals in each of the four tube regions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
    pub m4: usize,
}

impl RegionCounts {
    pub fn total(&self) -> usize {
        self.m1 + self.m2 + self.m3 + self.m4
    }

    pub fn inside(&self) -> usize {
        self.m2 + self.m3
    }

    pub fn record(&mut self, region: Region) {
        match region {
            Region::R1 => self.m1 += 1,
            Region::R2 => self.m2 += 1,
            Region::R3 => self.m3 += 1,
            Region::R4 => self.m4 += 1,
        }
    }
}

pub fn region_counts(forecast: &IntervalForecast, r: f64) -> Result<RegionCounts, MetricsError> {
    let mut counts = RegionCounts::default();
    for (i, (p, y)) in forecast.actuals()?.enumerate() {
        counts.record(classify_region(y, p, r).map_err(|_| MetricsError::NonFinite(i))?);
    }
    Ok(counts)
}

/// Coverage and width of one model on one evaluation segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub picp: f64,
    pub mpiw: f64,
    pub n: usize,
    /// `None` when nothing was covered.
    pub mpiw_over_picp: Option<f64>,
    pub regions: RegionCounts,
    pub crossings: usize,
}

impl EvalSummary {
    /// A summary carrying only externally reported PICP and MPIW.
    pub fn reported(picp: f64, mpiw: f64) -> Self {
        Self {
            picp,
            mpiw,
            n: 0,
            mpiw_over_picp: ratio(mpiw, picp),
            regions: RegionCounts::default(),
            crossings: 0,
        }
    }

    pub fn meets(&self, target: f64) -> bool {
        self.picp >= target
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

fn ratio(mpiw: f64, picp: f64) -> Option<f64> {
    (picp > 0.0).then(|| mpiw / picp)
}

/// PICP, MPIW and region counts in one pass.
pub fn evaluate(forecast: &IntervalForecast, r: f64) -> Result<EvalSummary, MetricsError> {
    let regions = region_counts(forecast, r)?;
    let picp = regions.inside() as f64 / regions.total() as f64;
    let mpiw = mpiw(forecast)?;
    Ok(EvalSummary {
        picp,
        mpiw,
        n: forecast.len(),
        mpiw_over_picp: ratio(mpiw, picp),
        regions,
        crossings: forecast.crossings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    ABetter,
    BBetter,
    Tie,
}

/// If both meet `target` the narrower wins; if neither does, the PICP closer
/// to `target` wins; otherwise the one that meets it wins.
pub fn compare_models(a: &EvalSummary, b: &EvalSummary, target: f64) -> Comparison {
    match order(a, b, target) {
        Ordering::Less => Comparison::ABetter,
        Ordering::Greater => Comparison::BBetter,
        Ordering::Equal => Comparison::Tie,
    }
}

/// `Less` means `a` ranks ahead of `b`.
fn order(a: &EvalSummary, b: &EvalSummary, target: f64) -> Ordering {
    match (a.meets(target), b.meets(target)) {
        (true, true) => a.mpiw.total_cmp(&b.mpiw),
        (false, false) => (a.picp - target).abs().total_cmp(&(b.picp - target).abs()),
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub name: String,
    pub summary: EvalSummary,
}

/// Sorts entries best-first under [`compare_models`]; ties keep input order.
pub fn rank_models(entries: &[(String, EvalSummary)], target: f64) -> Result<Vec<RankedEntry>, MetricsError> {
    if entries.len() < 2 {
        return Err(MetricsError::TooFewEntries);
    }
    let mut sorted: Vec<&(String, EvalSummary)> = entries.iter().collect();
    sorted.sort_by(|a, b| order(&a.1, &b.1, target));
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, (name, summary))| RankedEntry {
            rank: i + 1,
            name: name.clone(),
            summary: *summary,
        })
        .collect())
}

/// `(baseline - tube) * 100 / baseline`; negative when the tube is wider.
pub fn pct_improvement(baseline_mpiw: f64, tube_mpiw: f64) -> Result<f64, MetricsError> {
    if !(baseline_mpiw > 0.0) {
        return Err(MetricsError::NonPositiveBaseline(baseline_mpiw));
    }
    Ok((baseline_mpiw - tube_mpiw) * 100.0 / baseline_mpiw)
}

fn fmt_ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |r| format!("{r:.2}"))
}

/// Ranking as an aligned plain-text table.
pub fn ranking_table(ranked: &[RankedEntry]) -> String {
    let name_w = ranked.iter().map(|e| e.name.len()).max().unwrap_or(0).max("Model".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4}  {:<name_w$}  {:>8}  {:>10}  {:>10}",
        "Rank", "Model", "PICP", "MPIW", "MPIW/PICP"
    );
    for e in ranked {
        let _ = writeln!(
            out,
            "{:>4}  {:<name_w$}  {:>8.4}  {:>10.4}  {:>10}",
            e.rank,
            e.name,
            e.summary.picp,
            e.summary.mpiw,
            fmt_ratio(e.summary.mpiw_over_picp)
        );
    }
    out
}

/// Ranking as comma-separated rows with a header.
pub fn ranking_csv(ranked: &[RankedEntry]) -> String {
    let mut out = String::from("rank,model,picp,mpiw,mpiw_over_picp\n");
    for e in ranked {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.rank,
            e.name,
            e.summary.picp,
            e.summary.mpiw,
            e.summary.mpiw_over_picp.map_or_else(String::new, |r| r.to_string())
        );
    }
    out
}

/// One row of the improvement table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub method: String,
    pub average_mpiw: f64,
    /// `None` for the tube baseline row itself.
    pub improvement_pct: Option<f64>,
}

/// Average MPIW per method and the tube's percentage improvement over each.
///
/// `method_mpiws` maps method name to the MPIWs of its rows (e.g. one per
/// architecture); `tube_method` names the reference method.
pub fn improvement_table(
    method_mpiws: &[(String, Vec<f64>)],
    tube_method: &str,
) -> Result<Vec<ImprovementRow>, MetricsError> {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let tube = method_mpiws
        .iter()
        .find(|(m, v)| m == tube_method && !v.is_empty())
        .map(|(_, v)| mean(v))
        .ok_or(MetricsError::Empty)?;
    method_mpiws
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(m, v)| {
            let avg = mean(v);
            let improvement_pct = if m == tube_method {
                None
            } else {
                Some(pct_improvement(avg, tube)?)
            };
            Ok(ImprovementRow {
                method: m.clone(),
                average_mpiw: avg,
                improvement_pct,
            })
        })
        .collect()
}

pub fn improvement_text(rows: &[ImprovementRow]) -> String {
    let name_w = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max("Method".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<name_w$}  {:>12}  {:>16}", "Method", "Average MPIW", "% of Improvement");
    for r in rows {
        let pct = r
            .improvement_pct
            .map_or_else(|| "Baseline".to_string(), |p| format!("{p:.2}%"));
        let _ = writeln!(out, "{:<name_w$}  {:>12.4}  {:>16}", r.method, r.average_mpiw, pct);
    }
    out
}
