//! Checkpoint series, fairness-aware early stopping and a simple
//! sudden-change diagnostic.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::Serialize;
use thiserror::Error;

use crate::metrics::{self, GroupMetric, MetricError};
use crate::numeric;
use crate::options::{AnswerOption, GroupKey};
use crate::records::{Diagnostic, EnrichedRecord};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("series needs at least 2 checkpoints, found {0}")]
    TooFewCheckpoints(usize),
    #[error("checkpoint steps must be strictly increasing (step {0} follows {1})")]
    NotIncreasing(u64, u64),
    #[error("invalid series value at step {0}")]
    InvalidPoint(u64),
    #[error("step {step}: {source}")]
    Metric { step: u64, source: MetricError },
    #[error("performance series does not cover step {0}")]
    PerfOutOfRange(u64),
    #[error("no checkpoint loses at most {budget} performance against the final checkpoint")]
    NoFeasibleStop { budget: f64 },
    #[error("budget must be ≥ 0, got {0}")]
    NegativeBudget(f64),
    #[error("window must be ≥ 2, got {0}")]
    WindowTooSmall(usize),
    #[error("series of {len} points is too short for window {window} (need ≥ {})", 2 * window)]
    SeriesTooShort { len: usize, window: usize },
    #[error("empty window {from}..={to}")]
    EmptyWindow { from: u64, to: u64 },
    #[error("performance series {0}")]
    PerfParse(Diagnostic),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub step: u64,
    pub mean: f64,
    /// Across seeds; `None` when only one replicate exists.
    pub std: Option<f64>,
}

/// Metric values over training checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSeries {
    pub model_id: String,
    pub metric: String,
    pub group: String,
    points: Vec<SeriesPoint>,
}

impl MetricSeries {
    pub fn new(
        model_id: impl Into<String>,
        metric: impl Into<String>,
        group: impl Into<String>,
        points: Vec<SeriesPoint>,
    ) -> Result<Self, DynamicsError> {
        for w in points.windows(2) {
            if w[1].step <= w[0].step {
                return Err(DynamicsError::NotIncreasing(w[1].step, w[0].step));
            }
        }
        for p in &points {
            let std_ok = p.std.is_none_or(|s| s >= 0.0 && s.is_finite());
            if !p.mean.is_finite() || !std_ok {
                return Err(DynamicsError::InvalidPoint(p.step));
            }
        }
        Ok(Self { model_id: model_id.into(), metric: metric.into(), group: group.into(), points })
    }

    pub fn points(&self) -> &[SeriesPoint] {
        &self.points
    }

    pub fn steps(&self) -> impl Iterator<Item = u64> + '_ {
        self.points.iter().map(|p| p.step)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Linear interpolation; `None` outside the covered range.
    pub fn value_at(&self, step: u64) -> Option<f64> {
        let idx = self.points.partition_point(|p| p.step < step);
        let hi = self.points.get(idx)?;
        if hi.step == step {
            return Some(hi.mean);
        }
        let lo = self.points.get(idx.checked_sub(1)?)?;
        let t = (step - lo.step) as f64 / (hi.step - lo.step) as f64;
        Some(lo.mean + t * (hi.mean - lo.mean))
    }

    /// Mean of the point means with `from ≤ step ≤ to`.
    pub fn windowed_mean(&self, from: u64, to: u64) -> Result<f64, DynamicsError> {
        numeric::mean(self.points.iter().filter(|p| (from..=to).contains(&p.step)).map(|p| p.mean))
            .ok_or(DynamicsError::EmptyWindow { from, to })
    }
}

/// Summarizes per-seed replicate values into one point.
pub fn replicate_point(step: u64, replicates: &[f64]) -> SeriesPoint {
    match stats::seed_stats(replicates) {
        Ok(s) => SeriesPoint { step, mean: s.mean, std: Some(s.std) },
        Err(_) => SeriesPoint { step, mean: replicates[0], std: None },
    }
}

/// Records grouped by checkpoint then seed, for one model.
fn by_step_and_seed<'a>(
    records: &'a [EnrichedRecord],
    model_id: &str,
) -> BTreeMap<u64, BTreeMap<u32, Vec<&'a EnrichedRecord>>> {
    let mut out: BTreeMap<u64, BTreeMap<u32, Vec<&EnrichedRecord>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.record.model_id == model_id) {
        out.entry(r.record.checkpoint_step).or_default().entry(r.record.seed).or_default().push(r);
    }
    out
}

/// One point per checkpoint: the metric per seed, then mean and standard
/// deviation across seeds.
pub fn build_series(
    records: &[EnrichedRecord],
    model_id: &str,
    metric: GroupMetric,
    group: GroupKey,
) -> Result<MetricSeries, DynamicsError> {
    let grid = by_step_and_seed(records, model_id);
    if grid.len() < 2 {
        return Err(DynamicsError::TooFewCheckpoints(grid.len()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for (step, seeds) in grid {
        let mut replicates = Vec::with_capacity(seeds.len());
        for members in seeds.values() {
            let in_group: Vec<&EnrichedRecord> = members.iter().copied().filter(|r| r.in_group(group)).collect();
            if in_group.is_empty() {
                continue;
            }
            replicates.push(metric.evaluate(&in_group).map_err(|source| DynamicsError::Metric { step, source })?);
        }
        if replicates.is_empty() {
            return Err(DynamicsError::Metric { step, source: MetricError::EmptyGroup });
        }
        points.push(replicate_point(step, &replicates));
    }
    MetricSeries::new(model_id, metric.name(), group.to_string(), points)
}

/// Which JSD quantity feeds the fairness gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// The part of the correct option, averaged over the group.
    #[default]
    CorrectPart,
    /// All three parts summed, i.e. the full JSD.
    PartSum,
}

impl GapMode {
    /// Metric feeding the gap for prompts whose answer is `answer`.
    pub fn metric_for(self, answer: AnswerOption) -> GroupMetric {
        match self {
            Self::CorrectPart => GroupMetric::JsdPart(answer),
            Self::PartSum => GroupMetric::JsdSum,
        }
    }

    pub fn series_name(self) -> &'static str {
        match self {
            Self::CorrectPart => "fairness_gap",
            Self::PartSum => "fairness_gap_sum",
        }
    }
}

impl std::str::FromStr for GapMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "correct" | "parts" | "correct-part" => Ok(Self::CorrectPart),
            "sum" | "part-sum" => Ok(Self::PartSum),
            other => Err(format!("unknown gap mode '{other}' (correct, sum)")),
        }
    }
}

/// Gap point from per-seed `(male, female)` group values: the mean is the
/// gap between the seed-averaged group values, the spread is the standard
/// deviation of the per-seed gaps.
pub fn gap_point(step: u64, per_seed: &[(f64, f64)]) -> SeriesPoint {
    let male = numeric::mean(per_seed.iter().map(|p| p.0)).expect("non-empty");
    let female = numeric::mean(per_seed.iter().map(|p| p.1)).expect("non-empty");
    let gaps: Vec<f64> = per_seed.iter().map(|&(m, f)| metrics::fairness_gap(m, f)).collect();
    SeriesPoint {
        step,
        mean: metrics::fairness_gap(male, female),
        std: stats::seed_stats(&gaps).ok().map(|s| s.std),
    }
}

/// Fairness gap between the male-answer and female-answer groups at every
/// checkpoint.
pub fn gap_series(records: &[EnrichedRecord], model_id: &str, mode: GapMode) -> Result<MetricSeries, DynamicsError> {
    let grid = by_step_and_seed(records, model_id);
    if grid.len() < 2 {
        return Err(DynamicsError::TooFewCheckpoints(grid.len()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for (step, seeds) in grid {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for members in seeds.values() {
            let value = |answer: AnswerOption| {
                let group: Vec<&EnrichedRecord> =
                    members.iter().copied().filter(|r| r.record.answer == answer).collect();
                mode.metric_for(answer).evaluate(&group)
            };
            match (value(AnswerOption::Male), value(AnswerOption::Female)) {
                (Ok(m), Ok(f)) => per_seed.push((m, f)),
                (Err(MetricError::EmptyGroup), _) | (_, Err(MetricError::EmptyGroup)) => continue,
                (Err(source), _) | (_, Err(source)) => return Err(DynamicsError::Metric { step, source }),
            }
        }
        if per_seed.is_empty() {
            return Err(DynamicsError::Metric { step, source: MetricError::EmptyGroup });
        }
        points.push(gap_point(step, &per_seed));
    }
    MetricSeries::new(model_id, mode.series_name(), "answer=male|answer=female", points)
}

/// Reads `(checkpoint_step, value)` rows separated by comma, tab or spaces.
/// A first line that does not parse as numbers is taken as a header.
pub fn read_perf_series<R: BufRead>(reader: R, label: &str) -> Result<MetricSeries, DynamicsError> {
    let mut rows: Vec<(u64, f64, usize)> = Vec::new();
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DynamicsError::PerfParse(Diagnostic::new(line_no, e.to_string())))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c == ',' || c == '\t' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let parsed = match fields.as_slice() {
            [s, v] => s.parse::<u64>().ok().zip(v.parse::<f64>().ok().filter(|v| v.is_finite())),
            _ => None,
        };
        match parsed {
            Some((s, v)) => rows.push((s, v, line_no)),
            None if first => {}
            None => {
                return Err(DynamicsError::PerfParse(Diagnostic::new(
                    line_no,
                    "expected 'checkpoint_step,value'",
                )))
            }
        }
        first = false;
    }
    for w in rows.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(DynamicsError::PerfParse(Diagnostic::new(
                w[1].2,
                format!("checkpoint_step {} does not increase", w[1].0),
            )));
        }
    }
    let points = rows.into_iter().map(|(step, mean, _)| SeriesPoint { step, mean, std: None }).collect();
    MetricSeries::new(label, "performance", "all", points)
}

/// Early-stopping recommendation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingReport {
    pub recommended_step: u64,
    pub final_step: u64,
    pub gap_at_step: f64,
    pub gap_at_end: f64,
    /// Relative gap reduction against the final checkpoint; `None` when the
    /// final gap is zero.
    pub fairness_gain_vs_end: Option<f64>,
    pub performance_at_step: f64,
    pub performance_at_end: f64,
    /// `performance_at_end − performance_at_step`.
    pub performance_cost: f64,
    pub budget: f64,
}

fn within_budget(cost: f64, budget: f64, scale: f64) -> bool {
    // Slack for representation error in decimal inputs (61.7 − 60.0 > 1.7).
    cost <= budget + 1e-9 * scale.max(1.0)
}

/// Picks the checkpoint with the smallest gap among those losing at most
/// `budget` performance against the final checkpoint. Ties go to the later
/// checkpoint. The performance series is interpolated onto the gap grid.
pub fn recommend_stop(
    gap: &MetricSeries,
    perf: &MetricSeries,
    budget: f64,
) -> Result<StoppingReport, DynamicsError> {
    if budget.is_nan() || budget < 0.0 {
        return Err(DynamicsError::NegativeBudget(budget));
    }
    let last = gap.points().last().ok_or(DynamicsError::TooFewCheckpoints(0))?;
    let perf_on_grid: Vec<f64> = gap
        .steps()
        .map(|s| perf.value_at(s).ok_or(DynamicsError::PerfOutOfRange(s)))
        .collect::<Result<_, _>>()?;
    let perf_end = *perf_on_grid.last().expect("non-empty");
    let scale = perf_end.abs().max(if budget.is_finite() { budget.abs() } else { 0.0 });

    let mut best: Option<(usize, f64)> = None;
    for (i, (p, perf_i)) in gap.points().iter().zip(&perf_on_grid).enumerate() {
        if !within_budget(perf_end - perf_i, budget, scale) {
            continue;
        }
        match best {
            Some((_, g)) if p.mean > g => {}
            _ => best = Some((i, p.mean)),
        }
    }
    let (idx, gap_at_step) = best.ok_or(DynamicsError::NoFeasibleStop { budget })?;
    let performance_at_step = perf_on_grid[idx];
    Ok(StoppingReport {
        recommended_step: gap.points()[idx].step,
        final_step: last.step,
        gap_at_step,
        gap_at_end: last.mean,
        fairness_gain_vs_end: metrics::fairness_gain(last.mean, gap_at_step).ok(),
        performance_at_step,
        performance_at_end: perf_end,
        performance_cost: perf_end - performance_at_step,
        budget,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Changepoint {
    pub step: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangepointScan {
    /// Candidates by descending score, ties by ascending step.
    pub ranked: Vec<Changepoint>,
    /// Top step when it scores strictly above the runner-up.
    pub dominant: Option<u64>,
}

/// Scores each interior step by the jump between the means of the `window`
/// points before it and the `window` points starting at it. A diagnostic,
/// not a test.
pub fn changepoint_scan(series: &MetricSeries, window: usize) -> Result<ChangepointScan, DynamicsError> {
    if window < 2 {
        return Err(DynamicsError::WindowTooSmall(window));
    }
    let pts = series.points();
    if pts.len() < 2 * window {
        return Err(DynamicsError::SeriesTooShort { len: pts.len(), window });
    }
    let window_mean = |slice: &[SeriesPoint]| numeric::mean(slice.iter().map(|p| p.mean)).expect("non-empty");
    let mut ranked: Vec<Changepoint> = (window..=pts.len() - window)
        .map(|i| Changepoint {
            step: pts[i].step,
            score: (window_mean(&pts[i..i + window]) - window_mean(&pts[i - window..i])).abs(),
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.step.cmp(&b.step)));

    let tol = 1e-12 * ranked[0].score.max(1.0);
    let dominant = match ranked.as_slice() {
        [top] if top.score > tol => Some(top.step),
        [top, next, ..] if top.score > tol && top.score - next.score > tol => Some(top.step),
        _ => None,
    };
    Ok(ChangepointScan { ranked, dominant })
}
