//! Metric tables from joined records, and the checkpoint report built from a
//! metric table: fairness-gap series, stopping recommendation, changepoint
//! scan, significance summary and plot-series rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{self, ChangepointScan, DynamicsError, GapMode, MetricSeries, SeriesPoint, StoppingReport};
use crate::metrics::{GroupMetric, MetricError};
use crate::options::{AnswerOption, GroupKey, SeedKey, Split};
use crate::records::EnrichedRecord;
use crate::stats::{SignificanceOutcome, SignificancePoint};
use crate::table::{sort_rows, MetricRow};

pub const MWU_P: &str = "mwu_p";
pub const MWU_U: &str = "mwu_u";
pub const MWU_UNTESTABLE: &str = "mwu_untestable";

// ---------------------------------------------------------------------------
// Records → metric table
// ---------------------------------------------------------------------------

/// Which JSD quantities the metric table carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JsdpMode {
    /// The three parts only.
    #[default]
    Parts,
    /// The parts plus their sum.
    Sum,
}

impl std::str::FromStr for JsdpMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parts" => Ok(Self::Parts),
            "sum" => Ok(Self::Sum),
            other => Err(format!("unknown jsdp mode '{other}' (parts, sum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{model_id} step {step} seed {seed} {group}: {source}")]
pub struct TableBuildError {
    pub model_id: String,
    pub step: u64,
    pub seed: u32,
    pub group: GroupKey,
    pub source: MetricError,
}

fn group_metrics(mode: JsdpMode) -> Vec<GroupMetric> {
    let mut out = vec![GroupMetric::AverageRank, GroupMetric::Accuracy];
    out.extend(AnswerOption::ALL.map(GroupMetric::JsdPart));
    if mode == JsdpMode::Sum {
        out.push(GroupMetric::JsdSum);
    }
    out
}

/// One row per (model, checkpoint, seed, group, metric). Groups are the three
/// answer groups and the two stereotype splits; empty groups are skipped.
/// Stereotype accuracy is reported under `split=pro`.
pub fn compute_metric_table(records: &[EnrichedRecord], mode: JsdpMode) -> Result<Vec<MetricRow>, TableBuildError> {
    let mut cells: BTreeMap<(&str, u64, u32), Vec<&EnrichedRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((&r.record.model_id, r.record.checkpoint_step, r.record.seed)).or_default().push(r);
    }
    let metrics = group_metrics(mode);
    let mut rows = Vec::new();
    for ((model_id, step, seed), members) in cells {
        for group in GroupKey::ANSWER_GROUPS.into_iter().chain(GroupKey::SPLIT_GROUPS) {
            let in_group: Vec<&EnrichedRecord> = members.iter().copied().filter(|r| r.in_group(group)).collect();
            if in_group.is_empty() {
                continue;
            }
            let mut push = |metric: GroupMetric| -> Result<(), TableBuildError> {
                let value = metric.evaluate(&in_group).map_err(|source| TableBuildError {
                    model_id: model_id.to_string(),
                    step,
                    seed,
                    group,
                    source,
                })?;
                rows.push(MetricRow {
                    model_id: model_id.to_string(),
                    checkpoint_step: step,
                    seed: SeedKey::Seed(seed),
                    group: group.to_string(),
                    metric: metric.name(),
                    value,
                });
                Ok(())
            };
            for &m in &metrics {
                push(m)?;
            }
            if group == GroupKey::Split(Split::Pro) {
                push(GroupMetric::StereotypeAccuracy)?;
            }
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}

/// Table rows for a significance series: `mwu_u` and `mwu_p` per tested
/// checkpoint, `mwu_untestable = 1` otherwise. Seed is `pooled`; the group
/// column names the comparison as `A vs B`.
pub fn significance_rows(points: &[SignificancePoint], model_id: &str, comparison: &str) -> Vec<MetricRow> {
    let row = |step: u64, metric: &str, value: f64| MetricRow {
        model_id: model_id.to_string(),
        checkpoint_step: step,
        seed: SeedKey::Pooled,
        group: comparison.to_string(),
        metric: metric.to_string(),
        value,
    };
    let mut rows = Vec::new();
    for p in points {
        match &p.outcome {
            SignificanceOutcome::Tested { result, .. } => {
                rows.push(row(p.checkpoint_step, MWU_U, result.u));
                rows.push(row(p.checkpoint_step, MWU_P, result.p_two_sided));
            }
            SignificanceOutcome::Untestable { .. } => rows.push(row(p.checkpoint_step, MWU_UNTESTABLE, 1.0)),
        }
    }
    sort_rows(&mut rows);
    rows
}

// ---------------------------------------------------------------------------
// Metric table → report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("metric table has no per-seed rows")]
    NoModel,
    #[error("metric table holds several models ({}); choose one", .0.join(", "))]
    AmbiguousModel(Vec<String>),
    #[error("model '{0}' not in the metric table")]
    UnknownModel(String),
    #[error("no {metric} rows for {group}; {hint}")]
    MissingGapRows { metric: String, group: String, hint: &'static str },
    #[error("step {0}: no seed has both gap groups")]
    GapUnpaired(u64),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone)]
pub struct ReportConfig {
    pub model_id: Option<String>,
    pub gap_mode: GapMode,
    /// Significance level applied to `mwu_p` rows.
    pub alpha: f64,
    pub budget: f64,
    pub window: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { model_id: None, gap_mode: GapMode::default(), alpha: crate::stats::DEFAULT_ALPHA, budget: 0.0, window: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StoppingSection {
    Recommended(StoppingReport),
    /// The performance series was not supplied.
    Omitted,
    NotAvailable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChangepointSection {
    Scanned(ChangepointScan),
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceStep {
    pub checkpoint_step: u64,
    /// `None` when the checkpoint was untestable.
    pub p_value: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub comparison: String,
    pub steps: Vec<SignificanceStep>,
    /// Earliest checkpoint from which every later checkpoint is significant.
    pub significant_from: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub model_id: String,
    pub gap_mode: GapMode,
    pub alpha: f64,
    pub gap: MetricSeries,
    pub stopping: StoppingSection,
    pub changepoints: ChangepointSection,
    pub significance: Vec<Comparison>,
    #[serde(skip)]
    pub series: Vec<MetricSeries>,
    #[serde(skip)]
    pub performance: Option<MetricSeries>,
}

fn select_model(rows: &[MetricRow], wanted: Option<&str>) -> Result<String, ReportError> {
    let models: BTreeSet<&str> =
        rows.iter().filter(|r| matches!(r.seed, SeedKey::Seed(_))).map(|r| r.model_id.as_str()).collect();
    match wanted {
        Some(m) if models.contains(m) => Ok(m.to_string()),
        Some(m) => Err(ReportError::UnknownModel(m.to_string())),
        None => match models.len() {
            0 => Err(ReportError::NoModel),
            1 => Ok(models.first().expect("one").to_string()),
            _ => Err(ReportError::AmbiguousModel(models.into_iter().map(String::from).collect())),
        },
    }
}

type Cell = BTreeMap<u64, BTreeMap<u32, f64>>;

/// Per-seed rows of one model, keyed by (metric, group) then step then seed.
fn per_seed_cells<'a>(rows: &'a [MetricRow], model_id: &str) -> BTreeMap<(&'a str, &'a str), Cell> {
    let mut out: BTreeMap<(&str, &str), Cell> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.model_id == model_id) {
        if let SeedKey::Seed(seed) = r.seed {
            out.entry((&r.metric, &r.group)).or_default().entry(r.checkpoint_step).or_default().insert(seed, r.value);
        }
    }
    out
}

/// Mean ± seed standard deviation for every (metric, group) of one model.
pub fn series_from_table(rows: &[MetricRow], model_id: &str) -> Result<Vec<MetricSeries>, ReportError> {
    let mut out = Vec::new();
    for ((metric, group), steps) in per_seed_cells(rows, model_id) {
        let points = steps
            .iter()
            .map(|(&step, seeds)| dynamics::replicate_point(step, &seeds.values().copied().collect::<Vec<_>>()))
            .collect();
        out.push(MetricSeries::new(model_id, metric, group, points)?);
    }
    Ok(out)
}

/// Fairness gap per checkpoint from the male-answer and female-answer rows,
/// pairing values seed by seed.
pub fn gap_from_table(rows: &[MetricRow], model_id: &str, mode: GapMode) -> Result<MetricSeries, ReportError> {
    let cells = per_seed_cells(rows, model_id);
    let lookup = |answer: AnswerOption| -> Result<&Cell, ReportError> {
        let metric = mode.metric_for(answer).name();
        let group = GroupKey::Answer(answer).to_string();
        let found = cells.iter().find(|((m, g), _)| *m == metric && *g == group).map(|(_, c)| c);
        found.ok_or(ReportError::MissingGapRows {
            metric,
            group,
            hint: match mode {
                GapMode::CorrectPart => "the table needs the per-part JSD rows",
                GapMode::PartSum => "build the table with the part-sum JSD mode",
            },
        })
    };
    let (male, female) = (lookup(AnswerOption::Male)?, lookup(AnswerOption::Female)?);
    let steps: BTreeSet<u64> = male.keys().chain(female.keys()).copied().collect();
    let mut points = Vec::with_capacity(steps.len());
    for step in steps {
        let (m, f) = (male.get(&step), female.get(&step));
        let pairs: Vec<(f64, f64)> = match (m, f) {
            (Some(m), Some(f)) => m.iter().filter_map(|(s, &mv)| f.get(s).map(|&fv| (mv, fv))).collect(),
            _ => Vec::new(),
        };
        if pairs.is_empty() {
            return Err(ReportError::GapUnpaired(step));
        }
        points.push(dynamics::gap_point(step, &pairs));
    }
    Ok(MetricSeries::new(model_id, mode.series_name(), "answer=male|answer=female", points)?)
}

/// Significance comparisons recorded in the table for `model_id`.
pub fn comparisons_from_table(rows: &[MetricRow], model_id: &str, alpha: f64) -> Vec<Comparison> {
    let mut by_cmp: BTreeMap<&str, BTreeMap<u64, Option<f64>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.seed == SeedKey::Pooled && r.model_id == model_id) {
        let steps = by_cmp.entry(&r.group).or_default();
        match r.metric.as_str() {
            MWU_P => {
                steps.insert(r.checkpoint_step, Some(r.value));
            }
            MWU_UNTESTABLE => {
                steps.entry(r.checkpoint_step).or_insert(None);
            }
            _ => {}
        }
    }
    by_cmp
        .into_iter()
        .filter(|(_, steps)| !steps.is_empty())
        .map(|(name, steps)| {
            let steps: Vec<SignificanceStep> = steps
                .into_iter()
                .map(|(checkpoint_step, p_value)| SignificanceStep {
                    checkpoint_step,
                    p_value,
                    significant: p_value.is_some_and(|p| p < alpha),
                })
                .collect();
            let tail = steps.iter().rev().take_while(|s| s.significant).count();
            let significant_from = (tail > 0).then(|| steps[steps.len() - tail].checkpoint_step);
            Comparison { comparison: name.to_string(), steps, significant_from }
        })
        .collect()
}

pub fn build_report(
    rows: &[MetricRow],
    perf: Option<MetricSeries>,
    config: &ReportConfig,
) -> Result<Report, ReportError> {
    let model_id = select_model(rows, config.model_id.as_deref())?;
    let gap = gap_from_table(rows, &model_id, config.gap_mode)?;
    let stopping = match &perf {
        None => StoppingSection::Omitted,
        Some(p) => match dynamics::recommend_stop(&gap, p, config.budget) {
            Ok(r) => StoppingSection::Recommended(r),
            Err(e @ DynamicsError::NegativeBudget(_)) => return Err(e.into()),
            Err(e) => StoppingSection::NotAvailable { reason: e.to_string() },
        },
    };
    let changepoints = match dynamics::changepoint_scan(&gap, config.window) {
        Ok(scan) => ChangepointSection::Scanned(scan),
        Err(e @ DynamicsError::WindowTooSmall(_)) => return Err(e.into()),
        Err(e) => ChangepointSection::Skipped { reason: e.to_string() },
    };
    Ok(Report {
        significance: comparisons_from_table(rows, &model_id, config.alpha),
        series: series_from_table(rows, &model_id)?,
        model_id,
        gap_mode: config.gap_mode,
        alpha: config.alpha,
        gap,
        stopping,
        changepoints,
        performance: perf,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl Report {
    /// Human-readable summary block.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.model_id);
        let first = self.gap.points().first();
        let last = self.gap.points().last();
        let _ = writeln!(
            s,
            "{} over {} checkpoints: {} at step {} -> {} at step {}",
            self.gap.metric,
            self.gap.len(),
            fmt_opt(first.map(|p| p.mean)),
            first.map_or(0, |p| p.step),
            fmt_opt(last.map(|p| p.mean)),
            last.map_or(0, |p| p.step),
        );
        match &self.stopping {
            StoppingSection::Recommended(r) => {
                let _ = writeln!(s, "recommended stop: step {} (final step {})", r.recommended_step, r.final_step);
                let _ = writeln!(s, "  gap {:.4} vs {:.4} at end", r.gap_at_step, r.gap_at_end);
                let gain = r.fairness_gain_vs_end.map_or_else(|| "n/a".into(), |g| format!("{:.2}%", 100.0 * g));
                let _ = writeln!(s, "  fairness gain vs end: {gain}");
                let _ = writeln!(
                    s,
                    "  performance {:.4} vs {:.4} at end (cost {:.4}, budget {})",
                    r.performance_at_step, r.performance_at_end, r.performance_cost, r.budget
                );
            }
            StoppingSection::Omitted => {
                let _ = writeln!(s, "stopping: omitted (no performance series)");
            }
            StoppingSection::NotAvailable { reason } => {
                let _ = writeln!(s, "stopping: not available ({reason})");
            }
        }
        match &self.changepoints {
            ChangepointSection::Scanned(scan) => match (scan.dominant, scan.ranked.first()) {
                (Some(step), Some(top)) => {
                    let _ = writeln!(s, "largest gap shift: step {step} (score {:.4})", top.score);
                }
                _ => {
                    let _ = writeln!(s, "largest gap shift: no dominant changepoint");
                }
            },
            ChangepointSection::Skipped { reason } => {
                let _ = writeln!(s, "changepoints: skipped ({reason})");
            }
        }
        for c in &self.significance {
            let n_sig = c.steps.iter().filter(|x| x.significant).count();
            let from = c.significant_from.map_or_else(|| "never".into(), |x| format!("step {x}"));
            let _ = writeln!(
                s,
                "{}: significant (p < {}) at {n_sig}/{} checkpoints; from {from} onward",
                c.comparison,
                self.alpha,
                c.steps.len()
            );
        }
        s
    }

    /// Plot-series rows `series, x, y, y_std`, tab-separated with a header.
    /// `y_std` is empty when there is a single replicate.
    pub fn write_plot_series<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "series\tx\ty\ty_std")?;
        let mut emit = |label: &str, points: &[SeriesPoint]| -> std::io::Result<()> {
            for p in points {
                let std = p.std.map_or_else(String::new, |v| v.to_string());
                writeln!(w, "{label}\t{}\t{}\t{std}", p.step, p.mean)?;
            }
            Ok(())
        };
        emit(&self.gap.metric, self.gap.points())?;
        if let Some(perf) = &self.performance {
            emit("performance", perf.points())?;
        }
        for c in &self.significance {
            let pts: Vec<SeriesPoint> = c
                .steps
                .iter()
                .filter_map(|s| s.p_value.map(|p| SeriesPoint { step: s.checkpoint_step, mean: p, std: None }))
                .collect();
            emit(&format!("{MWU_P}[{}]", c.comparison), &pts)?;
        }
        for s in &self.series {
            emit(&format!("{}[{}]", s.metric, s.group), s.points())?;
        }
        w.flush()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serializable");
        s.push('\n');
        s
    }
}
