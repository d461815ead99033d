//! Seed-replicate summaries and the Mann-Whitney U test.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::metrics::RecordMetric;
use crate::numeric;
use crate::options::GroupKey;
use crate::records::EnrichedRecord;

/// Largest combined sample size for the exact null distribution; counts
/// stay within `u128` up to C(120, 60).
pub const EXACT_MAX_N: usize = 120;

/// Combined size at or below which `Auto` uses the exact test.
pub const AUTO_EXACT_MAX_N: usize = 20;

pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("sample set '{0}' is empty")]
    EmptySample(String),
    #[error("sample set '{label}' has a non-finite value at index {index}")]
    NonFinite { label: String, index: usize },
    #[error("need at least 2 replicates for a standard deviation, got {0}")]
    TooFewReplicates(usize),
    #[error("exact test requires tie-free samples")]
    ExactWithTies,
    #[error("exact test supports at most {EXACT_MAX_N} observations in total, got {0}")]
    ExactTooLarge(usize),
}

/// Labelled, non-empty, finite observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    label: String,
    values: Vec<f64>,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self, StatsError> {
        let label = label.into();
        if values.is_empty() {
            return Err(StatsError::EmptySample(label));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite { label, index });
        }
        Ok(Self { label, values })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeedStats {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
}

pub fn seed_stats(replicates: &[f64]) -> Result<SeedStats, StatsError> {
    let n = replicates.len();
    if n < 2 {
        return Err(StatsError::TooFewReplicates(n));
    }
    let mean = numeric::mean(replicates.iter().copied()).expect("non-empty");
    let ss = numeric::compensated_sum(replicates.iter().map(|x| (x - mean) * (x - mean)));
    Ok(SeedStats { mean, std: (ss / (n - 1) as f64).sqrt() })
}

// ---------------------------------------------------------------------------
// Mann-Whitney U
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MwuMode {
    Exact,
    Normal,
    #[default]
    Auto,
}

impl std::str::FromStr for MwuMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "normal" | "normal-approx" => Ok(Self::Normal),
            "auto" => Ok(Self::Auto),
            other => Err(format!("unknown test mode '{other}' (exact, normal-approx, auto)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MwuMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MwuResult {
    /// `min(u_a, u_b)`.
    pub u: f64,
    /// Pairs with `a > b`, ties counted ½.
    pub u_a: f64,
    pub u_b: f64,
    pub p_two_sided: f64,
    pub method: MwuMethod,
    /// Every observation in both sets is identical; p is set to 1.
    pub degenerate: bool,
}

struct RankSummary {
    u_a: f64,
    /// Sum of t³ − t over tie groups.
    tie_term: f64,
}

fn rank_summary(a: &[f64], b: &[f64]) -> RankSummary {
    let mut all: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Positions i..j share the average of ranks i+1..=j.
        let avg = (i + 1 + j) as f64 / 2.0;
        let in_a = all[i..j].iter().filter(|x| x.1).count();
        rank_sum_a += avg * in_a as f64;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let n_a = a.len() as f64;
    RankSummary { u_a: rank_sum_a - n_a * (n_a + 1.0) / 2.0, tie_term }
}

/// Number of arrangements of `n_a` + `n_b` distinct values giving each
/// `U_a = 0..=n_a·n_b`.
///
/// Walks the pooled ranks in order, tracking how many of the `a` positions
/// have been placed: the k-th `a` at rank r sits above `r − k` values of `b`.
pub fn exact_u_counts(n_a: usize, n_b: usize) -> Vec<u128> {
    let max_u = n_a * n_b;
    let mut dp = vec![vec![0u128; max_u + 1]; n_a + 1];
    dp[0][0] = 1;
    for r in 1..=(n_a + n_b) {
        for k in (1..=n_a.min(r)).rev() {
            let below = r - k;
            if below > n_b {
                continue;
            }
            let (head, tail) = dp.split_at_mut(k);
            let prev = &head[k - 1];
            let cur = &mut tail[0];
            for u in (0..=max_u - below).rev() {
                if prev[u] != 0 {
                    cur[u + below] += prev[u];
                }
            }
        }
    }
    dp.swap_remove(n_a)
}

fn exact_p(n_a: usize, n_b: usize, u_min: f64) -> f64 {
    let counts = exact_u_counts(n_a, n_b);
    let total: u128 = counts.iter().sum();
    let upto = u_min.floor() as usize;
    let tail: u128 = counts[..=upto.min(counts.len() - 1)].iter().sum();
    ((2 * tail) as f64 / total as f64).min(1.0)
}

fn normal_p(n_a: f64, n_b: f64, u_a: f64, tie_term: f64) -> Option<f64> {
    let n = n_a + n_b;
    let mean = n_a * n_b / 2.0;
    let var = n_a * n_b / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 || !var.is_finite() {
        return None;
    }
    let z = ((u_a - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Some(erfc(z / std::f64::consts::SQRT_2).min(1.0))
}

/// Two-sided Mann-Whitney U test.
///
/// `Auto` uses the exact null distribution when the samples are tie-free and
/// `n_a + n_b ≤ 20`, and the tie-corrected normal approximation with
/// continuity correction otherwise.
pub fn mann_whitney_u(a: &SampleSet, b: &SampleSet, mode: MwuMode) -> Result<MwuResult, StatsError> {
    let (n_a, n_b) = (a.len(), b.len());
    let n = n_a + n_b;
    let ranks = rank_summary(a.values(), b.values());
    let u_a = ranks.u_a;
    let u_b = (n_a * n_b) as f64 - u_a;
    let u = u_a.min(u_b);
    let has_ties = ranks.tie_term > 0.0;

    let method = match mode {
        MwuMode::Exact if has_ties => return Err(StatsError::ExactWithTies),
        MwuMode::Exact if n > EXACT_MAX_N => return Err(StatsError::ExactTooLarge(n)),
        MwuMode::Exact => MwuMethod::Exact,
        MwuMode::Normal => MwuMethod::Normal,
        MwuMode::Auto if !has_ties && n <= AUTO_EXACT_MAX_N => MwuMethod::Exact,
        MwuMode::Auto => MwuMethod::Normal,
    };

    let (p, degenerate) = match method {
        MwuMethod::Exact => (exact_p(n_a, n_b, u), false),
        MwuMethod::Normal => match normal_p(n_a as f64, n_b as f64, u_a, ranks.tie_term) {
            Some(p) => (p, false),
            None => (1.0, true),
        },
    };
    Ok(MwuResult { u, u_a, u_b, p_two_sided: p, method, degenerate })
}

// ---------------------------------------------------------------------------
// Per-checkpoint significance
// ---------------------------------------------------------------------------

/// Records of one group, optionally restricted to one model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selector {
    pub model_id: Option<String>,
    pub group: GroupKey,
}

impl Selector {
    pub fn group(group: GroupKey) -> Self {
        Self { model_id: None, group }
    }

    pub fn matches(&self, r: &EnrichedRecord) -> bool {
        self.model_id.as_deref().is_none_or(|m| m == r.record.model_id) && r.in_group(self.group)
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.model_id {
            Some(m) => write!(f, "{m}:{}", self.group),
            None => write!(f, "{}", self.group),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SignificanceOutcome {
    Tested {
        #[serde(flatten)]
        result: MwuResult,
        significant: bool,
    },
    Untestable {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificancePoint {
    pub checkpoint_step: u64,
    pub n_a: usize,
    pub n_b: usize,
    #[serde(flatten)]
    pub outcome: SignificanceOutcome,
}

impl SignificancePoint {
    pub fn is_significant(&self) -> bool {
        matches!(self.outcome, SignificanceOutcome::Tested { significant: true, .. })
    }

    pub fn p_value(&self) -> Option<f64> {
        match &self.outcome {
            SignificanceOutcome::Tested { result, .. } => Some(result.p_two_sided),
            SignificanceOutcome::Untestable { .. } => None,
        }
    }
}

/// Tests group A against group B at every checkpoint, pooling per-record
/// values across seeds. Checkpoints where either side is empty are marked
/// untestable rather than dropped.
pub fn significance_series(
    records: &[EnrichedRecord],
    metric: RecordMetric,
    group_a: &Selector,
    group_b: &Selector,
    alpha: f64,
    mode: MwuMode,
) -> Result<Vec<SignificancePoint>, StatsError> {
    let in_scope = |r: &EnrichedRecord| {
        [group_a, group_b]
            .iter()
            .any(|s| s.model_id.as_deref().is_none_or(|m| m == r.record.model_id))
    };
    let steps: BTreeSet<u64> = records.iter().filter(|r| in_scope(r)).map(|r| r.record.checkpoint_step).collect();

    let mut out = Vec::with_capacity(steps.len());
    for step in steps {
        let collect = |sel: &Selector| -> Vec<f64> {
            records
                .iter()
                .filter(|r| r.record.checkpoint_step == step && sel.matches(r))
                .map(|r| metric.value(&r.record))
                .collect()
        };
        let (va, vb) = (collect(group_a), collect(group_b));
        let (n_a, n_b) = (va.len(), vb.len());
        let outcome = if va.is_empty() || vb.is_empty() {
            let missing = if va.is_empty() { group_a } else { group_b };
            SignificanceOutcome::Untestable { reason: format!("no records for {missing}") }
        } else {
            let a = SampleSet::new(group_a.to_string(), va)?;
            let b = SampleSet::new(group_b.to_string(), vb)?;
            let result = mann_whitney_u(&a, &b, mode)?;
            SignificanceOutcome::Tested { significant: result.p_two_sided < alpha, result }
        };
        out.push(SignificancePoint { checkpoint_step: step, n_a, n_b, outcome });
    }
    Ok(out)
}
