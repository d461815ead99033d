//! Fairness dynamics across training checkpoints.
//!
//! The crate turns WinoBias-style coreference samples into seeded
//! gender-prediction prompt suites, ingests next-token probability records
//! produced by an external model runner, and computes per-group metrics over
//! checkpoints:
//!
//! - Average Rank of the answer token in the full vocabulary,
//! - Jensen-Shannon divergence by parts against the one-hot answer,
//! - plain and stereotype accuracy as all-or-nothing baselines,
//! - Mann-Whitney U significance between groups,
//! - fairness gap and early-stopping recommendations against an external
//!   performance series.
//!
//! [`synth`] produces synthetic trajectories so the whole pipeline can be
//! exercised without a language model.

pub mod dynamics;
pub mod metrics;
pub mod options;
pub mod prompts;
pub mod records;
pub mod report;
pub mod stats;
pub mod synth;
pub mod table;

mod numeric;

pub use dynamics::{MetricSeries, SeriesPoint, StoppingReport};
pub use metrics::{GroupMetric, JsdParts, MetricError};
pub use options::{AnswerOption, Gender, GroupKey, SeedKey, Split};
pub use prompts::{PromptInstance, PromptSuite, PromptTemplate, WinoBiasSample};
pub use records::{Dataset, Diagnostic, EnrichedRecord, OptionDistribution, ProbRecord};
pub use stats::{MwuMode, MwuResult, SampleSet};
pub use synth::TrajectorySpec;
pub use table::MetricRow;
