//! Probability-record format shared with the model runner, and the
//! streaming validator that turns a record file into an immutable dataset.
//!
//! A record holds the raw scores φ(male), φ(female), φ(not) for one prompt at
//! one checkpoint plus the answer token's 1-based competition rank over the
//! full vocabulary: `rank = 1 + #{tokens with strictly greater probability}`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::options::{AnswerOption, GroupKey, Split};
use crate::prompts::PromptSuite;

/// A problem tied to one input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl Diagnostic {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self { line, message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// One evaluation of one prompt at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbRecord {
    pub checkpoint_step: u64,
    pub model_id: String,
    pub seed: u32,
    pub prompt_id: String,
    pub answer: AnswerOption,
    /// Unnormalized scores in the order φ(male), φ(female), φ(not).
    pub option_scores: [f64; 3],
    pub answer_token_rank: u64,
    pub vocab_size: u64,
    /// Fields this version does not know about; kept, never interpreted.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Uniqueness key of a record within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub model_id: String,
    pub checkpoint_step: u64,
    pub seed: u32,
    pub prompt_id: String,
}

impl ProbRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            model_id: self.model_id.clone(),
            checkpoint_step: self.checkpoint_step,
            seed: self.seed,
            prompt_id: self.prompt_id.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if let Some(i) = self.option_scores.iter().position(|s| !s.is_finite()) {
            return Err(RecordError::NonFiniteScore(AnswerOption::ALL[i]));
        }
        if self.answer_token_rank < 1 {
            return Err(RecordError::RankBelowOne);
        }
        if self.answer_token_rank > self.vocab_size {
            return Err(RecordError::RankAboveVocab { rank: self.answer_token_rank, vocab: self.vocab_size });
        }
        Ok(())
    }

    pub fn distribution(&self) -> OptionDistribution {
        OptionDistribution::from_scores(self.option_scores).expect("validated record scores are finite")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("option score for '{0}' is not finite")]
    NonFiniteScore(AnswerOption),
    #[error("rank must be ≥ 1")]
    RankBelowOne,
    #[error("rank {rank} exceeds vocab_size {vocab}")]
    RankAboveVocab { rank: u64, vocab: u64 },
}

/// Normalized probabilities over (male, female, not).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionDistribution {
    probs: [f64; 3],
}

impl OptionDistribution {
    /// Softmax with max subtraction, so large scores cannot overflow.
    pub fn from_scores(scores: [f64; 3]) -> Result<Self, RecordError> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(RecordError::NonFiniteScore(AnswerOption::ALL[i]));
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps = scores.map(|s| (s - max).exp());
        let total: f64 = exps.iter().sum();
        Ok(Self { probs: exps.map(|e| e / total) })
    }

    /// Builds a distribution from probabilities that already sum to one.
    pub fn from_probs(probs: [f64; 3]) -> Option<Self> {
        let ok = probs.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p))
            && (probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
        ok.then_some(Self { probs })
    }

    pub fn prob(&self, option: AnswerOption) -> f64 {
        self.probs[option.index()]
    }

    pub fn probs(&self) -> [f64; 3] {
        self.probs
    }

    /// The option with the strictly greatest probability; `None` on a tie.
    pub fn strict_argmax(&self) -> Option<AnswerOption> {
        let (best, _) = self
            .probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("three entries");
        let top = self.probs[best];
        let tied = self.probs.iter().enumerate().any(|(i, &p)| i != best && p == top);
        (!tied).then(|| AnswerOption::ALL[best])
    }
}

/// `1 + #{j : scores[j] > scores[index]}`. Ties share the better rank.
pub fn competition_rank(scores: &[f64], index: usize) -> u64 {
    let target = scores[index];
    1 + scores.iter().filter(|&&s| s > target).count() as u64
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// Validated, immutable set of records.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    records: Vec<ProbRecord>,
    index: BTreeMap<(u64, u32, AnswerOption), Vec<usize>>,
}

impl Dataset {
    /// Builds a dataset from records that are already known to be valid and
    /// unique. Returns the first invariant violation otherwise.
    pub fn from_records(records: Vec<ProbRecord>) -> Result<Self, IngestError> {
        let mut seen = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.validate().map_err(|e| IngestError::Invalid(Diagnostic::new(i + 1, e.to_string())))?;
            if let Some(first) = seen.insert(r.key(), i + 1) {
                return Err(IngestError::Invalid(duplicate_diagnostic(&r.key(), first, i + 1)));
            }
        }
        Ok(Self::index(records))
    }

    fn index(records: Vec<ProbRecord>) -> Self {
        let mut index: BTreeMap<_, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            index.entry((r.checkpoint_step, r.seed, r.answer)).or_default().push(i);
        }
        Self { records, index }
    }

    pub fn records(&self) -> &[ProbRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records for one (checkpoint, seed, answer group).
    pub fn group(&self, step: u64, seed: u32, answer: AnswerOption) -> impl Iterator<Item = &ProbRecord> {
        self.index
            .get(&(step, seed, answer))
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    pub fn checkpoints(&self) -> Vec<u64> {
        let mut steps: Vec<u64> = self.index.keys().map(|k| k.0).collect();
        steps.dedup();
        steps
    }

    pub fn into_records(self) -> Vec<ProbRecord> {
        self.records
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed reading records: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(Diagnostic),
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub dataset: Dataset,
    pub diagnostics: Vec<Diagnostic>,
}

fn duplicate_diagnostic(key: &RecordKey, first: usize, second: usize) -> Diagnostic {
    Diagnostic::new(
        second,
        format!(
            "duplicate record (model_id={}, checkpoint_step={}, seed={}, prompt_id={}); first seen on line {first}",
            key.model_id, key.checkpoint_step, key.seed, key.prompt_id
        ),
    )
}

/// Single-pass reader for a line-delimited record file. Invalid lines and
/// duplicates are reported and skipped; everything else is kept.
pub fn ingest<R: BufRead>(reader: R) -> Result<Ingested, IngestError> {
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen: HashMap<RecordKey, usize> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProbRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(Diagnostic::new(line_no, format!("schema violation: {e}")));
                continue;
            }
        };
        if let Err(e) = record.validate() {
            diagnostics.push(Diagnostic::new(line_no, e.to_string()));
            continue;
        }
        let key = record.key();
        if let Some(&first) = seen.get(&key) {
            diagnostics.push(duplicate_diagnostic(&key, first, line_no));
            continue;
        }
        seen.insert(key, line_no);
        records.push(record);
    }
    Ok(Ingested { dataset: Dataset::index(records), diagnostics })
}

/// Writes one JSON object per line, the inverse of [`ingest`].
pub fn write_records<'a, W, I>(records: I, mut writer: W) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a ProbRecord>,
{
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

// ---------------------------------------------------------------------------
// Joining with a prompt suite
// ---------------------------------------------------------------------------

/// A record with the answer key metadata of its prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedRecord {
    pub record: ProbRecord,
    /// `None` for orphans admitted with `allow_orphans`.
    pub sample_id: Option<String>,
    pub stereotype_split: Option<Split>,
}

impl EnrichedRecord {
    /// Wraps a record without suite metadata.
    pub fn bare(record: ProbRecord) -> Self {
        Self { record, sample_id: None, stereotype_split: None }
    }

    pub fn in_group(&self, group: GroupKey) -> bool {
        match group {
            GroupKey::Answer(a) => self.record.answer == a,
            GroupKey::Split(s) => self.stereotype_split == Some(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JoinIssue {
    /// prompt_id not in the suite.
    Orphan { prompt_id: String, admitted: bool },
    /// Stored answer differs from the suite's answer key.
    AnswerMismatch { prompt_id: String, record: AnswerOption, suite: AnswerOption },
    /// Stored seed differs from the prompt's seed.
    SeedMismatch { prompt_id: String, record: u32, suite: u32 },
}

impl JoinIssue {
    /// Whether the issue excluded the record from the joined set.
    pub fn is_error(&self) -> bool {
        !matches!(self, Self::Orphan { admitted: true, .. })
    }
}

impl fmt::Display for JoinIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Orphan { prompt_id, admitted: false } => {
                write!(f, "unknown prompt_id '{prompt_id}' (excluded; pass --allow-orphans to keep)")
            }
            Self::Orphan { prompt_id, admitted: true } => write!(f, "unknown prompt_id '{prompt_id}' (kept)"),
            Self::AnswerMismatch { prompt_id, record, suite } => write!(
                f,
                "answer mismatch for prompt '{prompt_id}': record says {record}, suite says {suite}"
            ),
            Self::SeedMismatch { prompt_id, record, suite } => {
                write!(f, "seed mismatch for prompt '{prompt_id}': record says {record}, suite says {suite}")
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Joined {
    pub records: Vec<EnrichedRecord>,
    pub issues: Vec<JoinIssue>,
}

impl Joined {
    pub fn has_errors(&self) -> bool {
        self.issues.iter().any(JoinIssue::is_error)
    }
}

/// Attaches sample id and stereotype split from the suite to every record.
pub fn join_prompts(dataset: &Dataset, suite: &PromptSuite, allow_orphans: bool) -> Joined {
    let mut out = Joined::default();
    for r in dataset.records() {
        match suite.get(&r.prompt_id) {
            None => {
                out.issues.push(JoinIssue::Orphan { prompt_id: r.prompt_id.clone(), admitted: allow_orphans });
                if allow_orphans {
                    out.records.push(EnrichedRecord::bare(r.clone()));
                }
            }
            Some(p) if p.answer != r.answer => out.issues.push(JoinIssue::AnswerMismatch {
                prompt_id: r.prompt_id.clone(),
                record: r.answer,
                suite: p.answer,
            }),
            Some(p) if p.seed != r.seed => out.issues.push(JoinIssue::SeedMismatch {
                prompt_id: r.prompt_id.clone(),
                record: r.seed,
                suite: p.seed,
            }),
            Some(p) => out.records.push(EnrichedRecord {
                record: r.clone(),
                sample_id: Some(p.sample_id.clone()),
                stereotype_split: p.stereotype_split,
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{generate_prompts, OccupationSlot, PromptTemplate, WinoBiasSample};

    fn line(step: u64, prompt: &str, rank: u64) -> String {
        format!(
            r#"{{"checkpoint_step":{step},"model_id":"m","seed":0,"prompt_id":"{prompt}","answer":"female","option_scores":[0.1,0.5,-0.2],"answer_token_rank":{rank},"vocab_size":50000}}"#
        )
    }

    #[test]
    fn normalize_uniform() {
        let d = OptionDistribution::from_scores([0.0, 0.0, 0.0]).unwrap();
        for p in d.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_hand_values() {
        // e^2, e^1, e^0 over their sum: 7.389056/11.107337, 2.718282/11.107337, 1/11.107337
        let d = OptionDistribution::from_scores([2.0, 1.0, 0.0]).unwrap();
        let expected = [0.66524, 0.24473, 0.09003];
        for (p, e) in d.probs().iter().zip(expected) {
            assert!((p - e).abs() < 1e-5, "{p} vs {e}");
        }
    }

    #[test]
    fn normalize_does_not_overflow() {
        let d = OptionDistribution::from_scores([1000.0, 0.0, 0.0]).unwrap();
        assert!((d.prob(AnswerOption::Male) - 1.0).abs() < 1e-15);
        assert!(d.prob(AnswerOption::Female) < 1e-300);
        assert!(d.probs().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn normalize_rejects_non_finite() {
        assert_eq!(
            OptionDistribution::from_scores([0.0, f64::NAN, 0.0]),
            Err(RecordError::NonFiniteScore(AnswerOption::Female))
        );
    }

    #[test]
    fn strict_argmax_ties() {
        let d = OptionDistribution::from_probs([0.4, 0.4, 0.2]).unwrap();
        assert_eq!(d.strict_argmax(), None);
        let d = OptionDistribution::from_probs([0.34, 0.33, 0.33]).unwrap();
        assert_eq!(d.strict_argmax(), Some(AnswerOption::Male));
    }

    #[test]
    fn competition_rank_convention() {
        let scores = [0.1, 0.5, 0.5, 0.2, 0.9];
        assert_eq!(competition_rank(&scores, 4), 1);
        assert_eq!(competition_rank(&scores, 1), 2);
        assert_eq!(competition_rank(&scores, 2), 2);
        assert_eq!(competition_rank(&scores, 3), 4);
        assert_eq!(competition_rank(&scores, 0), 5);
    }

    #[test]
    fn ingest_three_valid_lines() {
        let input = [line(1000, "a", 1), line(1000, "b", 3), line(2000, "a", 7)].join("\n");
        let got = ingest(input.as_bytes()).unwrap();
        assert_eq!(got.dataset.len(), 3);
        assert!(got.diagnostics.is_empty());
        assert_eq!(got.dataset.checkpoints(), vec![1000, 2000]);
        assert_eq!(got.dataset.group(1000, 0, AnswerOption::Female).count(), 2);
    }

    #[test]
    fn ingest_rejects_rank_zero() {
        let got = ingest(line(1, "a", 0).as_bytes()).unwrap();
        assert!(got.dataset.is_empty());
        assert_eq!(got.diagnostics, vec![Diagnostic::new(1, "rank must be ≥ 1")]);
    }

    #[test]
    fn ingest_rejects_rank_above_vocab() {
        let got = ingest(line(1, "a", 50001).as_bytes()).unwrap();
        assert!(got.diagnostics[0].message.contains("exceeds vocab_size"));
    }

    #[test]
    fn ingest_rejects_duplicates_with_both_lines() {
        let input = [line(1, "a", 1), line(1, "b", 1), line(1, "a", 2)].join("\n");
        let got = ingest(input.as_bytes()).unwrap();
        assert_eq!(got.dataset.len(), 2);
        assert_eq!(got.diagnostics.len(), 1);
        let d = &got.diagnostics[0];
        assert_eq!(d.line, 3);
        assert!(d.message.contains("first seen on line 1"), "{}", d.message);
    }

    #[test]
    fn ingest_reports_schema_violations() {
        let input = "not json\n{\"checkpoint_step\":1}\n[1,2]\n";
        let got = ingest(input.as_bytes()).unwrap();
        let lines: Vec<usize> = got.diagnostics.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![1, 2, 3]);
        assert!(got.diagnostics.iter().all(|d| d.message.starts_with("schema violation")));
    }

    #[test]
    fn unknown_fields_are_preserved() {
        let mut l = line(1, "a", 1);
        l.insert_str(1, r#""revision":"step1","#);
        let got = ingest(l.as_bytes()).unwrap();
        let r = &got.dataset.records()[0];
        assert_eq!(r.extra.get("revision"), Some(&serde_json::json!("step1")));
        let mut buf = Vec::new();
        write_records(got.dataset.records(), &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("\"revision\":\"step1\""));
    }

    fn suite() -> PromptSuite {
        let s = WinoBiasSample::new(
            "s1",
            "The developer argued with the designer because she did not like the design.",
            "designer",
            "developer",
            "she",
            OccupationSlot::FemaleStereotyped,
        )
        .unwrap();
        PromptSuite::new(generate_prompts(&[s], &[0], &PromptTemplate::default()).unwrap()).unwrap()
    }

    fn record(prompt_id: &str, answer: AnswerOption) -> ProbRecord {
        ProbRecord {
            checkpoint_step: 1,
            model_id: "m".into(),
            seed: 0,
            prompt_id: prompt_id.into(),
            answer,
            option_scores: [0.0; 3],
            answer_token_rank: 1,
            vocab_size: 10,
            extra: BTreeMap::new(),
        }
    }

    #[test]
    fn join_enriches_with_split() {
        let ds = Dataset::from_records(vec![record("s1/ref/s0", AnswerOption::Female)]).unwrap();
        let joined = join_prompts(&ds, &suite(), false);
        assert!(joined.issues.is_empty());
        assert_eq!(joined.records[0].stereotype_split, Some(Split::Pro));
        assert_eq!(joined.records[0].sample_id.as_deref(), Some("s1"));
    }

    #[test]
    fn join_flags_orphans() {
        let ds = Dataset::from_records(vec![record("nope", AnswerOption::Female)]).unwrap();
        let joined = join_prompts(&ds, &suite(), false);
        assert!(joined.records.is_empty());
        assert!(joined.has_errors());
        let kept = join_prompts(&ds, &suite(), true);
        assert_eq!(kept.records.len(), 1);
        assert!(!kept.has_errors());
    }

    #[test]
    fn join_flags_answer_disagreement() {
        let ds = Dataset::from_records(vec![record("s1/ref/s0", AnswerOption::Male)]).unwrap();
        let joined = join_prompts(&ds, &suite(), true);
        assert!(joined.records.is_empty());
        assert!(joined.issues[0].to_string().contains("s1/ref/s0"));
    }
}
