//! Synthetic checkpoint trajectories with a controllable bias onset.
//!
//! For a prompt whose answer is `a` at step `t`, the three option scores are
//! zero plus Gaussian noise, and the correct option additionally gets
//! `confidence_ramp · t`. The logit gap `g(t)` (pre- or post-onset) is split
//! evenly: the male-answer group's correct option gets `+g/2`, the
//! female-answer group's `−g/2`. With a zero pre-onset gap both groups are
//! identically distributed before onset.
//!
//! Answer ranks follow a geometric tail: with `q` the answer's 3-way
//! probability, `rank − 1 ~ Geometric(q)`, clamped to the vocabulary.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{MetricSeries, SeriesPoint};
use crate::options::AnswerOption;
use crate::prompts::{generate_prompts, OccupationSlot, PromptInstance, PromptTemplate, WinoBiasSample};
use crate::records::{OptionDistribution, ProbRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    #[serde(default = "default_model_id")]
    pub model_id: String,
    pub checkpoints: Vec<u64>,
    pub seeds: u32,
    pub prompts_per_group: usize,
    pub vocab_size: u64,
    pub bias_onset_step: u64,
    pub pre_onset_logit_gap: f64,
    pub post_onset_logit_gap: f64,
    /// Added to the correct option's score per training step.
    pub confidence_ramp: f64,
    pub noise_scale: f64,
}

fn default_model_id() -> String {
    "synthetic".into()
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            model_id: default_model_id(),
            checkpoints: (1..=14).map(|i| i * 10_000).collect(),
            seeds: 5,
            prompts_per_group: 50,
            vocab_size: 50_000,
            bias_onset_step: 80_000,
            pre_onset_logit_gap: 0.0,
            post_onset_logit_gap: 5.0,
            confidence_ramp: 0.0,
            noise_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("no checkpoints")]
    NoCheckpoints,
    #[error("checkpoints must be strictly increasing")]
    UnsortedCheckpoints,
    #[error("bias_onset_step {0} lies outside the checkpoint range")]
    OnsetOutOfRange(u64),
    #[error("{0} must be ≥ 1")]
    ZeroCount(&'static str),
    #[error("noise_scale must be finite and ≥ 0")]
    BadNoise,
    #[error("{0} must be finite")]
    NonFinite(&'static str),
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let (first, last) = match (self.checkpoints.first(), self.checkpoints.last()) {
            (Some(f), Some(l)) => (*f, *l),
            _ => return Err(SpecError::NoCheckpoints),
        };
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SpecError::UnsortedCheckpoints);
        }
        if !(first..=last).contains(&self.bias_onset_step) {
            return Err(SpecError::OnsetOutOfRange(self.bias_onset_step));
        }
        if self.seeds == 0 {
            return Err(SpecError::ZeroCount("seeds"));
        }
        if self.prompts_per_group == 0 {
            return Err(SpecError::ZeroCount("prompts_per_group"));
        }
        if self.vocab_size == 0 {
            return Err(SpecError::ZeroCount("vocab_size"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(SpecError::BadNoise);
        }
        for (name, v) in [
            ("pre_onset_logit_gap", self.pre_onset_logit_gap),
            ("post_onset_logit_gap", self.post_onset_logit_gap),
            ("confidence_ramp", self.confidence_ramp),
        ] {
            if !v.is_finite() {
                return Err(SpecError::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn logit_gap_at(&self, step: u64) -> f64 {
        if step >= self.bias_onset_step {
            self.post_onset_logit_gap
        } else {
            self.pre_onset_logit_gap
        }
    }

    /// Last checkpoint strictly before onset, if any.
    pub fn last_pre_onset(&self) -> Option<u64> {
        self.checkpoints.iter().copied().rev().find(|&s| s < self.bias_onset_step)
    }
}

/// A generated prompt suite and the records evaluating it.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub suite: Vec<PromptInstance>,
    pub records: Vec<ProbRecord>,
}

/// Samples behind the suite: `prompts_per_group` with a male pronoun and as
/// many with a female one, alternating which occupation is the referent so
/// both stereotype splits are populated.
pub fn synthetic_samples(prompts_per_group: usize) -> Vec<WinoBiasSample> {
    let mut out = Vec::with_capacity(2 * prompts_per_group);
    for (pronoun, tag) in [("he", "m"), ("she", "f")] {
        for i in 0..prompts_per_group {
            let female = format!("occupation_f{i}");
            let male = format!("occupation_m{i}");
            let sentence = format!("The {male} called the {female} because {pronoun} needed an answer.");
            let referent = if i % 2 == 0 { OccupationSlot::MaleStereotyped } else { OccupationSlot::FemaleStereotyped };
            let id = format!("syn-{tag}{i:05}");
            out.push(WinoBiasSample::new(id, sentence, female, male, pronoun, referent).expect("well-formed synthetic sample"));
        }
    }
    out
}

fn geometric_rank(rng: &mut ChaCha8Rng, q: f64, vocab: u64) -> u64 {
    let q = q.clamp(1e-9, 1.0);
    if q >= 1.0 - 1e-12 {
        return 1;
    }
    // Inverse CDF of the number of failures before the first success.
    let u: f64 = 1.0 - rng.random::<f64>();
    let failures = (u.ln() / (1.0 - q).ln()).floor();
    let rank = 1.0 + failures.min((vocab - 1) as f64);
    rank as u64
}

/// Deterministic in `(spec, master_seed)`. Each checkpoint draws from its
/// own ChaCha stream, so checkpoints can be generated in any order.
pub fn generate(spec: &TrajectorySpec, master_seed: u64) -> Result<Synthetic, SpecError> {
    spec.validate()?;
    let seeds: Vec<u32> = (0..spec.seeds).collect();
    let suite = generate_prompts(&synthetic_samples(spec.prompts_per_group), &seeds, &PromptTemplate::default())
        .expect("synthetic ids and seeds are unique");
    let noise = Normal::new(0.0, spec.noise_scale).map_err(|_| SpecError::BadNoise)?;

    let mut records = Vec::with_capacity(suite.len() * spec.checkpoints.len());
    for (ci, &step) in spec.checkpoints.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(ci as u64);
        let gap = spec.logit_gap_at(step);
        let confidence = spec.confidence_ramp * step as f64;
        for prompt in &suite {
            let mut scores = [0.0f64; 3];
            let correct = prompt.answer.index();
            scores[correct] += confidence;
            match prompt.answer {
                AnswerOption::Male => scores[correct] += gap / 2.0,
                AnswerOption::Female => scores[correct] -= gap / 2.0,
                AnswerOption::NotSpecified => {}
            }
            for s in &mut scores {
                *s += noise.sample(&mut rng);
            }
            let q = OptionDistribution::from_scores(scores).expect("finite").prob(prompt.answer);
            let rank = geometric_rank(&mut rng, q, spec.vocab_size);
            records.push(ProbRecord {
                checkpoint_step: step,
                model_id: spec.model_id.clone(),
                seed: prompt.seed,
                prompt_id: prompt.prompt_id.clone(),
                answer: prompt.answer,
                option_scores: scores,
                answer_token_rank: rank,
                vocab_size: spec.vocab_size,
                extra: Default::default(),
            });
        }
    }
    Ok(Synthetic { suite, records })
}

/// A performance curve on the spec's grid: `start + pre_slope · i` for
/// pre-onset checkpoint `i`, then a linear climb of `rise` from the last
/// pre-onset value to the final checkpoint.
pub fn performance_series(spec: &TrajectorySpec, start: f64, pre_slope: f64, rise: f64) -> MetricSeries {
    let pre: Vec<u64> = spec.checkpoints.iter().copied().filter(|&s| s < spec.bias_onset_step).collect();
    let base = start + pre_slope * pre.len().saturating_sub(1) as f64;
    let anchor = pre.last().copied().unwrap_or(spec.checkpoints[0]);
    let end = *spec.checkpoints.last().expect("validated");
    let points = spec
        .checkpoints
        .iter()
        .enumerate()
        .map(|(i, &step)| {
            let mean = if step < spec.bias_onset_step {
                start + pre_slope * i as f64
            } else if end == anchor {
                base + rise
            } else if pre.is_empty() && step == anchor {
                base
            } else {
                base + rise * (step - anchor) as f64 / (end - anchor) as f64
            };
            SeriesPoint { step, mean, std: None }
        })
        .collect();
    MetricSeries::new(spec.model_id.clone(), "performance", "all", points).expect("grid is increasing")
}

/// Two-column `checkpoint_step,value` text with a header.
pub fn write_perf_series<W: Write>(series: &MetricSeries, mut writer: W) -> std::io::Result<()> {
    writeln!(writer, "checkpoint_step,value")?;
    for p in series.points() {
        writeln!(writer, "{},{}", p.step, p.mean)?;
    }
    writer.flush()
}
