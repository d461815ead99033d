//! Answer options, gender labels and group keys shared by every stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the three answers a prompt offers.
///
/// `NotSpecified` is scored through the single token "not"; the word
/// "specified" follows it almost surely, so only the first token is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerOption {
    Male,
    Female,
    NotSpecified,
}

impl AnswerOption {
    /// Canonical order of the option-score vector: φ(male), φ(female), φ(not).
    pub const ALL: [AnswerOption; 3] = [Self::Male, Self::Female, Self::NotSpecified];

    pub fn index(self) -> usize {
        match self {
            Self::Male => 0,
            Self::Female => 1,
            Self::NotSpecified => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Male => "male",
            Self::Female => "female",
            Self::NotSpecified => "not_specified",
        }
    }

    /// Text shown to the model inside a prompt.
    pub fn display_text(self) -> &'static str {
        match self {
            Self::Male => "male",
            Self::Female => "female",
            Self::NotSpecified => "not specified",
        }
    }

    /// Short name used in metric identifiers (`jsdp_part_not`).
    pub fn part_name(self) -> &'static str {
        match self {
            Self::Male => "male",
            Self::Female => "female",
            Self::NotSpecified => "not",
        }
    }

    pub fn gender(self) -> Option<Gender> {
        match self {
            Self::Male => Some(Gender::Male),
            Self::Female => Some(Gender::Female),
            Self::NotSpecified => None,
        }
    }
}

impl fmt::Display for AnswerOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnswerOption {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "male" => Ok(Self::Male),
            "female" => Ok(Self::Female),
            "not_specified" | "not" => Ok(Self::NotSpecified),
            other => Err(format!("unknown answer option '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn answer(self) -> AnswerOption {
        match self {
            Self::Male => AnswerOption::Male,
            Self::Female => AnswerOption::Female,
        }
    }
}

/// Whether a gendered answer agrees with the queried occupation's stereotype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Pro,
    Anti,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pro => "pro",
            Self::Anti => "anti",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A prompt group: either all prompts with a given correct answer, or one
/// stereotype split. Each family partitions its prompt subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupKey {
    Answer(AnswerOption),
    Split(Split),
}

impl GroupKey {
    pub const ANSWER_GROUPS: [GroupKey; 3] = [
        GroupKey::Answer(AnswerOption::Male),
        GroupKey::Answer(AnswerOption::Female),
        GroupKey::Answer(AnswerOption::NotSpecified),
    ];
    pub const SPLIT_GROUPS: [GroupKey; 2] = [GroupKey::Split(Split::Pro), GroupKey::Split(Split::Anti)];
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Answer(a) => write!(f, "answer={a}"),
            Self::Split(s) => write!(f, "split={s}"),
        }
    }
}

impl FromStr for GroupKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('=') {
            Some(("answer", v)) => v.parse().map(Self::Answer),
            Some(("split", "pro")) => Ok(Self::Split(Split::Pro)),
            Some(("split", "anti")) => Ok(Self::Split(Split::Anti)),
            _ => Err(format!(
                "unknown group '{s}' (expected answer=<male|female|not_specified> or split=<pro|anti>)"
            )),
        }
    }
}

/// Seed column of the metric table: a single replicate, or all seeds pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeedKey {
    Seed(u32),
    Pooled,
}

impl fmt::Display for SeedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Seed(s) => write!(f, "{s}"),
            Self::Pooled => f.write_str("pooled"),
        }
    }
}

impl FromStr for SeedKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "pooled" {
            return Ok(Self::Pooled);
        }
        s.parse()
            .map(Self::Seed)
            .map_err(|_| format!("invalid seed '{s}'"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_keys_round_trip_through_text() {
        for g in GroupKey::ANSWER_GROUPS.iter().chain(GroupKey::SPLIT_GROUPS.iter()) {
            assert_eq!(g.to_string().parse::<GroupKey>().unwrap(), *g);
        }
        assert!("answer=they".parse::<GroupKey>().is_err());
        assert!("split".parse::<GroupKey>().is_err());
    }

    #[test]
    fn option_indices_follow_score_order() {
        for (i, o) in AnswerOption::ALL.iter().enumerate() {
            assert_eq!(o.index(), i);
            assert_eq!(AnswerOption::from_index(i), Some(*o));
        }
        assert_eq!(AnswerOption::from_index(3), None);
    }

    #[test]
    fn serde_names_are_snake_case() {
        let s = serde_json::to_string(&AnswerOption::NotSpecified).unwrap();
        assert_eq!(s, "\"not_specified\"");
        assert_eq!("pooled".parse::<SeedKey>().unwrap(), SeedKey::Pooled);
        assert_eq!("3".parse::<SeedKey>().unwrap(), SeedKey::Seed(3));
    }
}
