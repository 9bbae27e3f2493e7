//! Benchmark ingestion: StereoSet and CrowS-Pairs loaders, normalization into
//! multiple-choice items, category filtering and seeded train/test splits.

mod crowspairs;
mod io;
mod split;
mod stereoset;

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crowspairs::{load_crowspairs, map_crowspairs_bias_type, parse_crowspairs};
pub use io::{read_items, read_rejects, write_items, write_rejects};
pub(crate) use io::{read_jsonl as read_jsonl_file, write_jsonl as write_jsonl_file};
pub use split::{split_train_test, SplitSpec};
pub use stereoset::{load_stereoset, parse_stereoset, Portion};

/// Marker StereoSet uses for the blank slot in intrasentence contexts.
pub const BLANK_TOKEN: &str = "BLANK";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed input at byte offset {offset}: {message}")]
    Format {
        path: String,
        offset: usize,
        message: String,
    },
    #[error("invalid item: {0}")]
    Item(#[from] ItemError),
    #[error("category {category} has {available} items, needs more than {requested} for a train/test split")]
    SplitPrecondition {
        category: BiasCategory,
        available: usize,
        requested: usize,
    },
    #[error("per_category_train must be at least 1")]
    ZeroTrainCount,
}

/// Violations of the [`McsbItem`] invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ItemError {
    #[error("invalid category name {0:?}")]
    Category(String),
    #[error("item has {0} choices, expected 2 or 3")]
    ChoiceCount(usize),
    #[error("expected exactly one {label} choice, found {found}")]
    LabelCount { label: GoldLabel, found: usize },
    #[error("a 3-choice item needs one unrelated choice and a 2-choice item none")]
    UnrelatedShape,
    #[error("choice {0} has empty text")]
    EmptyChoice(usize),
    #[error("duplicate choice text {0:?}")]
    DuplicateChoice(String),
    #[error("unknown gold label {0:?}")]
    UnknownLabel(String),
    #[error("missing gold label on sentence {0}")]
    MissingLabel(usize),
    #[error("unknown stereo_antistereo value {0:?}")]
    UnknownDirection(String),
    #[error("unknown bias_type {0:?}")]
    UnknownBiasType(String),
}

/// Lowercase bias-category token such as `gender` or `sexual-orientation`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BiasCategory(String);

impl BiasCategory {
    pub const GENDER: &'static str = "gender";
    pub const RACE: &'static str = "race";
    pub const PROFESSION: &'static str = "profession";
    pub const RELIGION: &'static str = "religion";
    pub const AGE: &'static str = "age";
    pub const DISABILITY: &'static str = "disability";
    pub const NATIONALITY: &'static str = "nationality";
    pub const PHYSICAL_APPEARANCE: &'static str = "physical-appearance";
    pub const SEXUAL_ORIENTATION: &'static str = "sexual-orientation";
    pub const SOCIOECONOMIC: &'static str = "socioeconomic";

    /// Presentation order used by reports: the StereoSet block first, then
    /// the remaining CrowS-Pairs categories.
    pub const CANONICAL_ORDER: [&'static str; 10] = [
        Self::GENDER,
        Self::RACE,
        Self::PROFESSION,
        Self::RELIGION,
        Self::AGE,
        Self::DISABILITY,
        Self::NATIONALITY,
        Self::PHYSICAL_APPEARANCE,
        Self::SEXUAL_ORIENTATION,
        Self::SOCIOECONOMIC,
    ];

    pub fn new(name: impl Into<String>) -> Result<Self, ItemError> {
        let name = name.into();
        let ok = !name.is_empty()
            && !name.chars().any(char::is_whitespace)
            && name.chars().all(|c| !c.is_uppercase());
        if ok {
            Ok(Self(name))
        } else {
            Err(ItemError::Category(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Human-readable row label matching the benchmark tables
    /// (`age` renders as "Age Status").
    pub fn display_name(&self) -> String {
        match self.0.as_str() {
            Self::AGE => "Age Status".to_string(),
            Self::SOCIOECONOMIC => "Socioeconomic Status".to_string(),
            other => other
                .split(['-', '_'])
                .filter(|w| !w.is_empty())
                .map(|w| {
                    let mut chars = w.chars();
                    match chars.next() {
                        Some(first) => first.to_uppercase().chain(chars).collect::<String>(),
                        None => String::new(),
                    }
                })
                .collect::<Vec<_>>()
                .join(" "),
        }
    }

    /// Sort key placing known categories in canonical order and the rest
    /// alphabetically after them.
    pub fn canonical_rank(&self) -> (usize, &str) {
        let rank = Self::CANONICAL_ORDER
            .iter()
            .position(|c| *c == self.0)
            .unwrap_or(Self::CANONICAL_ORDER.len());
        (rank, self.0.as_str())
    }
}

impl TryFrom<String> for BiasCategory {
    type Error = ItemError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<BiasCategory> for String {
    fn from(value: BiasCategory) -> Self {
        value.0
    }
}

impl fmt::Display for BiasCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for BiasCategory {
    type Err = ItemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldLabel {
    Stereotype,
    AntiStereotype,
    Unrelated,
}

impl GoldLabel {
    pub const ALL: [GoldLabel; 3] = [Self::Stereotype, Self::AntiStereotype, Self::Unrelated];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stereotype => "stereotype",
            Self::AntiStereotype => "anti_stereotype",
            Self::Unrelated => "unrelated",
        }
    }

    /// Parses both the normalized spelling and StereoSet's `anti-stereotype`.
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim() {
            "stereotype" => Some(Self::Stereotype),
            "anti-stereotype" | "anti_stereotype" => Some(Self::AntiStereotype),
            "unrelated" => Some(Self::Unrelated),
            _ => None,
        }
    }
}

impl fmt::Display for GoldLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Stereoset,
    Crowspairs,
    Custom,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stereoset => "stereoset",
            Self::Crowspairs => "crowspairs",
            Self::Custom => "custom",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub text: String,
    pub gold: GoldLabel,
}

impl Choice {
    pub fn new(text: impl Into<String>, gold: GoldLabel) -> Self {
        Self {
            text: text.into(),
            gold,
        }
    }
}

/// A normalized multiple-choice bias question.
///
/// Construct through [`McsbItem::new`], which enforces the choice-shape
/// invariants: two or three choices, exactly one stereotype and one
/// anti-stereotype, an unrelated choice iff there are three, and pairwise
/// distinct non-empty texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McsbItem {
    pub id: String,
    pub source: Source,
    pub category: BiasCategory,
    pub context: Option<String>,
    pub choices: Vec<Choice>,
}

impl McsbItem {
    pub fn new(
        id: impl Into<String>,
        source: Source,
        category: BiasCategory,
        context: Option<String>,
        choices: Vec<Choice>,
    ) -> Result<Self, ItemError> {
        let item = Self {
            id: id.into(),
            source,
            category,
            context,
            choices,
        };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<(), ItemError> {
        let n = self.choices.len();
        if !(2..=3).contains(&n) {
            return Err(ItemError::ChoiceCount(n));
        }
        for (i, c) in self.choices.iter().enumerate() {
            if c.text.trim().is_empty() {
                return Err(ItemError::EmptyChoice(i));
            }
        }
        for label in [GoldLabel::Stereotype, GoldLabel::AntiStereotype] {
            let found = self.count_label(label);
            if found != 1 {
                return Err(ItemError::LabelCount { label, found });
            }
        }
        let unrelated = self.count_label(GoldLabel::Unrelated);
        if unrelated != n - 2 {
            return Err(ItemError::UnrelatedShape);
        }
        let mut seen = BTreeSet::new();
        for c in &self.choices {
            if !seen.insert(c.text.as_str()) {
                return Err(ItemError::DuplicateChoice(c.text.clone()));
            }
        }
        Ok(())
    }

    fn count_label(&self, label: GoldLabel) -> usize {
        self.choices.iter().filter(|c| c.gold == label).count()
    }

    /// Index of the choice carrying `label`, in original choice order.
    pub fn index_of(&self, label: GoldLabel) -> Option<usize> {
        self.choices.iter().position(|c| c.gold == label)
    }

    pub fn has_blank_context(&self) -> bool {
        self.context
            .as_deref()
            .is_some_and(|c| c.contains(BLANK_TOKEN))
    }
}

/// A record that failed validation during ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub source_location: String,
    pub reason: String,
}

/// Items that passed validation together with everything that did not.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadOutcome {
    pub items: Vec<McsbItem>,
    pub rejects: Vec<Reject>,
}

/// Order-preserving filter on category. An empty set keeps everything.
pub fn filter_items(items: &[McsbItem], categories: &BTreeSet<BiasCategory>) -> Vec<McsbItem> {
    if categories.is_empty() {
        return items.to_vec();
    }
    items
        .iter()
        .filter(|item| categories.contains(&item.category))
        .cloned()
        .collect()
}

/// Converts a serde_json line/column position into a byte offset in `bytes`.
pub(crate) fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in bytes.split_inclusive(|b| *b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(bytes.len());
        }
        offset += l.len();
    }
    bytes.len()
}
