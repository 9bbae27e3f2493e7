//! Per-category outcome ratios, Wilson intervals, baseline deltas and
//! cross-dataset matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BiasCategory, GoldLabel};
use crate::evaluator::EvalRecord;

pub const DEFAULT_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("interval undefined for n = 0")]
    EmptySample,
    #[error("successes {successes} exceed n {n}")]
    SuccessesExceedN { successes: u64, n: u64 },
    #[error("z must be positive, got {0}")]
    BadZ(f64),
    #[error("category sets differ; only in baseline: {only_baseline:?}, only in variant: {only_variant:?}")]
    CategoryMismatch {
        only_baseline: Vec<String>,
        only_variant: Vec<String>,
    },
    #[error("duplicate run ({0}, {1}, {2})")]
    DuplicateRun(String, String, String),
    #[error("run tags must be non-empty")]
    EmptyTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Stereotype,
    AntiStereotype,
    Unrelated,
    Unparseable,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Self::Stereotype,
        Self::AntiStereotype,
        Self::Unrelated,
        Self::Unparseable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stereotype => "stereotype",
            Self::AntiStereotype => "anti_stereotype",
            Self::Unrelated => "unrelated",
            Self::Unparseable => "unparseable",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Stereotype => "Stereotype",
            Self::AntiStereotype => "Anti-stereotype",
            Self::Unrelated => "Unrelated",
            Self::Unparseable => "Unparseable",
        }
    }

    pub fn of_record(record: &EvalRecord) -> Self {
        match record.parsed.resolved {
            Some(GoldLabel::Stereotype) => Self::Stereotype,
            Some(GoldLabel::AntiStereotype) => Self::AntiStereotype,
            Some(GoldLabel::Unrelated) => Self::Unrelated,
            None => Self::Unparseable,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown outcome {s:?}"))
    }
}

/// One value per outcome key, serialized as a keyed object.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerOutcome<T> {
    pub stereotype: T,
    pub anti_stereotype: T,
    pub unrelated: T,
    pub unparseable: T,
}

impl<T: Copy> PerOutcome<T> {
    pub fn get(&self, outcome: Outcome) -> T {
        match outcome {
            Outcome::Stereotype => self.stereotype,
            Outcome::AntiStereotype => self.anti_stereotype,
            Outcome::Unrelated => self.unrelated,
            Outcome::Unparseable => self.unparseable,
        }
    }

    pub fn get_mut(&mut self, outcome: Outcome) -> &mut T {
        match outcome {
            Outcome::Stereotype => &mut self.stereotype,
            Outcome::AntiStereotype => &mut self.anti_stereotype,
            Outcome::Unrelated => &mut self.unrelated,
            Outcome::Unparseable => &mut self.unparseable,
        }
    }

    pub fn map<U>(&self, f: impl Fn(Outcome, T) -> U) -> PerOutcome<U> {
        PerOutcome {
            stereotype: f(Outcome::Stereotype, self.stereotype),
            anti_stereotype: f(Outcome::AntiStereotype, self.anti_stereotype),
            unrelated: f(Outcome::Unrelated, self.unrelated),
            unparseable: f(Outcome::Unparseable, self.unparseable),
        }
    }
}

/// Which records form the ratio denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Every attempt; unparseable replies get their own ratio.
    #[default]
    All,
    /// Only replies that resolved to a choice.
    ParseableOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    pub z: f64,
    pub denominator: Denominator,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            z: DEFAULT_Z,
            denominator: Denominator::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: BiasCategory,
    pub n: u64,
    pub counts: PerOutcome<u64>,
    pub ratios: PerOutcome<f64>,
    pub ci: PerOutcome<(f64, f64)>,
    /// Unparseable records left out of `n` under
    /// [`Denominator::ParseableOnly`]; zero otherwise.
    #[serde(default)]
    pub excluded: u64,
}

impl CategoryStats {
    pub fn ratio(&self, outcome: Outcome) -> f64 {
        self.ratios.get(outcome)
    }

    fn from_counts(
        category: BiasCategory,
        counts: PerOutcome<u64>,
        excluded: u64,
        z: f64,
    ) -> Result<Self, MetricsError> {
        let n = Outcome::ALL.iter().map(|o| counts.get(*o)).sum();
        let ratios = counts.map(|_, c| if n == 0 { 0.0 } else { c as f64 / n as f64 });
        let mut ci = PerOutcome::<(f64, f64)>::default();
        for outcome in Outcome::ALL {
            *ci.get_mut(outcome) = if n == 0 {
                (0.0, 1.0)
            } else {
                wilson_ci(counts.get(outcome), n, z)?
            };
        }
        Ok(Self {
            category,
            n,
            counts,
            ratios,
            ci,
            excluded,
        })
    }
}

pub type StatsMap = BTreeMap<BiasCategory, CategoryStats>;

pub fn aggregate(records: &[EvalRecord]) -> StatsMap {
    aggregate_with(records, &AggregateOptions::default()).expect("default z is valid")
}

/// Counts outcomes per category. Categories with no records are absent.
pub fn aggregate_with(
    records: &[EvalRecord],
    options: &AggregateOptions,
) -> Result<StatsMap, MetricsError> {
    if !(options.z > 0.0) {
        return Err(MetricsError::BadZ(options.z));
    }
    let mut tallies: BTreeMap<&BiasCategory, (PerOutcome<u64>, u64)> = BTreeMap::new();
    for record in records {
        let (counts, excluded) = tallies.entry(&record.category).or_default();
        let outcome = Outcome::of_record(record);
        if outcome == Outcome::Unparseable && options.denominator == Denominator::ParseableOnly {
            *excluded += 1;
        } else {
            *counts.get_mut(outcome) += 1;
        }
    }
    tallies
        .into_iter()
        .map(|(category, (counts, excluded))| {
            CategoryStats::from_counts(category.clone(), counts, excluded, options.z)
                .map(|s| (category.clone(), s))
        })
        .collect()
}

/// Wilson score interval for a binomial proportion, clamped to [0, 1].
pub fn wilson_ci(successes: u64, n: u64, z: f64) -> Result<(f64, f64), MetricsError> {
    if n == 0 {
        return Err(MetricsError::EmptySample);
    }
    if successes > n {
        return Err(MetricsError::SuccessesExceedN { successes, n });
    }
    if !(z > 0.0) {
        return Err(MetricsError::BadZ(z));
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let low = if successes == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let high = if successes == n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    Ok((low.min(p), high.max(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub baseline: f64,
    pub variant: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub key: Outcome,
    pub rows: BTreeMap<BiasCategory, DeltaRow>,
}

/// Per-category `variant.ratio[key] - baseline.ratio[key]`.
pub fn compare(
    baseline: &StatsMap,
    variant: &StatsMap,
    key: Outcome,
) -> Result<DeltaReport, MetricsError> {
    let left: BTreeSet<_> = baseline.keys().collect();
    let right: BTreeSet<_> = variant.keys().collect();
    if left != right {
        return Err(MetricsError::CategoryMismatch {
            only_baseline: left.difference(&right).map(|c| c.to_string()).collect(),
            only_variant: right.difference(&left).map(|c| c.to_string()).collect(),
        });
    }
    let rows = baseline
        .iter()
        .map(|(category, base)| {
            let b = base.ratio(key);
            let v = variant[category].ratio(key);
            (
                category.clone(),
                DeltaRow {
                    baseline: b,
                    variant: v,
                    delta: v - b,
                },
            )
        })
        .collect();
    Ok(DeltaReport { key, rows })
}

/// Records from one (trained-on, evaluated-on, variant) combination.
#[derive(Debug, Clone)]
pub struct CrossRun {
    pub train_corpus: String,
    pub eval_corpus: String,
    pub variant: String,
    pub records: Vec<EvalRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCell {
    pub train_corpus: String,
    pub eval_corpus: String,
    pub variant: String,
    pub stats: StatsMap,
}

/// Cells in the order the runs were given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossEvalReport {
    pub cells: Vec<CrossCell>,
}

impl CrossEvalReport {
    pub fn cell(&self, train: &str, eval: &str, variant: &str) -> Option<&CrossCell> {
        self.cells
            .iter()
            .find(|c| c.train_corpus == train && c.eval_corpus == eval && c.variant == variant)
    }
}

pub fn cross_matrix(runs: &[CrossRun]) -> Result<CrossEvalReport, MetricsError> {
    let mut seen = BTreeSet::new();
    let mut cells = Vec::with_capacity(runs.len());
    for run in runs {
        if run.train_corpus.is_empty() || run.eval_corpus.is_empty() || run.variant.is_empty() {
            return Err(MetricsError::EmptyTag);
        }
        let triple = (
            run.train_corpus.clone(),
            run.eval_corpus.clone(),
            run.variant.clone(),
        );
        if !seen.insert(triple.clone()) {
            return Err(MetricsError::DuplicateRun(triple.0, triple.1, triple.2));
        }
        cells.push(CrossCell {
            train_corpus: triple.0,
            eval_corpus: triple.1,
            variant: triple.2,
            stats: aggregate(&run.records),
        });
    }
    Ok(CrossEvalReport { cells })
}
