//! Bag-of-words decision analysis.
//!
//! Texts of choices the model picked as stereotypes form one class, texts it
//! passed over form the other, and every token is scored with a smoothed
//! log-probability ratio between the two classes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BiasCategory, GoldLabel, McsbItem};
use crate::evaluator::EvalRecord;
use crate::prompting::PromptMode;

pub const DEFAULT_K: usize = 7;
pub const DEFAULT_ALPHA: f64 = 1.0;

const STOPWORDS_TEXT: &str = include_str!("stopwords.txt");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LexiconError {
    #[error("record references unknown item {0:?}")]
    UnknownItem(String),
    #[error("alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("k must be at least 1")]
    ZeroK,
}

pub fn stopwords() -> &'static BTreeSet<&'static str> {
    static WORDS: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| {
        STOPWORDS_TEXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Lowercases, splits on runs of non-alphanumerics, and drops stopwords and
/// single-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let words = stopwords();
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() > 1 && !words.contains(t))
        .map(str::to_string)
        .collect()
}

/// Token counts for the two decision classes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCorpus {
    /// Tokens from texts the model treated as the stereotype.
    pub class_s: BTreeMap<String, u64>,
    /// Tokens from the texts it did not pick.
    pub class_n: BTreeMap<String, u64>,
}

impl TokenCorpus {
    pub fn add_stereotype_text(&mut self, text: &str) {
        for token in tokenize(text) {
            *self.class_s.entry(token).or_default() += 1;
        }
    }

    pub fn add_other_text(&mut self, text: &str) {
        for token in tokenize(text) {
            *self.class_n.entry(token).or_default() += 1;
        }
    }

    pub fn vocabulary(&self) -> BTreeSet<&str> {
        self.class_s
            .keys()
            .chain(self.class_n.keys())
            .map(String::as_str)
            .collect()
    }

    pub fn total_s(&self) -> u64 {
        self.class_s.values().sum()
    }

    pub fn total_n(&self) -> u64 {
        self.class_n.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.class_s.is_empty() && self.class_n.is_empty()
    }

    pub fn swapped(&self) -> Self {
        Self {
            class_s: self.class_n.clone(),
            class_n: self.class_s.clone(),
        }
    }

    pub fn merge(&mut self, other: &TokenCorpus) {
        for (t, c) in &other.class_s {
            *self.class_s.entry(t.clone()).or_default() += c;
        }
        for (t, c) in &other.class_n {
            *self.class_n.entry(t.clone()).or_default() += c;
        }
    }
}

/// When the picked choice counts as a stereotype decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Explicit records use [`SelectionRule::ResolvedLabel`], implicit ones
    /// [`SelectionRule::Selection`].
    #[default]
    ByMode,
    /// The picked text joins `class_s` only if its gold label is stereotype.
    ResolvedLabel,
    /// The picked text always joins `class_s`.
    Selection,
}

impl std::str::FromStr for SelectionRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "by_mode" => Ok(Self::ByMode),
            "resolved_label" => Ok(Self::ResolvedLabel),
            "selection" => Ok(Self::Selection),
            other => Err(format!("unknown selection rule {other:?}")),
        }
    }
}

impl SelectionRule {
    fn for_mode(self, mode: PromptMode) -> Self {
        match (self, mode) {
            (Self::ByMode, PromptMode::Explicit) => Self::ResolvedLabel,
            (Self::ByMode, PromptMode::Implicit) => Self::Selection,
            (rule, _) => rule,
        }
    }
}

/// Builds one token corpus per category. Unparseable records are skipped;
/// every choice the model did not pick joins `class_n`.
pub fn build_token_corpus(
    records: &[EvalRecord],
    items: &[McsbItem],
    rule: SelectionRule,
) -> Result<BTreeMap<BiasCategory, TokenCorpus>, LexiconError> {
    let by_id: HashMap<&str, &McsbItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut corpora: BTreeMap<BiasCategory, TokenCorpus> = BTreeMap::new();
    for record in records {
        let item = by_id
            .get(record.item_id.as_str())
            .ok_or_else(|| LexiconError::UnknownItem(record.item_id.clone()))?;
        let Some(symbol) = record.parsed.symbol() else {
            continue;
        };
        let Some(picked) = record.binding().original_index(symbol) else {
            continue;
        };
        let corpus = corpora.entry(item.category.clone()).or_default();
        for (i, choice) in item.choices.iter().enumerate() {
            if i != picked {
                corpus.add_other_text(&choice.text);
            } else {
                let counts = match rule.for_mode(record.mode) {
                    SelectionRule::Selection => true,
                    _ => choice.gold == GoldLabel::Stereotype,
                };
                if counts {
                    corpus.add_stereotype_text(&choice.text);
                }
            }
        }
    }
    Ok(corpora)
}

/// Smoothed log-odds of `token` between the stereotype class and the rest:
/// `ln((c_s + a) / (N_s + a V)) - ln((c_n + a) / (N_n + a V))`.
pub fn log_odds_score(token: &str, corpus: &TokenCorpus, alpha: f64) -> Result<f64, LexiconError> {
    if !(alpha > 0.0) {
        return Err(LexiconError::BadAlpha(alpha));
    }
    let v = corpus.vocabulary().len() as f64;
    Ok(score_with(
        token,
        corpus,
        alpha,
        v,
        corpus.total_s() as f64,
        corpus.total_n() as f64,
    ))
}

fn score_with(token: &str, corpus: &TokenCorpus, alpha: f64, v: f64, n_s: f64, n_n: f64) -> f64 {
    let c_s = corpus.class_s.get(token).copied().unwrap_or(0) as f64;
    let c_n = corpus.class_n.get(token).copied().unwrap_or(0) as f64;
    ((c_s + alpha) / (n_s + alpha * v)).ln() - ((c_n + alpha) / (n_n + alpha * v)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredToken {
    pub token: String,
    pub score: f64,
}

/// Two top-k lists, each sorted by score descending with ties broken by
/// token. `away` scores are the log-odds toward the non-stereotype class
/// (the negated stereotype score).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedLists {
    pub toward: Vec<ScoredToken>,
    pub away: Vec<ScoredToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconReport {
    pub k: usize,
    pub alpha: f64,
    pub all: RankedLists,
    pub categories: BTreeMap<BiasCategory, RankedLists>,
}

pub fn rank_tokens(
    corpus: &TokenCorpus,
    k: usize,
    alpha: f64,
) -> Result<RankedLists, LexiconError> {
    if k == 0 {
        return Err(LexiconError::ZeroK);
    }
    if !(alpha > 0.0) {
        return Err(LexiconError::BadAlpha(alpha));
    }
    let vocabulary = corpus.vocabulary();
    let v = vocabulary.len() as f64;
    let (n_s, n_n) = (corpus.total_s() as f64, corpus.total_n() as f64);
    let scored: Vec<(&str, f64)> = vocabulary
        .iter()
        .map(|t| (*t, score_with(t, corpus, alpha, v, n_s, n_n)))
        .collect();

    let top = |sign: f64| {
        let mut list: Vec<ScoredToken> = scored
            .iter()
            .map(|(t, s)| ScoredToken {
                token: t.to_string(),
                score: sign * s,
            })
            .collect();
        list.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.token.cmp(&b.token))
        });
        list.truncate(k);
        list
    };
    Ok(RankedLists {
        toward: top(1.0),
        away: top(-1.0),
    })
}

pub fn build_lexicon_report(
    records: &[EvalRecord],
    items: &[McsbItem],
    rule: SelectionRule,
    k: usize,
    alpha: f64,
) -> Result<LexiconReport, LexiconError> {
    let corpora = build_token_corpus(records, items, rule)?;
    let mut pooled = TokenCorpus::default();
    let mut categories = BTreeMap::new();
    for (category, corpus) in &corpora {
        pooled.merge(corpus);
        categories.insert(category.clone(), rank_tokens(corpus, k, alpha)?);
    }
    Ok(LexiconReport {
        k,
        alpha,
        all: rank_tokens(&pooled, k, alpha)?,
        categories,
    })
}

impl LexiconReport {
    /// Two-block Markdown table: words that steered away from the
    /// stereotype first, then words that steered toward it.
    pub fn to_markdown(&self) -> String {
        let mut ordered: Vec<(&BiasCategory, &RankedLists)> = self.categories.iter().collect();
        ordered.sort_by(|a, b| a.0.canonical_rank().cmp(&b.0.canonical_rank()));

        let words = |list: &[ScoredToken]| {
            list.iter()
                .map(|t| format!("'{}'", t.token))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut out = String::from("| Group | Words |\n|---|---|\n");
        for (title, pick) in [
            (
                "wasn't",
                (|l: &RankedLists| l.away.as_slice()) as fn(&RankedLists) -> &[ScoredToken],
            ),
            ("was", |l: &RankedLists| l.toward.as_slice()),
        ] {
            let _ = writeln!(
                out,
                "| **Top {} words helped decide it {title} stereotype** | |",
                self.k
            );
            let _ = writeln!(out, "| All | {} |", words(pick(&self.all)));
            for (category, lists) in &ordered {
                let _ = writeln!(
                    out,
                    "| {} | {} |",
                    category.display_name(),
                    words(pick(lists))
                );
            }
        }
        out
    }
}
