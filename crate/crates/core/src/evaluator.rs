//! Runs items through a backend and turns replies into evaluation records.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{BiasCategory, CorpusError, GoldLabel, McsbItem};
use crate::modelgate::{
    complete_cached, BackendSpec, DiskCache, Gateway, GatewayError, GoldSymbols,
};
use crate::prompting::{
    build_transcript_with, permutation_for, Binding, PromptError, PromptMode, TranscriptOptions,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    NoItems,
    #[error("{failed} of {total} items failed in transport; aborting run")]
    TooManyFailures { failed: usize, total: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("failed to build thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "symbol", rename_all = "snake_case")]
pub enum AnswerOutcome {
    Symbol(char),
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub outcome: AnswerOutcome,
    pub resolved: Option<GoldLabel>,
}

impl ParsedAnswer {
    pub const UNPARSEABLE: Self = Self {
        outcome: AnswerOutcome::Unparseable,
        resolved: None,
    };

    pub fn symbol(&self) -> Option<char> {
        match self.outcome {
            AnswerOutcome::Symbol(s) => Some(s),
            AnswerOutcome::Unparseable => None,
        }
    }
}

/// Extracts a single answer symbol from a raw reply.
///
/// Trims whitespace and surrounding quotes, periods and colons, then
/// uppercases. A lone valid symbol is accepted; otherwise the first
/// standalone one-character token (split on non-alphanumerics) that is a
/// valid symbol wins. `resolved` is left empty; see [`resolve_answer`].
pub fn parse_answer(raw: &str, valid_symbols: &[char]) -> ParsedAnswer {
    let is_valid = |c: char| valid_symbols.contains(&c);
    let trimmed = raw
        .trim()
        .trim_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | '.' | ':'))
        .to_uppercase();

    let mut chars = trimmed.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if is_valid(c) {
            return symbol_answer(c);
        }
    }
    trimmed
        .split(|c: char| !c.is_alphanumeric())
        .filter_map(|token| {
            let mut cs = token.chars();
            match (cs.next(), cs.next()) {
                (Some(c), None) if is_valid(c) => Some(c),
                _ => None,
            }
        })
        .next()
        .map_or(ParsedAnswer::UNPARSEABLE, symbol_answer)
}

fn symbol_answer(symbol: char) -> ParsedAnswer {
    ParsedAnswer {
        outcome: AnswerOutcome::Symbol(symbol),
        resolved: None,
    }
}

/// Fills `resolved` by mapping the symbol through the binding to the item's
/// gold label.
pub fn resolve_answer(parsed: ParsedAnswer, binding: &Binding, item: &McsbItem) -> ParsedAnswer {
    let resolved = parsed
        .symbol()
        .and_then(|s| binding.original_index(s))
        .and_then(|i| item.choices.get(i))
        .map(|c| c.gold);
    match resolved {
        Some(_) => ParsedAnswer { resolved, ..parsed },
        None => ParsedAnswer::UNPARSEABLE,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub category: BiasCategory,
    pub mode: PromptMode,
    pub permutation: Vec<usize>,
    pub backend_id: String,
    pub raw_text: String,
    pub parsed: ParsedAnswer,
    pub from_cache: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    /// The binding implied by the stored permutation.
    pub fn binding(&self) -> Binding {
        Binding::new(self.permutation.clone()).expect("records hold valid permutations")
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Permutation seed; 0 presents choices in their original order.
    pub seed: u64,
    pub parallelism: usize,
    /// Abort when more than this fraction of items fail in transport.
    pub failure_threshold: f64,
    pub transcript: TranscriptOptions,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            parallelism: 4,
            failure_threshold: 0.5,
            transcript: TranscriptOptions::default(),
        }
    }
}

/// Evaluates every item once and returns records in input order.
pub fn evaluate(
    items: &[McsbItem],
    mode: PromptMode,
    gateway: &Gateway,
    config: &EvalConfig,
    cache: Option<&DiskCache>,
) -> Result<Vec<EvalRecord>, EvalError> {
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    gateway.preflight()?;
    let backend_id = gateway.spec().backend_id();

    let run_one = |item: &McsbItem| -> Result<EvalRecord, EvalError> {
        let permutation = permutation_for(&item.id, config.seed, item.choices.len())?;
        let transcript = build_transcript_with(item, mode, &permutation, &config.transcript)?;
        let hidden = GoldSymbols::from_binding(item, &transcript.binding);
        let reply = match cache {
            Some(cache) => complete_cached(gateway, &transcript, Some(&hidden), cache),
            None => gateway.complete(&transcript, Some(&hidden)),
        };
        let mut record = EvalRecord {
            item_id: item.id.clone(),
            category: item.category.clone(),
            mode,
            permutation,
            backend_id: backend_id.clone(),
            raw_text: String::new(),
            parsed: ParsedAnswer::UNPARSEABLE,
            from_cache: false,
            error: None,
        };
        match reply {
            Ok(completion) => {
                let parsed = parse_answer(&completion.text, &transcript.binding.symbols);
                record.parsed = resolve_answer(parsed, &transcript.binding, item);
                record.raw_text = completion.text;
                record.from_cache = completion.from_cache;
            }
            Err(e @ GatewayError::Config(_)) => return Err(e.into()),
            Err(e) => {
                log::warn!("item {} failed: {e}", item.id);
                record.error = Some(e.to_string());
            }
        }
        Ok(record)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let records: Vec<EvalRecord> =
        pool.install(|| items.par_iter().map(run_one).collect::<Result<_, _>>())?;

    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed as f64 > config.failure_threshold * records.len() as f64 {
        return Err(EvalError::TooManyFailures {
            failed,
            total: records.len(),
        });
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<(), CorpusError> {
    crate::corpus::write_jsonl_file(path, records)
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, CorpusError> {
    crate::corpus::read_jsonl_file(path)
}

/// Hex SHA-256 of the evaluated items in their normalized JSONL form.
pub fn dataset_digest(items: &[McsbItem]) -> String {
    let mut hasher = Sha256::new();
    for item in items {
        hasher.update(serde_json::to_vec(item).expect("items serialize"));
        hasher.update(b"\n");
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Provenance written next to the records of a run. Only the name of the
/// credential variable is kept, never its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub backend: BackendSpec,
    pub mode: PromptMode,
    pub seed: u64,
    pub dataset_digest: String,
    pub item_count: usize,
    pub timestamp: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Choice, Source};
    use crate::modelgate::BackendKind;
    use proptest::prelude::*;

    const ABC: [char; 3] = ['A', 'B', 'C'];

    fn sym(c: char) -> ParsedAnswer {
        symbol_answer(c)
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_answer("A", &ABC), sym('A'));
        assert_eq!(parse_answer(" c. ", &ABC), sym('C'));
        assert_eq!(
            parse_answer("As an AI, I cannot choose between these.", &ABC),
            ParsedAnswer::UNPARSEABLE
        );
        assert_eq!(parse_answer("\"B\"", &ABC), sym('B'));
        assert_eq!(parse_answer("Answer: B.", &ABC), sym('B'));
        assert_eq!(parse_answer("(C) because", &ABC), sym('C'));
        assert_eq!(parse_answer("", &ABC), ParsedAnswer::UNPARSEABLE);
        assert_eq!(parse_answer("C", &['A', 'B']), ParsedAnswer::UNPARSEABLE);
        assert_eq!(parse_answer("D", &ABC), ParsedAnswer::UNPARSEABLE);
    }

    proptest! {
        #[test]
        fn parse_is_idempotent(raw in "\\PC{0,40}") {
            let first = parse_answer(&raw, &ABC);
            if let Some(s) = first.symbol() {
                prop_assert!(ABC.contains(&s));
                prop_assert_eq!(parse_answer(&s.to_string(), &ABC), first);
            }
        }
    }

    fn items(n: usize) -> Vec<McsbItem> {
        let categories = ["race", "gender", "profession", "religion"];
        (0..n)
            .map(|i| {
                McsbItem::new(
                    format!("item-{i}"),
                    Source::Custom,
                    BiasCategory::new(categories[i % 4]).unwrap(),
                    Some(format!("context {i}")),
                    vec![
                        Choice::new(format!("anti {i}"), GoldLabel::AntiStereotype),
                        Choice::new(format!("unrelated {i}"), GoldLabel::Unrelated),
                        Choice::new(format!("stereo {i}"), GoldLabel::Stereotype),
                    ],
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn mock_gold_always_resolves_to_stereotype() {
        let gw = Gateway::new(BackendSpec::mock(BackendKind::MockGold)).unwrap();
        for seed in [0, 1, 42] {
            let config = EvalConfig {
                seed,
                ..EvalConfig::default()
            };
            let records = evaluate(&items(10), PromptMode::Implicit, &gw, &config, None).unwrap();
            assert_eq!(records.len(), 10);
            assert!(records
                .iter()
                .all(|r| r.parsed.resolved == Some(GoldLabel::Stereotype)));
        }
    }

    #[test]
    fn mock_first_with_identity_order_picks_first_choice() {
        let gw = Gateway::new(BackendSpec::mock(BackendKind::MockFirst)).unwrap();
        let all = items(10);
        let records = evaluate(
            &all,
            PromptMode::Explicit,
            &gw,
            &EvalConfig::default(),
            None,
        )
        .unwrap();
        for (item, record) in all.iter().zip(&records) {
            assert_eq!(record.item_id, item.id);
            assert_eq!(record.parsed.resolved, Some(item.choices[0].gold));
            assert_eq!(record.raw_text, "A");
        }
    }

    #[test]
    fn records_keep_input_order_under_parallelism() {
        let gw = Gateway::new(BackendSpec::mock(BackendKind::MockGold)).unwrap();
        let all = items(57);
        let config = EvalConfig {
            seed: 3,
            parallelism: 8,
            ..EvalConfig::default()
        };
        let records = evaluate(&all, PromptMode::Implicit, &gw, &config, None).unwrap();
        let ids: Vec<_> = records.iter().map(|r| r.item_id.as_str()).collect();
        let expected: Vec<_> = all.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn empty_input_is_an_error() {
        let gw = Gateway::new(BackendSpec::mock(BackendKind::MockGold)).unwrap();
        assert!(matches!(
            evaluate(&[], PromptMode::Implicit, &gw, &EvalConfig::default(), None),
            Err(EvalError::NoItems)
        ));
    }

    #[test]
    fn record_json_shape() {
        let record = EvalRecord {
            item_id: "x".into(),
            category: BiasCategory::new("race").unwrap(),
            mode: PromptMode::Implicit,
            permutation: vec![2, 0, 1],
            backend_id: "mock_gold".into(),
            raw_text: "A".into(),
            parsed: ParsedAnswer {
                outcome: AnswerOutcome::Symbol('A'),
                resolved: Some(GoldLabel::Stereotype),
            },
            from_cache: false,
            error: None,
        };
        let json = serde_json::to_string(&record).unwrap();
        assert!(json.contains(
            r#""parsed":{"outcome":{"kind":"symbol","symbol":"A"},"resolved":"stereotype"}"#
        ));
        let back: EvalRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, record);
    }
}
