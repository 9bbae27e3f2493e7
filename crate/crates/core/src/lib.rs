//! Stereotype auditing for chat models with multiple-choice symbol binding.
//!
//! Pipeline: load corpora ([`corpus`]), build prompts ([`prompting`]), query a
//! backend ([`modelgate`]), score answers ([`evaluator`], [`metrics`]), mine
//! trigger words ([`lexicon`]) and prepare fine-tuning data ([`augment`]).
//! [`shell`] ties it together behind a CLI.

pub mod augment;
pub mod corpus;
pub mod evaluator;
pub mod lexicon;
pub mod metrics;
pub mod modelgate;
pub mod prompting;
pub mod shell;
