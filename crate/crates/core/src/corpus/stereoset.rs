use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    byte_offset, BiasCategory, Choice, CorpusError, GoldLabel, ItemError, LoadOutcome, McsbItem,
    Reject, Source,
};

/// Which StereoSet task section to ingest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Portion {
    #[default]
    Intersentence,
    Intrasentence,
    Both,
}

impl Portion {
    fn sections(self) -> &'static [&'static str] {
        match self {
            Self::Intersentence => &["intersentence"],
            Self::Intrasentence => &["intrasentence"],
            Self::Both => &["intersentence", "intrasentence"],
        }
    }
}

impl FromStr for Portion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intersentence" => Ok(Self::Intersentence),
            "intrasentence" => Ok(Self::Intrasentence),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown StereoSet portion {other:?}")),
        }
    }
}

pub fn load_stereoset(path: &Path, portion: Portion) -> Result<LoadOutcome, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_stereoset(&bytes, &path.display().to_string(), portion)
}

/// Parses StereoSet's published JSON layout
/// (`{"data": {"intersentence": [...], "intrasentence": [...]}}`).
///
/// Entries that break the item invariants go to `rejects`; only a file that
/// is not JSON, or lacks the `data` object, is an error.
pub fn parse_stereoset(
    bytes: &[u8],
    origin: &str,
    portion: Portion,
) -> Result<LoadOutcome, CorpusError> {
    let root: Value = serde_json::from_slice(bytes).map_err(|e| CorpusError::Format {
        path: origin.to_string(),
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let structural = |message: &str| CorpusError::Format {
        path: origin.to_string(),
        offset: 0,
        message: message.to_string(),
    };
    let data = root
        .get("data")
        .and_then(Value::as_object)
        .ok_or_else(|| structural("missing top-level \"data\" object"))?;

    let mut out = LoadOutcome::default();
    for section in portion.sections() {
        let Some(entries) = data.get(*section) else {
            continue;
        };
        let entries = entries
            .as_array()
            .ok_or_else(|| structural(&format!("data.{section} is not a list")))?;
        for (index, entry) in entries.iter().enumerate() {
            match entry_to_item(entry, section) {
                Ok(item) => out.items.push(item),
                Err(reason) => out.rejects.push(Reject {
                    source_location: format!("{origin}:data.{section}[{index}]"),
                    reason,
                }),
            }
        }
    }
    Ok(out)
}

fn entry_to_item(entry: &Value, section: &str) -> Result<McsbItem, String> {
    let field = |name: &str| -> Result<&str, String> {
        entry
            .get(name)
            .and_then(Value::as_str)
            .ok_or_else(|| format!("missing string field {name:?}"))
    };
    let id = field("id")?;
    let bias_type = field("bias_type")?;
    let context = field("context")?;
    let category = BiasCategory::new(bias_type.trim()).map_err(|e| e.to_string())?;
    let sentences = entry
        .get("sentences")
        .and_then(Value::as_array)
        .ok_or_else(|| "missing \"sentences\" list".to_string())?;

    let mut choices = Vec::with_capacity(sentences.len());
    for (i, sentence) in sentences.iter().enumerate() {
        let text = sentence
            .get("sentence")
            .and_then(Value::as_str)
            .ok_or_else(|| format!("sentence {i} has no text"))?;
        let gold = match sentence.get("gold_label").and_then(Value::as_str) {
            None => return Err(ItemError::MissingLabel(i).to_string()),
            Some(raw) => GoldLabel::parse(raw)
                .ok_or_else(|| ItemError::UnknownLabel(raw.into()).to_string())?,
        };
        choices.push(Choice::new(text.trim(), gold));
    }
    if choices.len() != 3 {
        return Err(ItemError::ChoiceCount(choices.len()).to_string());
    }

    let context = context.trim();
    let context = (!context.is_empty()).then(|| context.to_string());
    McsbItem::new(
        format!("stereoset:{section}:{id}"),
        Source::Stereoset,
        category,
        context,
        choices,
    )
    .map_err(|e| e.to_string())
}
