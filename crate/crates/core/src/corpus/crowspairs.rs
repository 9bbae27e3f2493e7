use std::path::Path;

use super::{
    BiasCategory, Choice, CorpusError, GoldLabel, ItemError, LoadOutcome, McsbItem, Reject, Source,
};

const REQUIRED_COLUMNS: [&str; 4] = ["sent_more", "sent_less", "stereo_antistereo", "bias_type"];

/// Maps a CrowS-Pairs `bias_type` value onto a category name.
pub fn map_crowspairs_bias_type(raw: &str) -> Option<&'static str> {
    Some(match raw.trim() {
        "race-color" | "race" => BiasCategory::RACE,
        "socioeconomic" => BiasCategory::SOCIOECONOMIC,
        "gender" => BiasCategory::GENDER,
        "disability" => BiasCategory::DISABILITY,
        "nationality" => BiasCategory::NATIONALITY,
        "sexual-orientation" => BiasCategory::SEXUAL_ORIENTATION,
        "physical-appearance" => BiasCategory::PHYSICAL_APPEARANCE,
        "religion" => BiasCategory::RELIGION,
        "age" => BiasCategory::AGE,
        _ => return None,
    })
}

pub fn load_crowspairs(path: &Path) -> Result<LoadOutcome, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_crowspairs(&bytes, &path.display().to_string())
}

/// Parses the published CrowS-Pairs CSV. Each row becomes a two-choice item
/// with no context; for `antistereo` rows the sentences swap roles so the
/// stereotypical sentence always carries `gold = stereotype`.
pub fn parse_crowspairs(bytes: &[u8], origin: &str) -> Result<LoadOutcome, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(bytes);
    let format_err = |offset: usize, message: String| CorpusError::Format {
        path: origin.to_string(),
        offset,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| format_err(0, e.to_string()))?
        .clone();
    let mut columns = [0usize; 4];
    for (slot, name) in columns.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| format_err(0, format!("missing column {name:?}")))?;
    }
    let [more_col, less_col, dir_col, bias_col] = columns;

    let mut out = LoadOutcome::default();
    for (row_index, record) in reader.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let offset = e.position().map(|p| p.byte() as usize).unwrap_or(0);
                return Err(format_err(offset, e.to_string()));
            }
        };
        let get = |col: usize| record.get(col).unwrap_or("").trim();
        let result = row_to_item(
            row_index,
            get(more_col),
            get(less_col),
            get(dir_col),
            get(bias_col),
        );
        match result {
            Ok(item) => out.items.push(item),
            Err(e) => out.rejects.push(Reject {
                source_location: format!("{origin}:row {row_index}"),
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

fn row_to_item(
    row_index: usize,
    sent_more: &str,
    sent_less: &str,
    direction: &str,
    bias_type: &str,
) -> Result<McsbItem, ItemError> {
    let (stereo, anti) = match direction {
        "stereo" => (sent_more, sent_less),
        "antistereo" => (sent_less, sent_more),
        other => return Err(ItemError::UnknownDirection(other.to_string())),
    };
    let category = map_crowspairs_bias_type(bias_type)
        .ok_or_else(|| ItemError::UnknownBiasType(bias_type.to_string()))?;
    McsbItem::new(
        format!("crowspairs:{row_index}"),
        Source::Crowspairs,
        BiasCategory::new(category)?,
        None,
        vec![
            Choice::new(stereo, GoldLabel::Stereotype),
            Choice::new(anti, GoldLabel::AntiStereotype),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
,sent_more,sent_less,stereo_antistereo,bias_type,annotations,anon_writer,anon_annotators
0,Old people forget everything.,Young people forget everything.,stereo,age,\"[['age']]\",a0,\"['a1']\"
1,Rich people are lazy.,Poor people are lazy.,antistereo,socioeconomic,[],a2,[]
2,X did it.,Y did it.,sideways,age,[],a3,[]
3,P is here.,Q is here.,stereo,weather,[],a4,[]
4,\"Black people, sadly.\",White people sadly.,stereo,race-color,[],a5,[]
";

    #[test]
    fn stereo_row_maps_directly() {
        let out = parse_crowspairs(SAMPLE.as_bytes(), "cp.csv").unwrap();
        let item = &out.items[0];
        assert_eq!(item.id, "crowspairs:0");
        assert_eq!(item.category.as_str(), "age");
        assert_eq!(item.context, None);
        assert_eq!(
            item.choices,
            vec![
                Choice::new("Old people forget everything.", GoldLabel::Stereotype),
                Choice::new("Young people forget everything.", GoldLabel::AntiStereotype),
            ]
        );
    }

    #[test]
    fn antistereo_row_is_reversed() {
        let out = parse_crowspairs(SAMPLE.as_bytes(), "cp.csv").unwrap();
        let item = &out.items[1];
        assert_eq!(item.id, "crowspairs:1");
        assert_eq!(
            item.choices[0],
            Choice::new("Poor people are lazy.", GoldLabel::Stereotype)
        );
        assert_eq!(item.choices[1].gold, GoldLabel::AntiStereotype);
    }

    #[test]
    fn unknown_values_are_rejected() {
        let out = parse_crowspairs(SAMPLE.as_bytes(), "cp.csv").unwrap();
        assert_eq!(out.items.len(), 3);
        assert_eq!(out.items[2].category.as_str(), "race");
        assert_eq!(out.rejects.len(), 2);
        assert_eq!(out.rejects[0].source_location, "cp.csv:row 2");
        assert!(out.rejects[0].reason.contains("sideways"));
        assert!(out.rejects[1].reason.contains("weather"));
    }

    #[test]
    fn missing_column_is_a_format_error() {
        let err =
            parse_crowspairs(b"sent_more,sent_less,bias_type\na,b,age\n", "x.csv").unwrap_err();
        assert!(err.to_string().contains("stereo_antistereo"));
    }
}
