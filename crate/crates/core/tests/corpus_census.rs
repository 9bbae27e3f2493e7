mod common;

use std::collections::BTreeMap;

use serde_json::Value;
use stereo_audit::corpus::{
    parse_crowspairs, parse_stereoset, read_items, write_items, GoldLabel, Portion,
};

use common::{CROWSPAIRS, STEREOSET_DEV};

/// Counts entries per category straight from the raw JSON, without the loader.
fn raw_stereoset_census(text: &str, section: &str) -> BTreeMap<String, usize> {
    let doc: Value = serde_json::from_str(text).unwrap();
    let mut census = BTreeMap::new();
    for entry in doc["data"][section].as_array().unwrap() {
        *census
            .entry(entry["bias_type"].as_str().unwrap().to_string())
            .or_default() += 1;
    }
    census
}

#[test]
fn stereoset_census_matches_raw_file() {
    let text = common::stereoset_json(&STEREOSET_DEV, 1);
    let loaded = parse_stereoset(text.as_bytes(), "dev.json", Portion::Intersentence).unwrap();
    assert!(loaded.rejects.is_empty());
    let mut census: BTreeMap<String, usize> = BTreeMap::new();
    for item in &loaded.items {
        *census.entry(item.category.to_string()).or_default() += 1;
    }
    assert_eq!(census, raw_stereoset_census(&text, "intersentence"));
    assert_eq!(loaded.items.len(), 2123);

    let both = parse_stereoset(text.as_bytes(), "dev.json", Portion::Both).unwrap();
    assert_eq!(both.items.len(), 2123 + 5);
}

#[test]
fn stereoset_gold_labels_follow_raw_sentences() {
    let text = common::stereoset_json(&[("race", 50)], 3);
    let doc: Value = serde_json::from_str(&text).unwrap();
    let loaded = parse_stereoset(text.as_bytes(), "dev.json", Portion::Intersentence).unwrap();
    for (entry, item) in doc["data"]["intersentence"].as_array().unwrap().iter().zip(&loaded.items) {
        for (raw, choice) in entry["sentences"].as_array().unwrap().iter().zip(&item.choices) {
            assert_eq!(raw["sentence"].as_str().unwrap(), choice.text);
            assert_eq!(GoldLabel::parse(raw["gold_label"].as_str().unwrap()), Some(choice.gold));
        }
    }
}

#[test]
fn crowspairs_census_matches_raw_file() {
    let text = common::crowspairs_csv(&CROWSPAIRS, 1);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut raw: BTreeMap<String, usize> = BTreeMap::new();
    let mut anti_rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.unwrap();
        let bias = match &row[4] {
            "race-color" => "race",
            other => other,
        };
        *raw.entry(bias.to_string()).or_default() += 1;
        if &row[3] == "antistereo" {
            anti_rows.push((i, row[2].to_string()));
        }
    }

    let loaded = parse_crowspairs(text.as_bytes(), "crows.csv").unwrap();
    let mut census: BTreeMap<String, usize> = BTreeMap::new();
    for item in &loaded.items {
        assert_eq!(item.choices.len(), 2);
        *census.entry(item.category.to_string()).or_default() += 1;
    }
    assert_eq!(census, raw);
    assert_eq!(loaded.items.len(), 1508);

    assert!(!anti_rows.is_empty());
    for (i, sent_less) in anti_rows {
        let item = &loaded.items[i];
        let stereo = item.index_of(GoldLabel::Stereotype).unwrap();
        assert_eq!(item.choices[stereo].text, sent_less);
    }
}

#[test]
fn normalized_file_round_trip() {
    let text = common::stereoset_json(&[("gender", 30), ("religion", 12)], 9);
    let items = parse_stereoset(text.as_bytes(), "dev.json", Portion::Both)
        .unwrap()
        .items;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("items.jsonl");
    write_items(&path, &items).unwrap();
    assert_eq!(read_items(&path).unwrap(), items);
}

#[test]
fn malformed_entries_are_reported_not_fatal() {
    let text = r#"{"data": {"intersentence": [
        {"id": "ok", "bias_type": "gender", "context": "c",
         "sentences": [
            {"sentence": "s1", "gold_label": "stereotype"},
            {"sentence": "s2", "gold_label": "anti-stereotype"},
            {"sentence": "s3", "gold_label": "unrelated"}]},
        {"id": "two", "bias_type": "gender", "context": "c",
         "sentences": [
            {"sentence": "s1", "gold_label": "stereotype"},
            {"sentence": "s2", "gold_label": "anti-stereotype"}]}
    ]}}"#;
    let loaded = parse_stereoset(text.as_bytes(), "dev.json", Portion::Intersentence).unwrap();
    assert_eq!(loaded.items.len(), 1);
    assert_eq!(loaded.rejects.len(), 1);
    assert!(loaded.rejects[0].source_location.contains("intersentence[1]"));
}
