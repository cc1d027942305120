//! JSONL dataset ingestion.
//!
//! One JSON object per line, schema:
//! `{"id", "query", "environment"?, "tools": [{"name", "parameters":
//! [{"name", "type", "required", "description"?}]}], "calls":
//! [{"name", "arguments": {k: v}}], "history"?: [call]}`.
//! Unknown fields are preserved through a load/store cycle.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::decompose::{EvalEntry, RawSample};
use crate::harness::HarnessError;

fn classify_line_error(line: usize, err: &serde_json::Error) -> HarnessError {
    let message = err.to_string();
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            return HarnessError::MissingField {
                line,
                field: field.to_string(),
            };
        }
    }
    HarnessError::ParseError { line }
}

/// Parses a JSONL dataset. Line numbers in errors are 1-based; blank
/// lines are not allowed mid-file but a trailing newline is fine.
pub fn parse_dataset(text: &str) -> Result<Vec<RawSample>, HarnessError> {
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample: RawSample =
            serde_json::from_str(line).map_err(|e| classify_line_error(line_no, &e))?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn load_dataset(path: &Path) -> Result<Vec<RawSample>, HarnessError> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn save_dataset(samples: &[RawSample], path: &Path) -> Result<(), HarnessError> {
    let mut file = fs::File::create(path)?;
    for sample in samples {
        writeln!(file, "{}", serde_json::to_string(sample)?)?;
    }
    Ok(())
}

/// Writes decomposed entries as JSONL, one entry per line.
pub fn save_entries(entries: &[EvalEntry], path: &Path) -> Result<(), HarnessError> {
    let mut file = fs::File::create(path)?;
    for entry in entries {
        writeln!(file, "{}", serde_json::to_string(entry)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = include_str!("../../fixtures/mobile_mini.jsonl");

    #[test]
    fn bundled_fixture_has_expected_shape() {
        let samples = parse_dataset(FIXTURE).unwrap();
        assert_eq!(samples.len(), 24);
        let parallel = samples.iter().filter(|s| s.calls.len() >= 2).count();
        assert_eq!(parallel, 6);
        for sample in &samples {
            assert!(!sample.tools.is_empty(), "sample {} has no tools", sample.id);
            assert!(!sample.calls.is_empty(), "sample {} has no calls", sample.id);
        }
    }

    #[test]
    fn empty_input_gives_empty_list() {
        assert!(parse_dataset("").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = concat!(
            r#"{"id":"a","query":"q","tools":[{"name":"t"}],"calls":[{"name":"t"}]}"#,
            "\n",
            r#"{"id":"b","query":"q","tools":[{"name":"t"}],"calls":[{"name":"t"}]}"#,
            "\n",
            "{not json}\n",
        );
        match parse_dataset(text) {
            Err(HarnessError::ParseError { line }) => assert_eq!(line, 3),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let text = r#"{"id":"a","tools":[],"calls":[]}"#;
        match parse_dataset(text) {
            Err(HarnessError::MissingField { line, field }) => {
                assert_eq!(line, 1);
                assert_eq!(field, "query");
            }
            other => panic!("expected MissingField, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_preserves_unknown_fields() {
        let line = r#"{"id":"a","query":"q","tools":[{"name":"t","parameters":[{"name":"p","required":true,"type":"string"}]}],"calls":[{"name":"t","arguments":{"p":"v"}}],"source_split":"dev","rank":3}"#;
        let samples = parse_dataset(line).unwrap();
        let back = serde_json::to_string(&samples[0]).unwrap();
        let original: serde_json::Value = serde_json::from_str(line).unwrap();
        let reserialized: serde_json::Value = serde_json::from_str(&back).unwrap();
        assert_eq!(original, reserialized);
    }

    #[test]
    fn file_round_trip() {
        let samples = parse_dataset(FIXTURE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("copy.jsonl");
        save_dataset(&samples, &path).unwrap();
        let reloaded = load_dataset(&path).unwrap();
        assert_eq!(samples, reloaded);
    }
}
