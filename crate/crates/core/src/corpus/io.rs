//! JSONL file formats.
//!
//! Preference pairs, one object per line:
//!
//! ```text
//! {"prompt": [int], "chosen": [int], "rejected": [int],
//!  "chosen_labels": [0|1], "rejected_labels": [0|1],
//!  "types": ["object"|"position"|"number"]}
//! ```
//!
//! where label 1 marks a corrected token. Evaluation corpora:
//!
//! ```text
//! {"prompt": [int], "response": [int], "ground_truth_objects": [string], "scene": string}
//! ```
//!
//! optionally extended with `ground_truth_counts` and `ground_truth_layout`
//! so that number and position errors can be checked.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{HallucinationType, Layout, SampleRecord, TokenId};
use crate::ddpo::PreferencePair;
use crate::error::{Error, Result};
use crate::segdiff::{SegmentAnnotation, SegmentLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairLine {
    pub prompt: Vec<TokenId>,
    pub chosen: Vec<TokenId>,
    pub rejected: Vec<TokenId>,
    pub chosen_labels: Vec<u8>,
    pub rejected_labels: Vec<u8>,
    #[serde(default)]
    pub types: Vec<HallucinationType>,
}

impl PairLine {
    pub fn from_pair(pair: &PreferencePair) -> Self {
        let flags = |a: &SegmentAnnotation| a.labels().iter().map(|l| l.flag()).collect();
        Self {
            prompt: pair.prompt.clone(),
            chosen: pair.chosen.tokens().to_vec(),
            rejected: pair.rejected.tokens().to_vec(),
            chosen_labels: flags(&pair.chosen),
            rejected_labels: flags(&pair.rejected),
            types: pair.types.clone(),
        }
    }

    fn into_pair(self, line: usize) -> Result<PreferencePair> {
        let annotate = |side: &str, tokens: Vec<TokenId>, flags: Vec<u8>| {
            if tokens.is_empty() {
                return Err(Error::Schema {
                    line,
                    message: format!("{side} response is empty"),
                });
            }
            if tokens.len() != flags.len() {
                return Err(Error::Schema {
                    line,
                    message: format!(
                        "{side}_labels has {} entries for {} tokens",
                        flags.len(),
                        tokens.len()
                    ),
                });
            }
            let labels = flags
                .iter()
                .map(|&f| {
                    SegmentLabel::from_flag(f).ok_or_else(|| Error::Schema {
                        line,
                        message: format!("{side}_labels entry {f} is not 0 or 1"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            SegmentAnnotation::new(tokens, labels).map_err(|e| Error::Schema {
                line,
                message: e.to_string(),
            })
        };
        Ok(PreferencePair {
            prompt: self.prompt,
            chosen: annotate("chosen", self.chosen, self.chosen_labels)?,
            rejected: annotate("rejected", self.rejected, self.rejected_labels)?,
            types: self.types,
        })
    }
}

/// One evaluation-corpus line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub ground_truth_objects: Vec<String>,
    pub scene: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ground_truth_counts: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_layout: Option<Layout>,
}

impl EvalRecord {
    /// Evaluation line for `record` with the given response.
    pub fn from_sample(record: &SampleRecord, response: Vec<TokenId>) -> Self {
        Self {
            prompt: record.prompt.clone(),
            response,
            ground_truth_objects: record.ground_truth_objects.iter().cloned().collect(),
            scene: record.scene.clone(),
            ground_truth_counts: record.ground_truth_counts.clone(),
            ground_truth_layout: record.ground_truth_layout.clone(),
        }
    }
}

/// Parses JSONL, skipping blank lines; errors carry 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, value));
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

pub fn parse_pairs(reader: impl BufRead) -> Result<Vec<PreferencePair>> {
    read_jsonl::<PairLine>(reader)?
        .into_iter()
        .map(|(line, p)| p.into_pair(line))
        .collect()
}

/// Loads and validates a preference-pair file.
pub fn load_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    parse_pairs(open(path)?)
}

pub fn write_pairs(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    let lines: Vec<PairLine> = pairs.iter().map(PairLine::from_pair).collect();
    write_jsonl(path, &lines)
}

pub fn load_eval_corpus(path: &Path) -> Result<Vec<EvalRecord>> {
    Ok(read_jsonl(open(path)?)?.into_iter().map(|(_, r)| r).collect())
}

pub fn write_eval_corpus(path: &Path, records: &[EvalRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn load_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    Ok(read_jsonl(open(path)?)?.into_iter().map(|(_, r)| r).collect())
}

pub fn write_samples(path: &Path, records: &[SampleRecord]) -> Result<()> {
    write_jsonl(path, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"{"prompt":[1,5],"chosen":[7,8,2],"rejected":[7,9,2],"chosen_labels":[0,1,0],"rejected_labels":[0,1,0],"types":["object"]}"#;

    #[test]
    fn empty_input_gives_no_pairs() {
        assert!(parse_pairs("".as_bytes()).unwrap().is_empty());
        assert!(parse_pairs("\n  \n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn one_valid_line() {
        let pairs = parse_pairs(VALID.as_bytes()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].chosen.counts().corrected_tokens, 1);
        assert_eq!(pairs[0].types, vec![HallucinationType::Object]);
    }

    #[test]
    fn label_mismatch_names_the_line() {
        let bad = r#"{"prompt":[1],"chosen":[7,8],"rejected":[7],"chosen_labels":[0],"rejected_labels":[0],"types":[]}"#;
        let text = format!("{VALID}\n\n{bad}\n");
        match parse_pairs(text.as_bytes()) {
            Err(Error::Schema { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("chosen_labels"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let text = format!("{VALID}\n{{\"prompt\": [1,\n");
        assert!(matches!(
            parse_pairs(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn bad_label_value_and_unknown_field() {
        let bad = VALID.replace("\"chosen_labels\":[0,1,0]", "\"chosen_labels\":[0,2,0]");
        assert!(matches!(parse_pairs(bad.as_bytes()), Err(Error::Schema { line: 1, .. })));
        let extra = VALID.replace("\"types\"", "\"extra\":1,\"types\"");
        assert!(matches!(parse_pairs(extra.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn pairs_file_round_trip() {
        let pairs = parse_pairs(VALID.as_bytes()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        write_pairs(&path, &pairs).unwrap();
        assert_eq!(load_pairs(&path).unwrap(), pairs);
    }

    #[test]
    fn eval_record_optional_fields() {
        let line = r#"{"prompt":[1],"response":[4,2],"ground_truth_objects":["cup"],"scene":"kitchen"}"#;
        let recs: Vec<(usize, EvalRecord)> = read_jsonl(line.as_bytes()).unwrap();
        assert!(recs[0].1.ground_truth_counts.is_empty());
        assert_eq!(serde_json::to_string(&recs[0].1).unwrap(), line);
    }
}
